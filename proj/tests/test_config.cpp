#include <catch2/catch_amalgamated.hpp>

#include "nvem/config.hpp"

#include <sstream>

using namespace nvem;

TEST_CASE("kv config parses values, comments, and whitespace") {
  std::istringstream in(
      "# comment line\n"
      "train.lr = 0.001  # trailing comment\n"
      "model.fusion = lang\n"
      "\n"
      "seeds = 4,5\n");
  KvConfig kv = KvConfig::parse(in);
  ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
  CHECK(cfg.train.lr == Catch::Approx(0.001));
  CHECK(cfg.model.fusion == FusionMode::Lang);
  REQUIRE(cfg.seeds.size() == 2);
  CHECK(cfg.seeds[0] == 4);
  CHECK(cfg.seeds[1] == 5);
}

TEST_CASE("unknown config keys are rejected") {
  std::istringstream in("train.learning_rate = 0.01\n");  // typo
  KvConfig kv = KvConfig::parse(in);
  CHECK_THROWS_AS(ExperimentConfig::from_kv(kv), std::runtime_error);
}

TEST_CASE("malformed config lines carry their line number") {
  std::istringstream in("train.lr = 0.001\nnot a key value\n");
  try {
    KvConfig::parse(in);
    FAIL("expected parse error");
  } catch (const std::runtime_error& ex) {
    CHECK(std::string(ex.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("module mask string maps onto module flags") {
  std::istringstream in("model.modules = action,subject\n");
  ExperimentConfig cfg = ExperimentConfig::from_kv(KvConfig::parse(in));
  CHECK(cfg.model.use_action);
  CHECK(cfg.model.use_subject);
  CHECK(!cfg.model.use_reference);
}

TEST_CASE("documented defaults round-trip through the parser") {
  std::istringstream in(documented_defaults());
  ExperimentConfig cfg = ExperimentConfig::from_kv(KvConfig::parse(in));
  ExperimentConfig fresh = ExperimentConfig::from_kv(KvConfig{});
  CHECK(cfg.data.world.nodes == fresh.data.world.nodes);
  CHECK(cfg.train.iterations == fresh.train.iterations);
  CHECK(cfg.train.lr == fresh.train.lr);
  CHECK(cfg.model.hidden_dim == fresh.model.hidden_dim);
  CHECK(cfg.data.train_episodes == fresh.data.train_episodes);
}

TEST_CASE("param seed derives from the training seed unless pinned") {
  std::istringstream in1("train.seed = 9\n");
  ExperimentConfig a = ExperimentConfig::from_kv(KvConfig::parse(in1));
  CHECK(a.model.param_seed == mix_seed(9, fnv1a("params")));
  std::istringstream in2("train.seed = 9\nmodel.param_seed = 123\n");
  ExperimentConfig b = ExperimentConfig::from_kv(KvConfig::parse(in2));
  CHECK(b.model.param_seed == 123);
}
