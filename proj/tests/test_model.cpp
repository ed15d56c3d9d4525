#include <catch2/catch_amalgamated.hpp>

#include "nvem/model.hpp"
#include "nvem/worldgen.hpp"
#include "support/fd_check.hpp"

#include <random>

using namespace nvem;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

ModelConfig tiny_config(int vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.word_dim = 6;
  cfg.hidden_dim = 16;
  cfg.feature_dim = 8;
  cfg.object_vocab = 10;
  cfg.object_dim = 6;
  cfg.neighbors = 4;
  cfg.objects = 3;
  return cfg;
}

// Hand-built observation with K movement candidates plus STOP.
Observation hand_obs(int F, int I, int J, int K, std::uint64_t seed) {
  Rng rng(seed);
  Observation obs;
  obs.node = 0;
  obs.views.resize(F + kOrientationDim, kNumViews);
  for (int s = 0; s < kNumViews; ++s) {
    for (int f = 0; f < F; ++f) obs.views(f, s) = rng.normal();
    Orientation o = slot_orientation(s);
    obs.views.block(F, s, kOrientationDim, 1) = embed_orientation(o);
  }
  for (int k = 0; k < K; ++k) {
    Candidate c;
    c.target_node = k + 1;
    double heading = rng.uniform(0.0, 2.0 * kPi);
    c.abs_orientation = Orientation::canonical(heading, 0.0);
    c.rel = {wrap_signed(heading), 0.0};
    c.owning_view = owning_slot(c.abs_orientation);
    c.neighbor_slots = I == 1 ? std::vector<int>{c.owning_view}
                              : neighbor_views(c.owning_view, I);
    c.neighbor_features.resize(F, I);
    c.neighbor_ori_embed.resize(kOrientationDim, I);
    c.object_delta_embed.resize(kOrientationDim, I);
    c.object_labels = Eigen::MatrixXi::Zero(I, J);
    c.object_mask.assign(static_cast<std::size_t>(I * J), 0);
    for (int i = 0; i < I; ++i) {
      for (int f = 0; f < F; ++f) c.neighbor_features(f, i) = rng.normal();
      Orientation no = slot_orientation(c.neighbor_slots[static_cast<std::size_t>(i)]);
      c.neighbor_ori_embed.col(i) = embed_orientation(no);
      c.object_delta_embed.col(i) =
          embed_delta(relative_orientation(no, c.abs_orientation));
      for (int j = 0; j < J; ++j) {
        if (rng.bernoulli(0.7)) {
          c.object_labels(i, j) = 1 + rng.uniform_int(10);
          c.object_mask[static_cast<std::size_t>(i * J + j)] = 1;
        }
      }
    }
    c.composed.resize(F + kOrientationDim);
    for (int f = 0; f < F; ++f) c.composed[f] = rng.normal();
    c.composed.tail(kOrientationDim) = embed_angles(c.rel.heading, 0.0);
    obs.candidates.push_back(std::move(c));
  }
  Candidate stop;
  stop.composed = Eigen::VectorXd::Zero(F + kOrientationDim);
  obs.candidates.push_back(std::move(stop));
  return obs;
}

std::vector<int> tiny_tokens() { return {3, 8, 5, 11, 2}; }

}  // namespace

TEST_CASE("step output satisfies the normalization invariants") {
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(21);
  NvemModel model(cfg, store);
  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 3, 77);

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto st = model.initial_state(t, enc);
  auto out = model.step(t, obs, enc, st);

  CHECK(t.val(out.P).sum() == Catch::Approx(1.0).epsilon(1e-9));
  CHECK(t.val(out.P).minCoeff() >= 0.0);
  CHECK(t.val(out.weights).sum() == Catch::Approx(1.0).epsilon(1e-9));
  for (const auto& a : {out.bundle.attn_action, out.bundle.attn_subject,
                        out.bundle.attn_reference})
    CHECK(t.val(a).sum() == Catch::Approx(1.0).epsilon(1e-9));
  for (const auto& a : out.subject_affinity)
    CHECK(t.val(a).sum() == Catch::Approx(1.0).epsilon(1e-9));
  for (std::size_t k = 0; k < out.object_attn.size(); ++k) {
    const auto& m = obs.candidates[k].object_mask;
    const Mat& w = t.val(out.object_attn[k]);
    bool any = false;
    for (auto b : m) any |= b != 0;
    if (any) CHECK(w.sum() == Catch::Approx(1.0).epsilon(1e-9));
    for (long i = 0; i < w.rows(); ++i)
      if (!m[static_cast<std::size_t>(i)]) CHECK(w(i, 0) == 0.0);
  }

  // t = 0: zero query makes the view attention exactly uniform
  for (int s = 0; s < kNumViews; ++s)
    CHECK(t.val(out.view_attn)(s, 0) == Catch::Approx(1.0 / 36.0).epsilon(1e-9));

  // global state is the average of the specialized states
  Mat avg = (t.val(out.bundle.h_action) + t.val(out.bundle.h_subject) +
             t.val(out.bundle.h_reference)) /
            3.0;
  CHECK((t.val(out.next.h_tilde) - avg).norm() < 1e-12);

  // determinism
  auto out2 = model.step(t, obs, enc, st);
  CHECK(t.val(out.P) == t.val(out2.P));
}

TEST_CASE("identical attention parameters make the three phrase heads agree") {
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(22);
  NvemModel model(cfg, store);
  store.at("attn.phrase.subject.W").value = store.at("attn.phrase.action.W").value;
  store.at("attn.phrase.reference.W").value = store.at("attn.phrase.action.W").value;
  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 5);

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto st = model.initial_state(t, enc);
  auto out = model.step(t, obs, enc, st);
  CHECK((t.val(out.bundle.u_action) - t.val(out.bundle.u_subject)).norm() < 1e-12);
  CHECK((t.val(out.bundle.u_action) - t.val(out.bundle.u_reference)).norm() < 1e-12);
}

TEST_CASE("single-token instruction pins every phrase attention to it") {
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(23);
  NvemModel model(cfg, store);
  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 6);

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, {7});
  auto st = model.initial_state(t, enc);
  auto out = model.step(t, obs, enc, st);
  CHECK(t.val(out.bundle.attn_action)(0, 0) == 1.0);
  CHECK(t.val(out.bundle.attn_subject)(0, 0) == 1.0);
  CHECK(t.val(out.bundle.attn_reference)(0, 0) == 1.0);
  CHECK((t.val(out.bundle.u_action) - t.val(enc.states)).norm() < 1e-12);
}

TEST_CASE("degenerate module cases") {
  // two candidates with identical orientation get identical action logits
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(24);
  NvemModel model(cfg, store);
  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 9);
  obs.candidates[1].composed.tail(kOrientationDim) =
      obs.candidates[0].composed.tail(kOrientationDim);

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto st = model.initial_state(t, enc);
  auto out = model.step(t, obs, enc, st);
  CHECK(t.val(out.tau_action)(0, 0) ==
        Catch::Approx(t.val(out.tau_action)(1, 0)).epsilon(1e-12));
  // zero-init biases: the STOP action representation is tanh(0) = 0
  CHECK(t.val(out.tau_action)(2, 0) == 0.0);

  // equal neighbor orientations -> uniform subject affinity
  Observation eq = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 10);
  for (int i = 0; i < cfg.neighbors; ++i)
    eq.candidates[0].neighbor_ori_embed.col(i) =
        eq.candidates[0].neighbor_ori_embed.col(0);
  auto out2 = model.step(t, eq, enc, st);
  for (int i = 0; i < cfg.neighbors; ++i)
    CHECK(t.val(out2.subject_affinity[0])(i, 0) ==
          Catch::Approx(0.25).epsilon(1e-9));

  // candidate with every object masked: reference features are exactly zero
  Observation masked = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 11);
  std::fill(masked.candidates[0].object_mask.begin(),
            masked.candidates[0].object_mask.end(), 0);
  auto out3 = model.step(t, masked, enc, st);
  CHECK(t.val(out3.tau_reference)(0, 0) == 0.0);
  CHECK(t.val(out3.object_attn[0]).norm() == 0.0);
  CHECK(std::isfinite(t.val(out3.P).sum()));
}

TEST_CASE("single-view fusion reduces the neighborhood to the owning view") {
  ModelConfig cfg = tiny_config(16);
  cfg.fusion = FusionMode::Single;
  cfg.neighbors = 1;
  nn::ParamStore store(25);
  NvemModel model(cfg, store);
  Observation obs = hand_obs(cfg.feature_dim, 1, cfg.objects, 2, 12);

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto st = model.initial_state(t, enc);
  auto out = model.step(t, obs, enc, st);
  REQUIRE(out.subject_affinity.size() == 2);
  CHECK(t.val(out.subject_affinity[0]).size() == 1);
  CHECK(t.val(out.subject_affinity[0])(0, 0) == 1.0);
}

TEST_CASE("model config invariants are enforced") {
  nn::ParamStore store(26), store2(26);
  ModelConfig bad = tiny_config(16);
  bad.use_action = bad.use_subject = bad.use_reference = false;
  CHECK_THROWS_AS(NvemModel(bad, store), std::invalid_argument);
  ModelConfig bad2 = tiny_config(16);
  bad2.fusion = FusionMode::Single;  // requires neighbors == 1
  CHECK_THROWS_AS(NvemModel(bad2, store2), std::invalid_argument);
}

TEST_CASE("permuting the candidate list permutes P identically") {
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(27);
  NvemModel model(cfg, store);
  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 4, 13);

  Observation perm = obs;
  std::vector<std::size_t> order = {2, 0, 3, 1};
  for (std::size_t i = 0; i < order.size(); ++i)
    perm.candidates[i] = obs.candidates[order[i]];

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto st = model.initial_state(t, enc);
  auto a = model.step(t, obs, enc, st);
  auto b = model.step(t, perm, enc, st);
  for (std::size_t i = 0; i < order.size(); ++i)
    CHECK(t.val(b.P)(static_cast<long>(i), 0) ==
          Catch::Approx(t.val(a.P)(static_cast<long>(order[i]), 0)).epsilon(1e-12));
  CHECK(t.val(b.P)(4, 0) == Catch::Approx(t.val(a.P)(4, 0)).epsilon(1e-12));
}

TEST_CASE("permuting objects within a neighbor leaves the reference features unchanged") {
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(28);
  NvemModel model(cfg, store);
  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 14);

  Observation perm = obs;
  auto& c = perm.candidates[0];
  for (int i = 0; i < cfg.neighbors; ++i) {
    std::swap(c.object_labels(i, 0), c.object_labels(i, 2));
    std::swap(c.object_mask[static_cast<std::size_t>(i * cfg.objects + 0)],
              c.object_mask[static_cast<std::size_t>(i * cfg.objects + 2)]);
  }

  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto st = model.initial_state(t, enc);
  auto a = model.step(t, obs, enc, st);
  auto b = model.step(t, perm, enc, st);
  CHECK((t.val(a.P) - t.val(b.P)).norm() < 1e-12);
  CHECK(t.val(a.tau_reference)(0, 0) ==
        Catch::Approx(t.val(b.tau_reference)(0, 0)).epsilon(1e-12));
}

TEST_CASE("select_action argmax with lowest-index tie break") {
  Eigen::VectorXd p(3);
  p << 0.7, 0.2, 0.1;
  CHECK(NvemModel::select_action(p) == 0);
  Eigen::VectorXd q(2);
  q << 0.5, 0.5;
  CHECK(NvemModel::select_action(q) == 0);
  Eigen::VectorXd r(3);
  r << 0.1, 0.1, 0.8;
  CHECK(NvemModel::select_action(r) == 2);
}

TEST_CASE("structural ablation: no-reference model equals the reference-muted full model") {
  ModelConfig full_cfg = tiny_config(16);
  ModelConfig noref_cfg = full_cfg;
  noref_cfg.use_reference = false;

  nn::ParamStore full_store(31), noref_store(31);  // same parameter seed
  NvemModel full(full_cfg, full_store);
  NvemModel noref(noref_cfg, noref_store);

  // name-seeded init: shared parameters are identical without copying
  CHECK(full_store.at("subject.q.W").value == noref_store.at("subject.q.W").value);
  CHECK(full_store.at("integrator.action.W").value ==
        noref_store.at("integrator.action.W").value);

  Observation obs = hand_obs(full_cfg.feature_dim, full_cfg.neighbors,
                             full_cfg.objects, 3, 15);
  std::vector<int> tokens = tiny_tokens();

  Tape t;
  full.begin(t);
  auto enc_f = full.encode(t, tokens);
  auto st_f = full.initial_state(t, enc_f);
  auto out_f = full.step(t, obs, enc_f, st_f);

  Tape t2;
  noref.begin(t2);
  auto enc_n = noref.encode(t2, tokens);
  auto st_n = noref.initial_state(t2, enc_n);
  auto out_n = noref.step(t2, obs, enc_n, st_n);

  // independent recomputation: mute the reference channel of the full model
  // (tau_r zeroed, its integrator weight removed from the softmax)
  Eigen::VectorXd wl = t.val(out_f.weight_logits).col(0);  // a, s, r
  Eigen::Vector2d two = {wl[0], wl[1]};
  Eigen::Vector2d w = (two.array() - two.maxCoeff()).exp();
  w /= w.sum();
  Eigen::VectorXd combined = w[0] * t.val(out_f.tau_action).col(0) +
                             w[1] * t.val(out_f.tau_subject).col(0);
  Eigen::VectorXd expect = (combined.array() - combined.maxCoeff()).exp();
  expect /= expect.sum();

  const Mat& got = t2.val(out_n.P);
  REQUIRE(got.rows() == expect.size());
  for (long i = 0; i < expect.size(); ++i)
    CHECK(std::abs(got(i, 0) - expect[i]) <= 1e-9);
}

TEST_CASE("checkpoints round-trip the config and parameters") {
  ModelConfig cfg = tiny_config(16);
  nn::ParamStore store(33);
  NvemModel model(cfg, store);
  std::string path = "/tmp/nvem_test_ckpt.json";
  save_checkpoint(path, cfg, store);
  LoadedModel lm = load_checkpoint(path);
  CHECK(lm.config.hidden_dim == cfg.hidden_dim);
  CHECK(lm.config.fusion == cfg.fusion);
  CHECK(lm.store->at("dec.W_ih").value == store.at("dec.W_ih").value);

  Observation obs = hand_obs(cfg.feature_dim, cfg.neighbors, cfg.objects, 2, 16);
  Tape t;
  model.begin(t);
  auto enc = model.encode(t, tiny_tokens());
  auto out = model.step(t, obs, enc, model.initial_state(t, enc));
  Tape t2;
  lm.model->begin(t2);
  auto enc2 = lm.model->encode(t2, tiny_tokens());
  auto out2 = lm.model->step(t2, obs, enc2, lm.model->initial_state(t2, enc2));
  CHECK(t.val(out.P) == t2.val(out2.P));

  // a checkpoint from a mismatching architecture is rejected
  ModelConfig other = cfg;
  other.hidden_dim = 32;
  nlohmann::json j;
  {
    std::ifstream in(path);
    in >> j;
  }
  j["config"] = other.to_json();
  std::string bad = "/tmp/nvem_test_ckpt_bad.json";
  {
    std::ofstream out_file(bad);
    out_file << j.dump();
  }
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  std::remove(path.c_str());
  std::remove(bad.c_str());
}

TEST_CASE("end-to-end gradients match finite differences on a 2-step prefix") {
  DataConfig dc;
  dc.world.nodes = 10;
  dc.world.feature_dim = 8;
  dc.world.scene_classes = 8;
  dc.world.object_vocab = 10;
  dc.world.distractor_fraction = 0.2;
  dc.world.competitor_fraction = 0.1;
  dc.train_worlds = 1;
  dc.unseen_worlds = 1;
  dc.train_episodes = 2;
  dc.val_seen_episodes = 1;
  dc.val_unseen_episodes = 1;
  dc.val_distractor_episodes = 1;
  dc.episode.hops_min = 2;
  dc.episode.hops_max = 4;
  Dataset data = build_dataset(dc);
  const Episode& ep = data.episodes.front();
  const NavGraph& g = data.world(ep.world_id);

  ModelConfig cfg = tiny_config(data.vocab.size());
  cfg.feature_dim = 8;
  cfg.object_vocab = 10;
  nn::ParamStore store(35);
  NvemModel model(cfg, store);

  // frozen 2-step teacher-forced prefix; loss sums -log P(teacher)
  auto eval = [&](bool grad) {
    Tape t;
    model.begin(t);
    auto enc = model.encode(t, ep.tokens);
    auto st = model.initial_state(t, enc);
    Var loss;
    double heading = 0.0;
    for (int step = 0; step < 2; ++step) {
      int u = ep.gold_path[static_cast<std::size_t>(step)];
      int next = ep.gold_path[static_cast<std::size_t>(step) + 1];
      Observation obs = observe(g, u, heading, cfg.obs());
      auto out = model.step(t, obs, enc, st);
      int teacher = -1;
      for (std::size_t k = 0; k < obs.candidates.size(); ++k)
        if (obs.candidates[k].target_node == next) teacher = static_cast<int>(k);
      REQUIRE(teacher >= 0);
      // value head folded in so its parameters get gradients too
      Var term = t.add(t.neg(t.pick(out.logP, teacher)), t.square(out.value));
      loss = step == 0 ? term : t.add(loss, term);
      st = out.next;
      st.a_prev = model.action_embedding(
          t, obs.candidates[static_cast<std::size_t>(teacher)]);
      heading = g.heading_to(u, next);
    }
    if (grad) t.backward(loss);
    return t.val(loss)(0, 0);
  };

  store.zero_grad();
  eval(true);
  int groups = 0;
  store.for_each([&](nn::Parameter& p) {
    double err = nvem::test::fd_max_rel_err(
        p.value, p.grad, [&] { return eval(false); }, 1e-5, 8,
        fnv1a(p.name));
    INFO(p.name);
    CHECK(err <= 1e-4);
    ++groups;
  });
  CHECK(groups > 25);
}
