#pragma once

// Flat key=value experiment configuration. Every key has a documented
// default; parsing rejects unknown keys so typos fail loudly.

#include "nvem/model.hpp"
#include "nvem/training.hpp"
#include "nvem/worldgen.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace nvem {

class KvConfig {
 public:
  static KvConfig parse(std::istream& in) {
    KvConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = line.substr(0, line.find('#'));
      auto notspace = [](unsigned char c) { return !std::isspace(c); };
      s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
      s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
      if (s.empty()) continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": expected key = value");
      std::string key = s.substr(0, eq);
      std::string value = s.substr(eq + 1);
      key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
      value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
      if (key.empty())
        throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  static KvConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    touch(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }

  int get_int(const std::string& key, int dflt) const {
    touch(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : std::stoi(it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
    touch(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : std::stoull(it->second);
  }

  double get_double(const std::string& key, double dflt) const {
    touch(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : std::stod(it->second);
  }

  bool get_bool(const std::string& key, bool dflt) const {
    touch(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config key " + key + ": expected true/false");
  }

  // Call after reading a config into a struct: any key never consumed is a typo.
  void reject_unknown() const {
    for (const auto& [k, v] : kv_)
      if (!touched_.count(k)) throw std::runtime_error("unknown config key: " + k);
  }

 private:
  void touch(const std::string& key) const { touched_.insert(key); }

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> touched_;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;  // vocab/feature/object dims filled from the dataset
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string dataset_path = "dataset.jsonl";

  static ExperimentConfig from_kv(const KvConfig& kv) {
    ExperimentConfig c;
    auto& w = c.data.world;
    w.nodes = kv.get_int("world.nodes", w.nodes);
    w.mean_degree = kv.get_double("world.mean_degree", w.mean_degree);
    w.feature_dim = kv.get_int("world.feature_dim", w.feature_dim);
    w.scene_classes = kv.get_int("world.scene_classes", w.scene_classes);
    w.object_vocab = kv.get_int("world.object_vocab", w.object_vocab);
    w.distractor_fraction = kv.get_double("world.distractor_fraction", w.distractor_fraction);
    w.competitor_fraction = kv.get_double("world.competitor_fraction", w.competitor_fraction);
    w.feature_noise = kv.get_double("world.feature_noise", w.feature_noise);
    w.edge_min = kv.get_double("world.edge_min", w.edge_min);
    w.edge_max = kv.get_double("world.edge_max", w.edge_max);
    w.decoys_min = kv.get_int("world.decoys_min", w.decoys_min);
    w.decoys_max = kv.get_int("world.decoys_max", w.decoys_max);
    w.codebook_seed = kv.get_u64("world.codebook_seed", w.codebook_seed);

    auto& e = c.data.episode;
    e.hops_min = kv.get_int("episode.hops_min", e.hops_min);
    e.hops_max = kv.get_int("episode.hops_max", e.hops_max);
    e.concat_paths = kv.get_bool("episode.concat_paths", e.concat_paths);
    e.max_tokens = kv.get_int("episode.max_tokens", e.max_tokens);

    c.data.train_worlds = kv.get_int("data.train_worlds", c.data.train_worlds);
    c.data.unseen_worlds = kv.get_int("data.unseen_worlds", c.data.unseen_worlds);
    c.data.train_episodes = kv.get_int("data.train_episodes", c.data.train_episodes);
    c.data.val_seen_episodes = kv.get_int("data.val_seen_episodes", c.data.val_seen_episodes);
    c.data.val_unseen_episodes =
        kv.get_int("data.val_unseen_episodes", c.data.val_unseen_episodes);
    c.data.val_distractor_episodes =
        kv.get_int("data.val_distractor_episodes", c.data.val_distractor_episodes);
    c.data.seed = kv.get_u64("data.seed", c.data.seed);
    c.dataset_path = kv.get_string("data.path", c.dataset_path);

    auto& m = c.model;
    m.word_dim = kv.get_int("model.word_dim", m.word_dim);
    m.hidden_dim = kv.get_int("model.hidden_dim", m.hidden_dim);
    m.object_dim = kv.get_int("model.object_dim", m.object_dim);
    m.neighbors = kv.get_int("model.neighbors", m.neighbors);
    m.objects = kv.get_int("model.objects", m.objects);
    m.fusion = fusion_from_name(kv.get_string("model.fusion", fusion_name(m.fusion)));
    std::string modules = kv.get_string("model.modules", "action,subject,reference");
    m.use_action = modules.find("action") != std::string::npos;
    m.use_subject = modules.find("subject") != std::string::npos;
    m.use_reference = modules.find("reference") != std::string::npos;
    m.feature_dropout = kv.get_double("model.feature_dropout", m.feature_dropout);
    m.max_instr_len = kv.get_int("model.max_instr_len", m.max_instr_len);
    m.param_seed = kv.get_u64("model.param_seed", 0);  // 0: derive from train.seed

    auto& t = c.train;
    t.iterations = kv.get_int("train.iterations", t.iterations);
    t.batch = kv.get_int("train.batch", t.batch);
    t.lr = kv.get_double("train.lr", t.lr);
    t.il_weight = kv.get_double("train.il_weight", t.il_weight);
    t.rl = kv.get_bool("train.rl", t.rl);
    t.gamma = kv.get_double("train.gamma", t.gamma);
    t.rms_alpha = kv.get_double("train.rms_alpha", t.rms_alpha);
    t.rms_eps = kv.get_double("train.rms_eps", t.rms_eps);
    t.clip_norm = kv.get_double("train.clip_norm", t.clip_norm);
    t.goal_reward = kv.get_double("train.goal_reward", t.goal_reward);
    t.shaping_reward = kv.get_double("train.shaping_reward", t.shaping_reward);
    t.fidelity_coef = kv.get_double("train.fidelity_coef", t.fidelity_coef);
    t.value_loss_coef = kv.get_double("train.value_loss_coef", t.value_loss_coef);
    t.success_threshold = kv.get_double("train.success_threshold", t.success_threshold);
    t.max_steps = kv.get_int("train.max_steps", t.max_steps);
    t.val_every = kv.get_int("train.val_every", t.val_every);
    t.val_episodes = kv.get_int("train.val_episodes", t.val_episodes);
    t.log_every = kv.get_int("train.log_every", t.log_every);
    t.seed = kv.get_u64("train.seed", t.seed);

    std::string seeds = kv.get_string("seeds", "1,2,3");
    c.seeds.clear();
    std::istringstream ss(seeds);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) c.seeds.push_back(std::stoull(tok));
    if (c.seeds.empty()) throw std::runtime_error("config: seeds must be non-empty");

    kv.reject_unknown();
    if (m.param_seed == 0) m.param_seed = mix_seed(t.seed, fnv1a("params"));
    return c;
  }
};

// Every key with its default and a one-line description, as a loadable file.
inline std::string documented_defaults() {
  ExperimentConfig c;
  std::ostringstream out;
  auto line = [&](const std::string& key, const std::string& value,
                  const std::string& doc) {
    out << key << " = " << value << "  # " << doc << "\n";
  };
  out << "# Experiment configuration. Flat key = value; '#' starts a comment.\n";
  out << "\n# --- world generation ---\n";
  line("world.nodes", std::to_string(c.data.world.nodes), "nodes per world");
  line("world.mean_degree", "3.0", "target mean node degree");
  line("world.feature_dim", std::to_string(c.data.world.feature_dim),
       "view feature dimension");
  line("world.scene_classes", std::to_string(c.data.world.scene_classes),
       "scene class codebook size");
  line("world.object_vocab", std::to_string(c.data.world.object_vocab),
       "object label vocabulary (label 0 reserved)");
  line("world.distractor_fraction", "0.5",
       "fraction of nodes hosting a same-class distractor pair");
  line("world.competitor_fraction", "0.2",
       "fraction of nodes hosting a same-bucket different-class competitor");
  line("world.feature_noise", "0.35", "sigma of Gaussian view-feature noise");
  line("world.edge_min", "2.5", "minimum edge length, meters");
  line("world.edge_max", "5.5", "maximum edge length, meters");
  line("world.decoys_min", "2", "minimum decoy objects per view");
  line("world.decoys_max", "5", "maximum decoy objects per view");
  line("world.codebook_seed", "20240101",
       "global codebook seed shared by every world");
  out << "\n# --- episodes ---\n";
  line("episode.hops_min", "3", "minimum gold path hops");
  line("episode.hops_max", "6", "maximum gold path hops");
  line("episode.concat_paths", "false",
       "concatenate two segments into long episodes");
  line("episode.max_tokens", "60", "maximum instruction length");
  out << "\n# --- dataset ---\n";
  line("data.train_worlds", "40", "number of training worlds");
  line("data.unseen_worlds", "8", "number of held-out worlds");
  line("data.train_episodes", "3000", "training episodes");
  line("data.val_seen_episodes", "300", "val_seen episodes (training worlds)");
  line("data.val_unseen_episodes", "300", "val_unseen episodes (held-out worlds)");
  line("data.val_distractor_episodes", "300",
       "val_unseen_distractor episodes (every one has an ambiguous planted hop)");
  line("data.seed", "1", "dataset generation seed");
  line("data.path", "dataset.jsonl", "dataset file path");
  out << "\n# --- model ---\n";
  line("model.word_dim", "32", "token embedding dimension");
  line("model.hidden_dim", "64", "model dimension D");
  line("model.object_dim", "32", "object label embedding dimension");
  line("model.neighbors", "4", "neighbor views per candidate (I), 4 or 8");
  line("model.objects", "8", "objects per neighbor view (J)");
  line("model.fusion", "spa", "subject fusion: spa | lang | single");
  line("model.modules", "action,subject,reference", "active scoring modules");
  line("model.feature_dropout", "0", "feature dropout rate during training");
  line("model.max_instr_len", "60", "encoder length limit");
  line("model.param_seed", "0", "parameter init seed; 0 derives from train.seed");
  out << "\n# --- training ---\n";
  line("train.iterations", "3000", "optimizer steps");
  line("train.batch", "8", "episodes per step");
  line("train.lr", "0.0001", "RMSprop learning rate");
  line("train.il_weight", "0.2", "imitation loss weight (lambda)");
  line("train.rl", "true", "enable the A2C objective");
  line("train.gamma", "0.9", "reward discount");
  line("train.rms_alpha", "0.9", "RMSprop decay");
  line("train.rms_eps", "1e-8", "RMSprop epsilon");
  line("train.clip_norm", "40", "global gradient norm clip");
  line("train.goal_reward", "2", "terminal goal reward magnitude");
  line("train.shaping_reward", "1", "per-step distance shaping magnitude");
  line("train.fidelity_coef", "1", "nDTW increment coefficient");
  line("train.value_loss_coef", "0.5", "critic regression weight");
  line("train.success_threshold", "3", "success radius, meters");
  line("train.max_steps", "10", "rollout step budget");
  line("train.val_every", "500", "validation period, iterations");
  line("train.val_episodes", "100", "episodes per split during validation");
  line("train.log_every", "50", "progress log period");
  line("train.seed", "1", "training seed (batching, sampling, init)");
  out << "\n# --- harness ---\n";
  line("seeds", "1,2,3", "seed list for ablation cells");
  return out.str();
}

}  // namespace nvem
