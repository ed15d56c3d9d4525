#pragma once

// Mixed imitation + reinforcement training. Imitation rollouts execute the
// shortest-path teacher and accumulate cross-entropy; reinforcement rollouts
// sample actions and learn from goal + fidelity rewards with an A2C
// advantage. One optimizer step per batch.

#include "nvem/metrics.hpp"
#include "nvem/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace nvem {

struct TrainConfig {
  int iterations = 3000;
  int batch = 8;
  double lr = 1e-4;
  double il_weight = 0.2;  // lambda on the imitation term
  bool rl = true;
  double gamma = 0.9;
  double rms_alpha = 0.9;
  double rms_eps = 1e-8;
  double clip_norm = 40.0;
  double goal_reward = 2.0;
  double shaping_reward = 1.0;
  double fidelity_coef = 1.0;
  double value_loss_coef = 0.5;
  double success_threshold = 3.0;
  int max_steps = 10;
  int val_every = 500;
  int val_episodes = 100;  // per-split subsample during training
  int log_every = 50;
  std::uint64_t seed = 1;
};

// ---- teacher -----------------------------------------------------------------

// Index (into the observation's candidate list) of the teacher action: STOP
// at the goal, otherwise the candidate on a shortest path to the earliest
// gold-path node not yet visited.
inline int teacher_action_index(const NavGraph& g, const Observation& obs,
                                const Episode& ep,
                                const std::vector<std::uint8_t>& gold_visited) {
  int stop_index = static_cast<int>(obs.candidates.size()) - 1;
  if (obs.node == ep.goal_node) return stop_index;
  int target = ep.goal_node;
  for (std::size_t i = 0; i < ep.gold_path.size(); ++i)
    if (!gold_visited[i] && ep.gold_path[i] != obs.node) {
      target = ep.gold_path[i];
      break;
    }
  int next = g.next_hop(obs.node, target);
  for (std::size_t k = 0; k + 1 < obs.candidates.size(); ++k)
    if (obs.candidates[k].target_node == next) return static_cast<int>(k);
  throw std::logic_error("teacher: next hop is not a candidate");
}

// ---- rewards -----------------------------------------------------------------

namespace reward_detail {

inline double prefix_ndtw(const NavGraph& g, const Episode& ep,
                          const std::vector<int>& path, std::size_t upto) {
  if (upto == 0) return 0.0;  // baseline: cumulative fidelity telescopes to
                              // the final nDTW on a perfect rollout
  std::vector<int> prefix(path.begin(), path.begin() + static_cast<long>(upto) + 1);
  return ndtw(g, prefix, ep.gold_path, 3.0);
}

}  // namespace reward_detail

// Rewards recomputed from a logged node sequence. `path` starts at the start
// node; entry t+1 is the node after step t. `stopped` marks an explicit STOP
// as the final step (which then carries only the goal term); on truncation
// the terminal goal term folds into the last movement step.
inline std::vector<double> recompute_rewards(const NavGraph& g, const Episode& ep,
                                             const std::vector<int>& path, bool stopped,
                                             const TrainConfig& cfg) {
  std::vector<double> out;
  int moves = static_cast<int>(path.size()) - 1;
  for (int t = 0; t < moves; ++t) {
    int u = path[static_cast<std::size_t>(t)], v = path[static_cast<std::size_t>(t) + 1];
    double d_prev = g.geodesic(u, ep.goal_node);
    double d_new = g.geodesic(v, ep.goal_node);
    double r = 0.0;
    if (d_new < d_prev - 1e-9)
      r += cfg.shaping_reward;
    else if (d_new > d_prev + 1e-9)
      r -= cfg.shaping_reward;
    r += cfg.fidelity_coef *
         (reward_detail::prefix_ndtw(g, ep, path, static_cast<std::size_t>(t) + 1) -
          reward_detail::prefix_ndtw(g, ep, path, static_cast<std::size_t>(t)));
    out.push_back(r);
  }
  double terminal =
      g.geodesic(path.back(), ep.goal_node) <= cfg.success_threshold
          ? cfg.goal_reward
          : -cfg.goal_reward;
  if (stopped)
    out.push_back(terminal);
  else if (!out.empty())
    out.back() += terminal;
  else
    out.push_back(terminal);  // degenerate: truncated before any move
  return out;
}

// ---- rollouts -----------------------------------------------------------------

enum class Policy { Teacher, Sample, Greedy };

struct StepRecord {
  int action = -1;
  int teacher = -1;
  ad::Var logp_action;
  ad::Var value;
  double reward = 0.0;
};

struct EpisodeRollout {
  std::vector<StepRecord> steps;
  std::vector<int> path;
  bool stopped = false;
};

inline int sample_index(const Eigen::VectorXd& P, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < P.size(); ++i) {
    acc += P[i];
    if (u < acc) return i;
  }
  return static_cast<int>(P.size()) - 1;
}

// Runs one episode on a fresh tape region. The caller owns tape lifetime;
// recorded Vars stay valid until the tape is cleared.
inline EpisodeRollout rollout_episode(ad::Tape& tape, NvemModel& model,
                                      const NavGraph& g, const Episode& ep,
                                      Policy policy, const TrainConfig& cfg,
                                      Rng* sampler = nullptr) {
  model.begin(tape);
  auto enc = model.encode(tape, ep.tokens);
  AgentState st = model.initial_state(tape, enc);

  EpisodeRollout out;
  out.path = {ep.start_node};
  std::vector<std::uint8_t> gold_visited(ep.gold_path.size(), 0);
  gold_visited[0] = 1;
  double heading = 0.0;
  int cur = ep.start_node;

  for (int t = 0; t < cfg.max_steps; ++t) {
    Observation obs = observe(g, cur, heading, model.config().obs());
    auto step_out = model.step(tape, obs, enc, st);
    Eigen::VectorXd P = tape.val(step_out.P).col(0);

    StepRecord rec;
    rec.teacher = teacher_action_index(g, obs, ep, gold_visited);
    switch (policy) {
      case Policy::Teacher: rec.action = rec.teacher; break;
      case Policy::Greedy: rec.action = NvemModel::select_action(P); break;
      case Policy::Sample: rec.action = sample_index(P, *sampler); break;
    }
    rec.logp_action = tape.pick(step_out.logP, rec.action);
    rec.value = step_out.value;

    int stop_index = static_cast<int>(obs.candidates.size()) - 1;
    if (rec.action == stop_index) {
      out.stopped = true;
      out.steps.push_back(rec);
      break;
    }
    const Candidate& chosen = obs.candidates[static_cast<std::size_t>(rec.action)];
    st = step_out.next;
    st.a_prev = model.action_embedding(tape, chosen);
    heading = chosen.abs_orientation.heading;
    cur = chosen.target_node;
    out.path.push_back(cur);
    for (std::size_t i = 0; i < ep.gold_path.size(); ++i)
      if (ep.gold_path[i] == cur) gold_visited[i] = 1;
    out.steps.push_back(rec);
  }

  std::vector<double> rewards = recompute_rewards(g, ep, out.path, out.stopped, cfg);
  for (std::size_t i = 0; i < out.steps.size(); ++i)
    out.steps[i].reward = rewards[i];
  return out;
}

// ---- updates ------------------------------------------------------------------

struct LossReport {
  double il = 0.0;
  double rl = 0.0;
  double value = 0.0;
  double grad_norm = 0.0;
};

namespace train_detail {

inline void check_finite(double loss, const Episode& ep, const EpisodeRollout& ro) {
  if (std::isfinite(loss)) return;
  std::string path;
  for (int n : ro.path) path += std::to_string(n) + " ";
  throw std::runtime_error("non-finite loss on episode " + ep.episode_id +
                           "; trace: " + path);
}

}  // namespace train_detail

// One batch: imitation pass (teacher-forced cross-entropy, weighted by
// lambda) plus an A2C pass (sampled actions, advantage-weighted policy
// gradient and value regression), then a single clipped optimizer step.
inline LossReport a2c_update(NvemModel& model, nn::ParamStore& store,
                             const nn::RmsProp& opt, const Dataset& data,
                             const std::vector<const Episode*>& batch,
                             const TrainConfig& cfg, Rng& rng) {
  LossReport rep;
  ad::Tape tape;
  double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const Episode* ep : batch) {
    const NavGraph& g = data.world(ep->world_id);

    if (cfg.il_weight > 0.0) {
      tape.clear();
      auto ro = rollout_episode(tape, model, g, *ep, Policy::Teacher, cfg);
      ad::Var loss;
      for (std::size_t i = 0; i < ro.steps.size(); ++i) {
        ad::Var nll = tape.neg(ro.steps[i].logp_action);
        loss = i == 0 ? nll : tape.add(loss, nll);
      }
      loss = tape.scale(loss, cfg.il_weight * inv_batch);
      double v = tape.val(loss)(0, 0);
      train_detail::check_finite(v, *ep, ro);
      rep.il += v;
      tape.backward(loss);
    }

    if (cfg.rl) {
      tape.clear();
      auto ro = rollout_episode(tape, model, g, *ep, Policy::Sample, cfg, &rng);
      std::vector<double> returns(ro.steps.size());
      double G = 0.0;
      for (std::size_t i = ro.steps.size(); i-- > 0;) {
        G = ro.steps[i].reward + cfg.gamma * G;
        returns[i] = G;
      }
      ad::Var loss;
      double policy_sum = 0.0, value_sum = 0.0;
      for (std::size_t i = 0; i < ro.steps.size(); ++i) {
        double advantage = returns[i] - tape.val(ro.steps[i].value)(0, 0);
        ad::Var policy = tape.scale(tape.neg(ro.steps[i].logp_action), advantage);
        ad::Var target = tape.constant(ad::Mat::Constant(1, 1, returns[i]));
        ad::Var vloss = tape.scale(
            tape.square(tape.sub(ro.steps[i].value, target)), cfg.value_loss_coef);
        ad::Var term = tape.add(policy, vloss);
        loss = i == 0 ? term : tape.add(loss, term);
        policy_sum += tape.val(policy)(0, 0);
        value_sum += tape.val(vloss)(0, 0);
      }
      // per-action normalization, as in the baseline lineage
      double scale = inv_batch / static_cast<double>(ro.steps.size());
      loss = tape.scale(loss, scale);
      double v = tape.val(loss)(0, 0);
      train_detail::check_finite(v, *ep, ro);
      rep.rl += policy_sum * scale;
      rep.value += value_sum * scale;
      tape.backward(loss);
    }
  }

  store.clip_grad(cfg.clip_norm);
  rep.grad_norm = store.grad_norm();
  opt.step(store);
  store.zero_grad();
  return rep;
}

// ---- evaluation ------------------------------------------------------------------

inline MetricsReport evaluate_split(NvemModel& model, const Dataset& data,
                                    const std::string& split, const TrainConfig& cfg,
                                    int limit = -1) {
  std::vector<std::pair<TrajectoryRecord, EpisodeMetrics>> rows;
  ad::Tape tape;
  int used = 0;
  for (const Episode* ep : data.split(split)) {
    if (limit >= 0 && used >= limit) break;
    ++used;
    const NavGraph& g = data.world(ep->world_id);
    tape.clear();
    auto ro = rollout_episode(tape, model, g, *ep, Policy::Greedy, cfg);
    TrajectoryRecord rec{ep->episode_id, ep->world_id, ep->split, ro.path,
                         ep->gold_path};
    rows.emplace_back(rec, compute_metrics(g, rec, cfg.success_threshold));
  }
  return aggregate(std::move(rows));
}

// ---- training loop -----------------------------------------------------------------

struct TrainResult {
  double best_val_unseen_sr = -1.0;
  int best_iteration = 0;
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string log_path;
};

inline TrainResult train(const Dataset& data, ModelConfig model_cfg,
                         const TrainConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (model_cfg.vocab_size == 0) model_cfg.vocab_size = data.vocab.size();

  auto pool = data.split("train");
  if (pool.empty()) throw std::invalid_argument("train: dataset has no train split");
  int longest = 0;
  for (const Episode* ep : pool)
    longest = std::max(longest, static_cast<int>(ep->gold_path.size()) - 1);
  if (cfg.max_steps < longest + 1)
    throw std::invalid_argument("train: max_steps must exceed the longest gold path");

  nn::ParamStore store(model_cfg.param_seed);
  NvemModel model(model_cfg, store);
  nn::RmsProp opt{cfg.lr, cfg.rms_alpha, cfg.rms_eps};
  Rng rng(mix_seed(cfg.seed, fnv1a("train")));

  std::ofstream log(out_dir + "/train_log.jsonl");
  if (!log) throw std::runtime_error("cannot write training log in " + out_dir);
  {
    nlohmann::json j;
    j["type"] = "config";
    j["model"] = model_cfg.to_json();
    j["iterations"] = cfg.iterations;
    j["batch"] = cfg.batch;
    j["lr"] = cfg.lr;
    j["il_weight"] = cfg.il_weight;
    j["rl"] = cfg.rl;
    j["gamma"] = cfg.gamma;
    j["seed"] = cfg.seed;
    log << j.dump() << '\n';
  }

  TrainResult result;
  result.log_path = out_dir + "/train_log.jsonl";
  nlohmann::json best_params;
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger initial shuffle

  auto validate = [&](int iter) {
    for (const char* split : {"val_seen", "val_unseen"}) {
      MetricsReport rep = evaluate_split(model, data, split, cfg, cfg.val_episodes);
      const auto& s = rep.splits.begin()->second;
      nlohmann::json j;
      j["type"] = "validation";
      j["iteration"] = iter;
      j["split"] = split;
      j["episodes"] = s.episodes;
      j["metrics"] = metrics_to_json(s.mean);
      log << j.dump() << '\n';
      log.flush();
      if (std::string(split) == "val_unseen" && s.mean.sr > result.best_val_unseen_sr) {
        result.best_val_unseen_sr = s.mean.sr;
        result.best_iteration = iter;
        best_params = store.values_to_json();
      }
    }
    char name[64];
    std::snprintf(name, sizeof name, "/ckpt_iter%06d.json", iter);
    save_checkpoint(out_dir + name, model_cfg, store);
  };

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    std::vector<const Episode*> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i-- > 1;)
          std::swap(order[i], order[static_cast<std::size_t>(
                                  rng.uniform_int(static_cast<int>(i) + 1))]);
        cursor = 0;
      }
      batch.push_back(pool[order[cursor++]]);
    }
    LossReport rep = a2c_update(model, store, opt, data, batch, cfg, rng);
    if (iter % cfg.log_every == 0 || iter == 1) {
      nlohmann::json j;
      j["type"] = "progress";
      j["iteration"] = iter;
      j["il_loss"] = rep.il;
      j["rl_loss"] = rep.rl;
      j["value_loss"] = rep.value;
      j["grad_norm"] = rep.grad_norm;
      log << j.dump() << '\n';
    }
    if (iter % cfg.val_every == 0 || iter == cfg.iterations) validate(iter);
  }
  if (cfg.iterations == 0) validate(0);

  result.final_checkpoint = out_dir + "/ckpt_final.json";
  save_checkpoint(result.final_checkpoint, model_cfg, store);
  if (!best_params.is_null()) store.values_from_json(best_params);
  result.best_checkpoint = out_dir + "/ckpt_best.json";
  save_checkpoint(result.best_checkpoint, model_cfg, store);
  return result;
}

}  // namespace nvem
