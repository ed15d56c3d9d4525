#pragma once

// Attention dumps: a gold-forced rollout with per-step token attentions,
// neighbor affinities, top-scoring objects, integrator weights, and the
// action distribution, as structured records plus a readable rendering.

#include "nvem/training.hpp"

#include <iomanip>
#include <sstream>

namespace nvem {

inline nlohmann::json dump_attention(NvemModel& model, const Dataset& data,
                                     const Episode& ep) {
  const NavGraph& g = data.world(ep.world_id);
  ad::Tape tape;
  model.begin(tape);
  auto enc = model.encode(tape, ep.tokens);
  AgentState st = model.initial_state(tape, enc);

  auto vec = [&](ad::Var v) {
    const ad::Mat& m = tape.val(v);
    return std::vector<double>(m.data(), m.data() + m.size());
  };

  nlohmann::json records = nlohmann::json::array();
  double heading = 0.0;
  for (std::size_t hop = 0; hop + 1 < ep.gold_path.size(); ++hop) {
    int u = ep.gold_path[hop];
    int next = ep.gold_path[hop + 1];
    Observation obs = observe(g, u, heading, model.config().obs());
    auto out = model.step(tape, obs, enc, st);

    nlohmann::json rec;
    rec["step"] = hop;
    rec["node"] = u;
    rec["gold_next"] = next;
    rec["attn_action"] = vec(out.bundle.attn_action);
    rec["attn_subject"] = vec(out.bundle.attn_subject);
    rec["attn_reference"] = vec(out.bundle.attn_reference);
    rec["weights"] = vec(out.weights);
    Eigen::VectorXd P = tape.val(out.P).col(0);
    rec["P"] = std::vector<double>(P.data(), P.data() + P.size());
    rec["chosen"] = NvemModel::select_action(P);

    nlohmann::json cands = nlohmann::json::array();
    int teacher = -1;
    for (std::size_t k = 0; k < obs.candidates.size(); ++k) {
      const Candidate& c = obs.candidates[k];
      nlohmann::json jc;
      jc["target"] = c.target_node;
      if (!c.is_stop()) {
        jc["rel_heading"] = c.rel.heading;
        jc["subject_affinity"] = vec(out.subject_affinity[k]);
        // top three objects by reference attention
        const ad::Mat& A = tape.val(out.object_attn[k]);
        std::vector<int> order(static_cast<std::size_t>(A.rows()));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return A(a, 0) > A(b, 0); });
        nlohmann::json top = nlohmann::json::array();
        int J = model.config().objects;
        for (int r = 0; r < 3 && r < static_cast<int>(order.size()); ++r) {
          int flat = order[static_cast<std::size_t>(r)];
          int label = c.object_labels(flat / J, flat % J);
          top.push_back({{"label", label},
                         {"noun", label > 0 ? object_noun(label) : "<none>"},
                         {"weight", A(flat, 0)}});
        }
        jc["top_objects"] = std::move(top);
        if (c.target_node == next) teacher = static_cast<int>(k);
      }
      cands.push_back(std::move(jc));
    }
    rec["candidates"] = std::move(cands);
    rec["teacher"] = teacher;
    records.push_back(std::move(rec));

    // gold-forced transition
    st = out.next;
    st.a_prev = model.action_embedding(
        tape, obs.candidates[static_cast<std::size_t>(teacher)]);
    heading = g.heading_to(u, next);
  }
  return records;
}

inline std::string render_attention(const nlohmann::json& records, const Episode& ep,
                                    const Vocab& vocab) {
  std::ostringstream out;
  out << "episode " << ep.episode_id << "  path:";
  for (int n : ep.gold_path) out << ' ' << n;
  out << "\ninstruction:";
  for (int tok : ep.tokens) out << ' ' << vocab.word(tok);
  out << "\n";
  auto head = [&](const nlohmann::json& attn) {
    int best = 0;
    for (std::size_t i = 1; i < attn.size(); ++i)
      if (attn[i].get<double>() > attn[best].get<double>()) best = static_cast<int>(i);
    std::ostringstream s;
    s << vocab.word(ep.tokens[static_cast<std::size_t>(best)]) << " ("
      << std::fixed << std::setprecision(2) << attn[best].get<double>() << ")";
    return s.str();
  };
  for (const auto& rec : records) {
    out << "step " << rec.at("step").get<int>() << " @node "
        << rec.at("node").get<int>() << "  action->" << head(rec.at("attn_action"))
        << "  subject->" << head(rec.at("attn_subject")) << "  reference->"
        << head(rec.at("attn_reference")) << "\n";
    const auto& P = rec.at("P");
    const auto& cands = rec.at("candidates");
    out << "  P:";
    for (std::size_t k = 0; k < P.size(); ++k) {
      int target = cands[k].at("target").get<int>();
      out << "  " << (target < 0 ? std::string("STOP") : std::to_string(target)) << ":"
          << std::fixed << std::setprecision(3) << P[k].get<double>();
    }
    out << "  chosen=" << rec.at("chosen").get<int>()
        << " teacher=" << rec.at("teacher").get<int>() << "\n";
  }
  return out.str();
}

}  // namespace nvem
