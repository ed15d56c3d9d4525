#pragma once

// The neighbor-view enhanced policy. Per step: attend the instruction with
// three independent heads (action / subject / reference phrases), update the
// decoder state from the attended scene, score every candidate through the
// active modules, and integrate the module confidences with adaptively
// predicted weights.
//
// Module scoring, given candidate k with orientation embedding e_k:
//   action:    F_a = tanh(Ga * e_k),             tau_a = h_a^T Wa F_a
//   subject:   affinity over neighbor views (query/key on orientation
//              embeddings, scaled by sqrt(D)), F_s = sum_i A_i * tanh(Gs v_i),
//              tau_s = h_s^T Ws F_s
//   reference: objects o_{i,j} with relative-orientation embeddings, masked
//              softmax over the joint (i,j) axis against the reference phrase,
//              F_r = sum A_{i,j} o_bar_{i,j}, tau_r = h_r^T Wr F_r
// The STOP candidate scores through the action module only (zero orientation
// embedding); its subject/reference representations are exactly zero.

#include "nvem/encoder.hpp"
#include "nvem/world.hpp"

#include <json.hpp>

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nvem {

inline constexpr int kCheckpointSchemaVersion = 1;

enum class FusionMode { Spa, Lang, Single };

inline std::string fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::Spa: return "spa";
    case FusionMode::Lang: return "lang";
    case FusionMode::Single: return "single";
  }
  return "spa";
}

inline FusionMode fusion_from_name(const std::string& s) {
  if (s == "spa") return FusionMode::Spa;
  if (s == "lang") return FusionMode::Lang;
  if (s == "single") return FusionMode::Single;
  throw std::invalid_argument("unknown fusion mode: " + s);
}

struct ModelConfig {
  int vocab_size = 0;
  int word_dim = 32;
  int hidden_dim = 64;   // D
  int feature_dim = 64;  // F
  int object_vocab = 100;
  int object_dim = 32;
  int neighbors = 4;  // I
  int objects = 8;    // J
  FusionMode fusion = FusionMode::Spa;
  bool use_action = true;
  bool use_subject = true;
  bool use_reference = true;
  double feature_dropout = 0.0;
  int max_instr_len = 60;
  std::uint64_t param_seed = 7;

  void validate() const {
    if (vocab_size <= 0) throw std::invalid_argument("model: vocab_size unset");
    if (!use_action && !use_subject && !use_reference)
      throw std::invalid_argument("model: module mask must be non-empty");
    if (neighbors != 1 && neighbors != 4 && neighbors != 8)
      throw std::invalid_argument("model: neighbors must be 1, 4 or 8");
    if (fusion == FusionMode::Single && neighbors != 1)
      throw std::invalid_argument("model: single fusion forces neighbors == 1");
    if (fusion != FusionMode::Single && neighbors == 1)
      throw std::invalid_argument("model: neighbors == 1 requires single fusion");
  }

  ObsConfig obs() const { return ObsConfig{neighbors, objects}; }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},   {"word_dim", word_dim},
            {"hidden_dim", hidden_dim},   {"feature_dim", feature_dim},
            {"object_vocab", object_vocab}, {"object_dim", object_dim},
            {"neighbors", neighbors},     {"objects", objects},
            {"fusion", fusion_name(fusion)}, {"use_action", use_action},
            {"use_subject", use_subject}, {"use_reference", use_reference},
            {"feature_dropout", feature_dropout}, {"max_instr_len", max_instr_len},
            {"param_seed", param_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.word_dim = j.at("word_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.feature_dim = j.at("feature_dim").get<int>();
    c.object_vocab = j.at("object_vocab").get<int>();
    c.object_dim = j.at("object_dim").get<int>();
    c.neighbors = j.at("neighbors").get<int>();
    c.objects = j.at("objects").get<int>();
    c.fusion = fusion_from_name(j.at("fusion").get<std::string>());
    c.use_action = j.at("use_action").get<bool>();
    c.use_subject = j.at("use_subject").get<bool>();
    c.use_reference = j.at("use_reference").get<bool>();
    c.feature_dropout = j.at("feature_dropout").get<double>();
    c.max_instr_len = j.at("max_instr_len").get<int>();
    c.param_seed = j.at("param_seed").get<std::uint64_t>();
    return c;
  }
};

struct AgentState {
  ad::Var h;        // decoder hidden
  ad::Var c;        // decoder cell
  ad::Var h_tilde;  // global context-aware state (zero at t = 0)
  ad::Var a_prev;   // previous action embedding (zero at t = 0)
  int t = 0;
};

struct PhraseBundle {
  ad::Var u_action, u_subject, u_reference;        // attended phrase features
  ad::Var h_action, h_subject, h_reference;        // specialized states
  ad::Var attn_action, attn_subject, attn_reference;  // token attentions (L x 1)
};

struct StepOutput {
  ad::Var P;        // (K+1) x 1, STOP last
  ad::Var logP;
  ad::Var weights;        // one entry per active module, order action/subject/reference
  ad::Var weight_logits;  // pre-softmax integrator logits, same order
  ad::Var tau_action, tau_subject, tau_reference;  // unset when module inactive
  PhraseBundle bundle;
  ad::Var view_attn;                      // 36 x 1
  std::vector<ad::Var> subject_affinity;  // per movement candidate, I x 1
  std::vector<ad::Var> object_attn;       // per movement candidate, I*J x 1
  ad::Var value;                          // 1 x 1 state-value estimate
  AgentState next;                        // a_prev left for the caller to fill
};

class NvemModel {
 public:
  NvemModel(const ModelConfig& cfg, nn::ParamStore& store)
      : cfg_(validated(cfg)),
        store_(store),
        encoder_(store, cfg.vocab_size, cfg.word_dim, cfg.hidden_dim,
                 cfg.max_instr_len) {
    int D = cfg_.hidden_dim, F = cfg_.feature_dim, Df = F + kOrientationDim;
    view_W_ = &store.create("attn.view.W", D, Df, nn::Init::FanIn);
    dec_ = {&store.create("dec.W_ih", 4 * D, 2 * Df, nn::Init::FanIn),
            &store.create("dec.W_hh", 4 * D, D, nn::Init::FanIn),
            &store.create("dec.b", 4 * D, 1, nn::Init::Zero)};
    value_W_ = &store.create("value.W", 1, D, nn::Init::FanIn);
    value_b_ = &store.create("value.b", 1, 1, nn::Init::Zero);

    const char* names[3] = {"action", "subject", "reference"};
    for (int m = 0; m < 3; ++m) {
      std::string base(names[m]);
      phrase_attn_W_[m] =
          &store.create("attn.phrase." + base + ".W", D, D, nn::Init::FanIn);
      phrase_W_[m] = &store.create("phrase." + base + ".W", D, 2 * D, nn::Init::FanIn);
      phrase_b_[m] = &store.create("phrase." + base + ".b", D, 1, nn::Init::Zero);
    }

    if (cfg_.use_action) {
      act_gamma_W_ = &store.create("action.gamma.W", D, kOrientationDim, nn::Init::FanIn);
      act_gamma_b_ = &store.create("action.gamma.b", D, 1, nn::Init::Zero);
      act_score_W_ = &store.create("action.score.W", D, D, nn::Init::FanIn);
      intg_W_[0] = &store.create("integrator.action.W", 1, D, nn::Init::FanIn);
    }
    if (cfg_.use_subject) {
      subj_gamma_W_ = &store.create("subject.gamma.W", D, F, nn::Init::FanIn);
      subj_gamma_b_ = &store.create("subject.gamma.b", D, 1, nn::Init::Zero);
      int qk_in = cfg_.fusion == FusionMode::Lang ? D : kOrientationDim;
      int k_in = cfg_.fusion == FusionMode::Lang ? D : kOrientationDim;
      subj_q_W_ = &store.create("subject.q.W", D, qk_in, nn::Init::FanIn);
      subj_k_W_ = &store.create("subject.k.W", D, k_in, nn::Init::FanIn);
      subj_score_W_ = &store.create("subject.score.W", D, D, nn::Init::FanIn);
      intg_W_[1] = &store.create("integrator.subject.W", 1, D, nn::Init::FanIn);
    }
    if (cfg_.use_reference) {
      obj_embed_ = &store.create("embed.object", cfg_.object_dim,
                                 cfg_.object_vocab + 1, nn::Init::Embedding);
      ref_gamma_W_ = &store.create("reference.gamma.W", D,
                                   cfg_.object_dim + kOrientationDim, nn::Init::FanIn);
      ref_gamma_b_ = &store.create("reference.gamma.b", D, 1, nn::Init::Zero);
      ref_q_W_ = &store.create("reference.q.W", D, D, nn::Init::FanIn);
      ref_k_W_ = &store.create("reference.k.W", D, D, nn::Init::FanIn);
      ref_score_W_ = &store.create("reference.score.W", D, D, nn::Init::FanIn);
      intg_W_[2] = &store.create("integrator.reference.W", 1, D, nn::Init::FanIn);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }

  // Must be called once per tape before encode/step.
  void begin(ad::Tape& tape) { bind_.reset(&tape); }

  // Per-episode 0/1 feature scaling (inverted dropout); nullptr disables.
  void set_feature_mask(const Eigen::VectorXd* mask) { feature_mask_ = mask; }

  EncodedInstruction encode(ad::Tape& t, const std::vector<int>& tokens) {
    return encoder_.encode(t, bind_, tokens);
  }

  AgentState initial_state(ad::Tape& t, const EncodedInstruction& enc) {
    int D = cfg_.hidden_dim, Df = cfg_.feature_dim + kOrientationDim;
    AgentState s;
    s.h = t.zeros(D, 1);
    s.c = enc.c_init;
    s.h_tilde = t.zeros(D, 1);
    s.a_prev = t.zeros(Df, 1);
    s.t = 0;
    return s;
  }

  // The chosen candidate's composed feature-plus-orientation vector.
  ad::Var action_embedding(ad::Tape& t, const Candidate& cand) const {
    Eigen::VectorXd v = cand.composed;
    apply_feature_mask(v);
    return t.constant(v);
  }

  StepOutput step(ad::Tape& t, const Observation& obs, const EncodedInstruction& enc,
                  const AgentState& state) {
    auto& P = bind_;
    int D = cfg_.hidden_dim, F = cfg_.feature_dim;
    int I = cfg_.obs().neighbors, J = cfg_.objects;
    int K = static_cast<int>(obs.candidates.size()) - 1;  // movement candidates
    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));

    StepOutput out;

    // scene attention and decoder update
    Eigen::MatrixXd views = obs.views;
    if (feature_mask_)
      views.topRows(F).array().colwise() *= feature_mask_->array();
    auto scene = soft_attn(t, P(*view_W_), state.h_tilde, t.constant(std::move(views)));
    out.view_attn = scene.weights;
    auto dec = nn::lstm_cell(t, P, dec_, t.vcat(scene.context, state.a_prev),
                             state.h_tilde, state.c);

    // phrase extraction: three independent heads conditioned on the previous
    // context-aware state, each producing a specialized state
    ad::Var u[3], ht[3], attn[3];
    for (int m = 0; m < 3; ++m) {
      auto r = soft_attn(t, P(*phrase_attn_W_[m]), state.h_tilde, enc.states, &enc.mask);
      u[m] = r.context;
      attn[m] = r.weights;
      ht[m] = t.tanh(nn::linear(t, P(*phrase_W_[m]), P(*phrase_b_[m]),
                                t.vcat(u[m], dec.h)));
    }
    out.bundle = {u[0], u[1], u[2], ht[0], ht[1], ht[2], attn[0], attn[1], attn[2]};

    // global context-aware state: average of the three specialized states
    ad::Var h_tilde = t.scale(t.add(t.add(ht[0], ht[1]), ht[2]), 1.0 / 3.0);
    out.value = nn::linear(t, P(*value_W_), P(*value_b_), h_tilde);

    // candidate stacks (movement candidates only; STOP gets a zero column)
    Eigen::MatrixXd cand_ori(kOrientationDim, K);
    for (int k = 0; k < K; ++k)
      cand_ori.col(k) = obs.candidates[static_cast<std::size_t>(k)].composed.tail(
          kOrientationDim);

    ad::Var tau[3];
    if (cfg_.use_action) {
      Eigen::MatrixXd act_in(kOrientationDim, K + 1);
      act_in.leftCols(K) = cand_ori;
      act_in.col(K).setZero();
      ad::Var Fa = t.tanh(nn::linear(t, P(*act_gamma_W_), P(*act_gamma_b_),
                                     t.constant(std::move(act_in))));
      ad::Var q = t.matmul_tn(P(*act_score_W_), ht[0]);
      tau[0] = t.matmul_tn(Fa, q);
      out.tau_action = tau[0];
    }

    if (cfg_.use_subject) {
      Eigen::MatrixXd nbr_feats(F, K * I);
      Eigen::MatrixXd nbr_ori(kOrientationDim, K * I);
      for (int k = 0; k < K; ++k) {
        const Candidate& c = obs.candidates[static_cast<std::size_t>(k)];
        nbr_feats.middleCols(k * I, I) = c.neighbor_features;
        nbr_ori.middleCols(k * I, I) = c.neighbor_ori_embed;
      }
      if (feature_mask_)
        nbr_feats.array().colwise() *= feature_mask_->array();
      ad::Var v_tilde = t.tanh(nn::linear(t, P(*subj_gamma_W_), P(*subj_gamma_b_),
                                          t.constant(std::move(nbr_feats))));
      ad::Var keys, queries;
      if (cfg_.fusion == FusionMode::Lang) {
        keys = t.matmul(P(*subj_k_W_), v_tilde);
        queries = t.matmul(P(*subj_q_W_), u[1]);  // one query shared by all k
      } else {
        keys = t.matmul(P(*subj_k_W_), t.constant(nbr_ori));
        queries = t.matmul(P(*subj_q_W_), t.constant(cand_ori));
      }
      std::vector<ad::Var> fs(static_cast<std::size_t>(K + 1));
      for (int k = 0; k < K; ++k) {
        ad::Var q = cfg_.fusion == FusionMode::Lang ? queries : t.cols(queries, k, 1);
        ad::Var scores =
            t.scale(t.matmul_tn(t.cols(keys, k * I, I), q), inv_sqrt_d);
        ad::Var A = t.softmax_masked(scores);
        out.subject_affinity.push_back(A);
        fs[static_cast<std::size_t>(k)] = t.matmul(t.cols(v_tilde, k * I, I), A);
      }
      fs[static_cast<std::size_t>(K)] = t.zeros(D, 1);  // STOP
      ad::Var Fs = t.concat_cols(fs);
      tau[1] = t.matmul_tn(Fs, t.matmul_tn(P(*subj_score_W_), ht[1]));
      out.tau_subject = tau[1];
    }

    if (cfg_.use_reference) {
      std::vector<int> labels(static_cast<std::size_t>(K * I * J));
      Eigen::MatrixXd deltas(kOrientationDim, K * I * J);
      for (int k = 0; k < K; ++k) {
        const Candidate& c = obs.candidates[static_cast<std::size_t>(k)];
        for (int i = 0; i < I; ++i)
          for (int j = 0; j < J; ++j) {
            int col = (k * I + i) * J + j;
            labels[static_cast<std::size_t>(col)] = c.object_labels(i, j);
            deltas.col(col) = c.object_delta_embed.col(i);
          }
      }
      ad::Var obj_in = t.vcat(t.gather_cols(P(*obj_embed_), labels),
                              t.constant(std::move(deltas)));
      ad::Var o_bar = t.tanh(nn::linear(t, P(*ref_gamma_W_), P(*ref_gamma_b_), obj_in));
      ad::Var keys = t.matmul(P(*ref_k_W_), o_bar);
      ad::Var q = t.matmul(P(*ref_q_W_), u[2]);
      std::vector<ad::Var> fr(static_cast<std::size_t>(K + 1));
      for (int k = 0; k < K; ++k) {
        const Candidate& c = obs.candidates[static_cast<std::size_t>(k)];
        bool any = false;
        for (auto b : c.object_mask) any |= b != 0;
        if (!any) {
          // no visible objects; the reference module must not veto this one
          out.object_attn.push_back(t.zeros(I * J, 1));
          fr[static_cast<std::size_t>(k)] = t.zeros(D, 1);
          continue;
        }
        ad::Var scores = t.scale(
            t.matmul_tn(t.cols(keys, k * I * J, I * J), q), inv_sqrt_d);
        ad::Var A = t.softmax_masked(scores, &c.object_mask);
        out.object_attn.push_back(A);
        fr[static_cast<std::size_t>(k)] = t.matmul(t.cols(o_bar, k * I * J, I * J), A);
      }
      fr[static_cast<std::size_t>(K)] = t.zeros(D, 1);  // STOP
      ad::Var Fr = t.concat_cols(fr);
      tau[2] = t.matmul_tn(Fr, t.matmul_tn(P(*ref_score_W_), ht[2]));
      out.tau_reference = tau[2];
    }

    // adaptive integration over the active modules
    std::vector<ad::Var> wlogits;
    std::vector<int> active;
    for (int m = 0; m < 3; ++m)
      if (module_active(m)) {
        wlogits.push_back(t.matmul(P(*intg_W_[m]), u[m]));
        active.push_back(m);
      }
    ad::Var w;
    if (wlogits.size() == 1) {
      out.weight_logits = wlogits[0];
      w = t.constant(ad::Mat::Ones(1, 1));
    } else {
      ad::Var stack = t.vcat(wlogits[0], wlogits[1]);
      if (wlogits.size() == 3) stack = t.vcat(stack, wlogits[2]);
      out.weight_logits = stack;
      w = t.softmax_masked(stack);
    }
    out.weights = w;
    ad::Var combined;
    for (std::size_t i = 0; i < active.size(); ++i) {
      ad::Var term = t.smul(t.pick(w, static_cast<int>(i)),
                            tau[static_cast<std::size_t>(active[i])]);
      combined = i == 0 ? term : t.add(combined, term);
    }
    out.P = t.softmax_masked(combined);
    out.logP = t.log_softmax(combined);

    out.next.h = dec.h;
    out.next.c = dec.c;
    out.next.h_tilde = h_tilde;
    out.next.t = state.t + 1;
    return out;
  }

  // Argmax with ties broken toward the lowest index; STOP sits last, so a
  // movement candidate wins an exact tie against STOP.
  static int select_action(const Eigen::VectorXd& P) {
    int best = 0;
    for (int i = 1; i < P.size(); ++i)
      if (P[i] > P[best]) best = i;
    return best;
  }

 private:
  static const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();  // before any parameter is created
    return cfg;
  }

  bool module_active(int m) const {
    return m == 0 ? cfg_.use_action : m == 1 ? cfg_.use_subject : cfg_.use_reference;
  }

  void apply_feature_mask(Eigen::VectorXd& composed) const {
    if (!feature_mask_) return;
    composed.head(cfg_.feature_dim).array() *= feature_mask_->array();
  }

  ModelConfig cfg_;
  nn::ParamStore& store_;
  InstructionEncoder encoder_;
  nn::ParamBinding bind_;
  const Eigen::VectorXd* feature_mask_ = nullptr;

  nn::Parameter* view_W_ = nullptr;
  nn::LstmCellParams dec_;
  nn::Parameter* value_W_ = nullptr;
  nn::Parameter* value_b_ = nullptr;
  nn::Parameter* phrase_attn_W_[3] = {};
  nn::Parameter* phrase_W_[3] = {};
  nn::Parameter* phrase_b_[3] = {};
  nn::Parameter* act_gamma_W_ = nullptr;
  nn::Parameter* act_gamma_b_ = nullptr;
  nn::Parameter* act_score_W_ = nullptr;
  nn::Parameter* subj_gamma_W_ = nullptr;
  nn::Parameter* subj_gamma_b_ = nullptr;
  nn::Parameter* subj_q_W_ = nullptr;
  nn::Parameter* subj_k_W_ = nullptr;
  nn::Parameter* subj_score_W_ = nullptr;
  nn::Parameter* obj_embed_ = nullptr;
  nn::Parameter* ref_gamma_W_ = nullptr;
  nn::Parameter* ref_gamma_b_ = nullptr;
  nn::Parameter* ref_q_W_ = nullptr;
  nn::Parameter* ref_k_W_ = nullptr;
  nn::Parameter* ref_score_W_ = nullptr;
  nn::Parameter* intg_W_[3] = {};
};

// ---- checkpoints -----------------------------------------------------------------

struct LoadedModel {
  ModelConfig config;
  std::unique_ptr<nn::ParamStore> store;
  std::unique_ptr<NvemModel> model;
};

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const nn::ParamStore& store) {
  nlohmann::json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["config"] = cfg.to_json();
  j["params"] = store.values_to_json();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << '\n';
}

inline LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("malformed checkpoint: " + std::string(ex.what()));
  }
  int ver = j.at("schema_version").get<int>();
  if (ver != kCheckpointSchemaVersion)
    throw std::runtime_error("checkpoint schema version mismatch: got " +
                             std::to_string(ver));
  LoadedModel lm;
  lm.config = ModelConfig::from_json(j.at("config"));
  lm.store = std::make_unique<nn::ParamStore>(lm.config.param_seed);
  lm.model = std::make_unique<NvemModel>(lm.config, *lm.store);
  lm.store->values_from_json(j.at("params"));
  return lm;
}

}  // namespace nvem
