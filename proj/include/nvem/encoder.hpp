#pragma once

// Instruction encoding (token embeddings + bidirectional LSTM, projected to
// the model dimension) and the shared soft-dot attention primitive.

#include "nvem/nn.hpp"
#include "nvem/vocab.hpp"

#include <vector>

namespace nvem {

struct EncodedInstruction {
  ad::Var states;                   // D x L, one column per token
  std::vector<std::uint8_t> mask;   // 1 = attendable token
  ad::Var c_init;                   // D x 1, decoder cell initialization
  int length = 0;
};

struct SoftAttnResult {
  ad::Var context;  // (key dim) x 1
  ad::Var weights;  // L x 1, masked entries exactly 0
};

// Soft-dot attention with a trainable bilinear form: score_l = q^T W k_l.
inline SoftAttnResult soft_attn(ad::Tape& t, ad::Var W, ad::Var query, ad::Var keys,
                                const std::vector<std::uint8_t>* mask = nullptr) {
  ad::Var scores = t.matmul_tn(keys, t.matmul_tn(W, query));  // L x 1
  ad::Var weights = t.softmax_masked(scores, mask);
  return {t.matmul(keys, weights), weights};
}

class InstructionEncoder {
 public:
  InstructionEncoder(nn::ParamStore& store, int vocab_size, int word_dim,
                     int hidden_dim, int max_len)
      : hidden_(hidden_dim), max_len_(max_len) {
    if (hidden_dim % 2 != 0)
      throw std::invalid_argument("encoder: hidden dim must be even");
    int H = hidden_dim / 2;
    embed_ = &store.create("embed.token", word_dim, vocab_size, nn::Init::Embedding);
    fwd_ = {&store.create("enc.fwd.W_ih", 4 * H, word_dim, nn::Init::FanIn),
            &store.create("enc.fwd.W_hh", 4 * H, H, nn::Init::FanIn),
            &store.create("enc.fwd.b", 4 * H, 1, nn::Init::Zero)};
    bwd_ = {&store.create("enc.bwd.W_ih", 4 * H, word_dim, nn::Init::FanIn),
            &store.create("enc.bwd.W_hh", 4 * H, H, nn::Init::FanIn),
            &store.create("enc.bwd.b", 4 * H, 1, nn::Init::Zero)};
    proj_W_ = &store.create("enc.proj.W", hidden_dim, hidden_dim, nn::Init::FanIn);
    proj_b_ = &store.create("enc.proj.b", hidden_dim, 1, nn::Init::Zero);
    c2d_W_ = &store.create("enc.c2d.W", hidden_dim, hidden_dim, nn::Init::FanIn);
    c2d_b_ = &store.create("enc.c2d.b", hidden_dim, 1, nn::Init::Zero);
  }

  EncodedInstruction encode(ad::Tape& t, nn::ParamBinding& P,
                            const std::vector<int>& tokens) const {
    int L = static_cast<int>(tokens.size());
    if (L == 0) throw std::invalid_argument("encode: empty instruction");
    if (L > max_len_)
      throw std::invalid_argument("encode: instruction longer than the maximum");
    int H = hidden_ / 2;
    ad::Var emb = t.gather_cols(P(*embed_), tokens);

    std::vector<ad::Var> hf(static_cast<std::size_t>(L)), hb(static_cast<std::size_t>(L));
    ad::Var h = t.zeros(H, 1), c = t.zeros(H, 1);
    for (int i = 0; i < L; ++i) {
      auto st = nn::lstm_cell(t, P, fwd_, t.cols(emb, i, 1), h, c);
      h = st.h;
      c = st.c;
      hf[static_cast<std::size_t>(i)] = h;
    }
    ad::Var cf = c;
    h = t.zeros(H, 1);
    c = t.zeros(H, 1);
    for (int i = L - 1; i >= 0; --i) {
      auto st = nn::lstm_cell(t, P, bwd_, t.cols(emb, i, 1), h, c);
      h = st.h;
      c = st.c;
      hb[static_cast<std::size_t>(i)] = h;
    }
    ad::Var cb = c;

    std::vector<ad::Var> cols(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i)
      cols[static_cast<std::size_t>(i)] =
          t.vcat(hf[static_cast<std::size_t>(i)], hb[static_cast<std::size_t>(i)]);
    ad::Var states = nn::linear(t, P(*proj_W_), P(*proj_b_), t.concat_cols(cols));

    EncodedInstruction out;
    out.states = states;
    out.length = L;
    out.mask.resize(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i)
      out.mask[static_cast<std::size_t>(i)] = tokens[static_cast<std::size_t>(i)] != Vocab::kPad;
    out.c_init = t.tanh(nn::linear(t, P(*c2d_W_), P(*c2d_b_), t.vcat(cf, cb)));
    return out;
  }

  int hidden_dim() const { return hidden_; }

 private:
  int hidden_;
  int max_len_;
  nn::Parameter* embed_;
  nn::LstmCellParams fwd_, bwd_;
  nn::Parameter* proj_W_;
  nn::Parameter* proj_b_;
  nn::Parameter* c2d_W_;
  nn::Parameter* c2d_b_;
};

}  // namespace nvem
