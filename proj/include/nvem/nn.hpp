#pragma once

// Trainable parameter store, deterministic initialization, RMSprop, and the
// schema-versioned checkpoint (de)serialization.
//
// Each parameter is initialized from a generator seeded by (store seed,
// hash(name)), so a model built with a subset of the modules gets exactly the
// same values for the parameters it shares with the full model.

#include "nvem/ad.hpp"
#include "nvem/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

namespace nvem::nn {

using ad::Mat;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  Mat rms;  // RMSprop accumulator
};

enum class Init { FanIn, Embedding, Zero };

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Parameter& create(const std::string& name, int rows, int cols, Init init) {
    auto [it, fresh] = params_.try_emplace(name, nullptr);
    if (!fresh) throw std::logic_error("parameter already exists: " + name);
    it->second = std::make_unique<Parameter>();
    Parameter& p = *it->second;
    p.name = name;
    p.value = Mat::Zero(rows, cols);
    p.grad = Mat::Zero(rows, cols);
    p.rms = Mat::Zero(rows, cols);
    if (init != Init::Zero) {
      double bound = init == Init::FanIn ? 1.0 / std::sqrt(static_cast<double>(cols))
                                         : 1.0 / std::sqrt(static_cast<double>(rows));
      Rng rng(mix_seed(seed_, fnv1a(name)));
      for (long j = 0; j < p.value.cols(); ++j)
        for (long i = 0; i < p.value.rows(); ++i)
          p.value(i, j) = rng.uniform(-bound, bound);
    }
    return p;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter: " + name);
    return *it->second;
  }

  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no parameter: " + name);
    return *it->second;
  }

  template <class F>
  void for_each(F&& fn) {  // name-ordered, deterministic
    for (auto& [name, p] : params_) fn(*p);
  }

  template <class F>
  void for_each(F&& fn) const {
    for (const auto& [name, p] : params_) fn(*p);
  }

  std::size_t count() const { return params_.size(); }

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->grad.setZero();
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& [name, p] : params_) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
  }

  void clip_grad(double max_norm) {
    double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
      double s = max_norm / norm;
      for (auto& [name, p] : params_) p->grad *= s;
    }
  }

  void scale_grad(double s) {
    for (auto& [name, p] : params_) p->grad *= s;
  }

  nlohmann::json values_to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, p] : params_) {
      nlohmann::json e;
      e["rows"] = p->value.rows();
      e["cols"] = p->value.cols();
      std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
      e["data"] = std::move(data);
      j[name] = std::move(e);
    }
    return j;
  }

  // Fills existing parameters; every name and shape must match exactly.
  void values_from_json(const nlohmann::json& j) {
    if (j.size() != params_.size())
      throw std::runtime_error("checkpoint parameter count mismatch");
    for (auto& [name, p] : params_) {
      if (!j.contains(name))
        throw std::runtime_error("checkpoint missing parameter: " + name);
      const auto& e = j.at(name);
      long rows = e.at("rows").get<long>();
      long cols = e.at("cols").get<long>();
      if (rows != p->value.rows() || cols != p->value.cols())
        throw std::runtime_error("checkpoint shape mismatch for: " + name);
      const auto& data = e.at("data");
      if (static_cast<long>(data.size()) != rows * cols)
        throw std::runtime_error("checkpoint data size mismatch for: " + name);
      for (long i = 0; i < rows * cols; ++i) p->value.data()[i] = data[i].get<double>();
    }
  }

  // Copies values for parameters present in both stores; shapes must agree.
  void copy_shared_from(const ParamStore& other) {
    for (auto& [name, p] : params_) {
      if (!other.has(name)) continue;
      const Parameter& q = other.at(name);
      if (q.value.rows() != p->value.rows() || q.value.cols() != p->value.cols())
        throw std::runtime_error("copy_shared_from shape mismatch: " + name);
      p->value = q.value;
    }
  }

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
  std::uint64_t seed_;
};

struct RmsProp {
  double lr = 1e-4;
  double alpha = 0.9;
  double eps = 1e-8;

  void step(ParamStore& store) const {
    store.for_each([&](Parameter& p) {
      p.rms = alpha * p.rms + (1.0 - alpha) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * p.grad.array() / (p.rms.array().sqrt() + eps);
    });
  }
};

// ---- tape helpers ----------------------------------------------------------

// Per-tape cache of parameter leaves, so each parameter is registered once
// per tape no matter how many times the model touches it.
class ParamBinding {
 public:
  void reset(ad::Tape* tape) {
    tape_ = tape;
    bound_.clear();
  }

  ad::Var operator()(Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    ad::Var v = tape_->leaf(p.value, &p.grad);
    bound_.emplace(&p, v);
    return v;
  }

 private:
  ad::Tape* tape_ = nullptr;
  std::map<const Parameter*, ad::Var> bound_;
};

// y = W x + b for a single column, or column-broadcast over a matrix.
inline ad::Var linear(ad::Tape& t, ad::Var W, ad::Var b, ad::Var x) {
  return t.add_colbias(t.matmul(W, x), b);
}

struct LstmCellParams {
  Parameter* W_ih = nullptr;  // (4H x in)
  Parameter* W_hh = nullptr;  // (4H x H)
  Parameter* b = nullptr;     // (4H x 1)
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

// Gate layout follows the i, f, g, o convention.
inline LstmState lstm_cell(ad::Tape& t, ParamBinding& P, const LstmCellParams& w,
                           ad::Var x, ad::Var h_prev, ad::Var c_prev) {
  int H = static_cast<int>(w.W_hh->value.cols());
  ad::Var gates = t.add_colbias(
      t.add(t.matmul(P(*w.W_ih), x), t.matmul(P(*w.W_hh), h_prev)), P(*w.b));
  ad::Var i = t.sigmoid(t.rows(gates, 0, H));
  ad::Var f = t.sigmoid(t.rows(gates, H, H));
  ad::Var g = t.tanh(t.rows(gates, 2 * H, H));
  ad::Var o = t.sigmoid(t.rows(gates, 3 * H, H));
  ad::Var c = t.add(t.cmul(f, c_prev), t.cmul(i, g));
  ad::Var h = t.cmul(o, t.tanh(c));
  return {h, c};
}

}  // namespace nvem::nn
