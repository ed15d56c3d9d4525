#pragma once

// Tape-based reverse-mode differentiation over Eigen double matrices.
// A Tape owns the forward values; Vars are cheap handles into it. Ops are
// matrix-level so the per-node dispatch cost stays negligible next to the
// Eigen kernels. Items that form sets (attention keys, candidates, objects)
// are stacked as COLUMNS throughout the project.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <deque>
#include <vector>

namespace nvem::ad {

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
  int id = -1;
  Tape* tape = nullptr;
  bool valid() const { return tape != nullptr; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const Mat& val(Var v) const { return value_of(v.id); }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }
  int rows(Var v) const { return static_cast<int>(val(v).rows()); }
  int cols(Var v) const { return static_cast<int>(val(v).cols()); }

  // ---- leaves ------------------------------------------------------------

  Var constant(Mat m) {
    int id = push();
    nodes_[id].store = std::move(m);
    nodes_[id].vptr = &nodes_[id].store;
    return Var{id, this};
  }

  Var zeros(int r, int c) { return constant(Mat::Zero(r, c)); }

  // Leaf whose value lives outside the tape; gradients accumulate into
  // *sink after backward(). The pointed-to matrices must outlive the tape.
  Var leaf(const Mat& value, Mat* sink) {
    int id = push();
    nodes_[id].vptr = &value;
    nodes_[id].sink = sink;
    return Var{id, this};
  }

  // ---- arithmetic ----------------------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Var out = make(val(a) + val(b));
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      acc(a, nodes_[o].grad);
      acc(b, nodes_[o].grad);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Var out = make(val(a) - val(b));
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      acc(a, nodes_[o].grad);
      acc(b, -nodes_[o].grad);
    });
    return out;
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var scale(Var a, double s) {
    Var out = make(val(a) * s);
    record(out, [this, a = a.id, s, o = out.id] { acc(a, s * nodes_[o].grad); });
    return out;
  }

  Var cmul(Var a, Var b) {
    check_same_shape(a, b, "cmul");
    Var out = make(val(a).cwiseProduct(val(b)));
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      acc(a, nodes_[o].grad.cwiseProduct(value_of(b)));
      acc(b, nodes_[o].grad.cwiseProduct(value_of(a)));
    });
    return out;
  }

  // scalar (1x1) times matrix
  Var smul(Var s, Var x) {
    if (val(s).size() != 1) throw std::invalid_argument("smul: scalar not 1x1");
    Var out = make(val(s)(0, 0) * val(x));
    record(out, [this, s = s.id, x = x.id, o = out.id] {
      acc(x, value_of(s)(0, 0) * nodes_[o].grad);
      Mat gs(1, 1);
      gs(0, 0) = nodes_[o].grad.cwiseProduct(value_of(x)).sum();
      acc(s, gs);
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows())
      throw std::invalid_argument("matmul: inner dimension mismatch");
    Var out = make(val(a) * val(b));
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      acc(a, nodes_[o].grad * value_of(b).transpose());
      acc(b, value_of(a).transpose() * nodes_[o].grad);
    });
    return out;
  }

  // A^T * B
  Var matmul_tn(Var a, Var b) {
    if (val(a).rows() != val(b).rows())
      throw std::invalid_argument("matmul_tn: inner dimension mismatch");
    Var out = make(val(a).transpose() * val(b));
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      acc(a, value_of(b) * nodes_[o].grad.transpose());
      acc(b, value_of(a) * nodes_[o].grad);
    });
    return out;
  }

  // A * B^T
  Var matmul_nt(Var a, Var b) {
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    Var out = make(val(a) * val(b).transpose());
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      acc(a, nodes_[o].grad * value_of(b));
      acc(b, nodes_[o].grad.transpose() * value_of(a));
    });
    return out;
  }

  // ---- shape ops -----------------------------------------------------------

  Var vcat(Var a, Var b) {
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("vcat: column mismatch");
    Mat m(val(a).rows() + val(b).rows(), val(a).cols());
    m.topRows(val(a).rows()) = val(a);
    m.bottomRows(val(b).rows()) = val(b);
    Var out = make(std::move(m));
    long ra = val(a).rows();
    record(out, [this, a = a.id, b = b.id, o = out.id, ra] {
      const Mat& g = nodes_[o].grad;
      acc(a, g.topRows(ra));
      acc(b, g.bottomRows(g.rows() - ra));
    });
    return out;
  }

  Var rows(Var x, int r0, int n) {
    Var out = make(val(x).middleRows(r0, n));
    record(out, [this, x = x.id, o = out.id, r0, n] {
      ensure_grad(x);
      nodes_[x].grad.middleRows(r0, n) += nodes_[o].grad;
    });
    return out;
  }

  Var cols(Var x, int c0, int n) {
    Var out = make(val(x).middleCols(c0, n));
    record(out, [this, x = x.id, o = out.id, c0, n] {
      ensure_grad(x);
      nodes_[x].grad.middleCols(c0, n) += nodes_[o].grad;
    });
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    long r = val(parts[0]).rows();
    long c = 0;
    for (Var p : parts) {
      if (val(p).rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
      c += val(p).cols();
    }
    Mat m(r, c);
    std::vector<int> ids;
    std::vector<long> offs;
    long at = 0;
    for (Var p : parts) {
      m.middleCols(at, val(p).cols()) = val(p);
      ids.push_back(p.id);
      offs.push_back(at);
      at += val(p).cols();
    }
    Var out = make(std::move(m));
    record(out, [this, ids = std::move(ids), offs = std::move(offs), o = out.id] {
      const Mat& g = nodes_[o].grad;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        long w = value_of(ids[i]).cols();
        ensure_grad(ids[i]);
        nodes_[ids[i]].grad += g.middleCols(offs[i], w);
      }
    });
    return out;
  }

  // Embedding lookup: table is (dim x vocab), result (dim x |ids|).
  Var gather_cols(Var table, std::vector<int> ids) {
    const Mat& t = val(table);
    Mat m(t.rows(), static_cast<long>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= t.cols())
        throw std::out_of_range("gather_cols: id out of range");
      m.col(static_cast<long>(i)) = t.col(ids[i]);
    }
    Var out = make(std::move(m));
    record(out, [this, tb = table.id, ids = std::move(ids), o = out.id] {
      ensure_grad(tb);
      const Mat& g = nodes_[o].grad;
      for (std::size_t i = 0; i < ids.size(); ++i)
        nodes_[tb].grad.col(ids[i]) += g.col(static_cast<long>(i));
    });
    return out;
  }

  // X (d x n) + b (d x 1) broadcast over columns.
  Var add_colbias(Var x, Var b) {
    if (val(b).cols() != 1 || val(b).rows() != val(x).rows())
      throw std::invalid_argument("add_colbias: bias shape");
    Var out = make(val(x).colwise() + Eigen::VectorXd(val(b).col(0)));
    record(out, [this, x = x.id, b = b.id, o = out.id] {
      acc(x, nodes_[o].grad);
      acc(b, nodes_[o].grad.rowwise().sum());
    });
    return out;
  }

  // ---- nonlinearities --------------------------------------------------------

  Var tanh(Var x) {
    Var out = make(val(x).array().tanh().matrix());
    record(out, [this, x = x.id, o = out.id] {
      const Mat& y = value_of(o);
      acc(x, nodes_[o].grad.cwiseProduct((1.0 - y.array().square()).matrix()));
    });
    return out;
  }

  Var sigmoid(Var x) {
    Var out = make((1.0 / (1.0 + (-val(x)).array().exp())).matrix());
    record(out, [this, x = x.id, o = out.id] {
      const Mat& y = value_of(o);
      acc(x, nodes_[o].grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
    });
    return out;
  }

  Var square(Var x) {
    Var out = make(val(x).array().square().matrix());
    record(out, [this, x = x.id, o = out.id] {
      acc(x, 2.0 * nodes_[o].grad.cwiseProduct(value_of(x)));
    });
    return out;
  }

  // ---- softmax family ----------------------------------------------------------

  // Masked softmax over an (n x 1) score vector. Masked entries get weight
  // exactly 0. Throws if every entry is masked.
  Var softmax_masked(Var scores, const std::vector<std::uint8_t>* mask = nullptr) {
    const Mat& s = val(scores);
    if (s.cols() != 1) throw std::invalid_argument("softmax_masked: scores not a column");
    long n = s.rows();
    if (mask && static_cast<long>(mask->size()) != n)
      throw std::invalid_argument("softmax_masked: mask length mismatch");
    double mx = -std::numeric_limits<double>::infinity();
    for (long i = 0; i < n; ++i)
      if (!mask || (*mask)[i]) mx = std::max(mx, s(i, 0));
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::domain_error("softmax_masked: all positions masked");
    Mat y = Mat::Zero(n, 1);
    double z = 0.0;
    for (long i = 0; i < n; ++i)
      if (!mask || (*mask)[i]) {
        y(i, 0) = std::exp(s(i, 0) - mx);
        z += y(i, 0);
      }
    y /= z;
    Var out = make(std::move(y));
    record(out, [this, sc = scores.id, o = out.id] {
      const Mat& y = value_of(o);
      const Mat& g = nodes_[o].grad;
      double dot = y.cwiseProduct(g).sum();
      acc(sc, y.cwiseProduct((g.array() - dot).matrix()));
    });
    return out;
  }

  Var log_softmax(Var scores) {
    const Mat& s = val(scores);
    if (s.cols() != 1) throw std::invalid_argument("log_softmax: scores not a column");
    double mx = s.maxCoeff();
    double z = (s.array() - mx).exp().sum();
    Var out = make((s.array() - mx - std::log(z)).matrix());
    record(out, [this, sc = scores.id, o = out.id] {
      const Mat& y = value_of(o);
      const Mat& g = nodes_[o].grad;
      double gsum = g.sum();
      acc(sc, g - (y.array().exp() * gsum).matrix());
    });
    return out;
  }

  // ---- reductions ------------------------------------------------------------

  Var sum(Var x) {
    Mat m(1, 1);
    m(0, 0) = val(x).sum();
    Var out = make(std::move(m));
    record(out, [this, x = x.id, o = out.id] {
      acc(x, Mat::Constant(value_of(x).rows(), value_of(x).cols(),
                           nodes_[o].grad(0, 0)));
    });
    return out;
  }

  Var dot(Var a, Var b) {
    check_same_shape(a, b, "dot");
    Mat m(1, 1);
    m(0, 0) = val(a).cwiseProduct(val(b)).sum();
    Var out = make(std::move(m));
    record(out, [this, a = a.id, b = b.id, o = out.id] {
      double g = nodes_[o].grad(0, 0);
      acc(a, g * value_of(b));
      acc(b, g * value_of(a));
    });
    return out;
  }

  Var pick(Var x, int r, int c = 0) {
    Mat m(1, 1);
    m(0, 0) = val(x)(r, c);
    Var out = make(std::move(m));
    record(out, [this, x = x.id, o = out.id, r, c] {
      ensure_grad(x);
      nodes_[x].grad(r, c) += nodes_[o].grad(0, 0);
    });
    return out;
  }

  Var stop_grad(Var x) { return constant(val(x)); }

  // ---- backward -----------------------------------------------------------------

  void backward(Var loss) {
    if (val(loss).size() != 1) throw std::invalid_argument("backward: loss not scalar");
    for (auto& n : nodes_) {
      n.has_grad = false;
      if (n.grad.size() > 0) n.grad.setZero();
    }
    ensure_grad(loss.id);
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.back) n.back();
      if (n.sink) *n.sink += n.grad;
    }
  }

 private:
  struct Node {
    const Mat* vptr = nullptr;
    Mat store;
    Mat grad;
    bool has_grad = false;
    std::function<void()> back;
    Mat* sink = nullptr;
  };

  std::deque<Node> nodes_;

  const Mat& value_of(int id) const { return *nodes_[id].vptr; }

  int push() {
    nodes_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var make(Mat m) {
    int id = push();
    nodes_[id].store = std::move(m);
    nodes_[id].vptr = &nodes_[id].store;
    return Var{id, this};
  }

  template <class F>
  void record(Var out, F&& back) {
    nodes_[out.id].back = std::forward<F>(back);
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      const Mat& v = value_of(id);
      if (n.grad.rows() != v.rows() || n.grad.cols() != v.cols())
        n.grad = Mat::Zero(v.rows(), v.cols());
      else
        n.grad.setZero();
      n.has_grad = true;
    }
  }

  template <class D>
  void acc(int id, const Eigen::MatrixBase<D>& g) {
    ensure_grad(id);
    nodes_[id].grad += g;
  }

  void check_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
};

}  // namespace nvem::ad
