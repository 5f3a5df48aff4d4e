#pragma once

// Tape-based reverse-mode automatic differentiation over row-major Eigen
// matrices. A Graph records every operation of one forward pass; calling
// backward() on a 1x1 result propagates adjoints to every node that needs
// them and accumulates parameter gradients into Parameter::grad.
//
// Batched tensors are 2-D: rows are samples (or sample*node pairs laid out
// as row b*N + i), columns are features.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fieldnode/errors.hpp"

namespace fieldnode::ad {

using Index = Eigen::Index;

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <class T>
class Graph;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, int id) : g_(g), id_(id) {}

  [[nodiscard]] bool valid() const { return g_ != nullptr; }
  [[nodiscard]] Graph<T>& graph() const { return *g_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] const Matrix<T>& value() const { return g_->value(id_); }
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] bool needs_grad() const { return g_->needs_grad(id_); }
  [[nodiscard]] T scalar() const { return value()(0, 0); }

 private:
  Graph<T>* g_ = nullptr;
  int id_ = -1;
};

template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&)>;

  Graph() { nodes_.reserve(1024); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Matrix<T> v) { return push(std::move(v), false, nullptr, {}); }

  Var<T> constant_scalar(T s) {
    Matrix<T> m(1, 1);
    m(0, 0) = s;
    return constant(std::move(m));
  }

  // Leaf for a trainable parameter. Frozen parameters enter as constants, so
  // gradients still flow *through* downstream ops but never into them.
  Var<T> parameter(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    const bool track = grad_enabled_ && !frozen_.contains(&p);
    Var<T> v = push(p.value, track, track ? &p : nullptr, {});
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  void freeze(const Parameter<T>& p) { frozen_.insert(&p); }
  template <class Range>
  void freeze_all(const Range& params) {
    for (const Parameter<T>* p : params) frozen_.insert(p);
  }

  // With gradients disabled every node is a constant (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }

  Var<T> make(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward bw) {
    bool ng = false;
    if (grad_enabled_)
      for (const auto& in : inputs) ng = ng || needs_grad(in.id());
    return push(std::move(value), ng, nullptr, ng ? std::move(bw) : Backward{});
  }

  Var<T> make_from(Matrix<T> value, std::span<const Var<T>> inputs, Backward bw) {
    bool ng = false;
    if (grad_enabled_)
      for (const auto& in : inputs) ng = ng || needs_grad(in.id());
    return push(std::move(value), ng, nullptr, ng ? std::move(bw) : Backward{});
  }

  [[nodiscard]] const Matrix<T>& value(int id) const { return nodes_[id].value; }
  [[nodiscard]] bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  [[nodiscard]] const Matrix<T>& grad(int id) const { return nodes_[id].grad; }
  [[nodiscard]] bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  template <class Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Seeds d(root)/d(root) = 1 and propagates. Parameter gradients are added
  // to whatever Parameter::grad already holds (callers zero them first).
  void backward(const Var<T>& root) {
    require_shape(root.rows() == 1 && root.cols() == 1, "backward: root must be a 1x1 scalar");
    if (!needs_grad(root.id())) return;
    nodes_[root.id()].grad = Matrix<T>::Ones(1, 1);
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this);
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0)
          n.param->grad = n.grad;
        else
          n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  Var<T> push(Matrix<T> value, bool needs_grad, Parameter<T>* p, Backward bw) {
    nodes_.push_back(Node{std::move(value), Matrix<T>(), needs_grad, p, std::move(bw)});
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
  std::unordered_set<const Parameter<T>*> frozen_;
  bool grad_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto& g = a.graph();
  const int ia = a.id(), ib = b.id();
  Matrix<T> out = a.value() + b.value();
  int self = static_cast<int>(g.size());
  return g.make(std::move(out), {a, b}, [ia, ib, self](Graph<T>& gr) {
    gr.accumulate(ia, gr.grad(self));
    gr.accumulate(ib, gr.grad(self));
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto& g = a.graph();
  const int ia = a.id(), ib = b.id();
  int self = static_cast<int>(g.size());
  return g.make(a.value() - b.value(), {a, b}, [ia, ib, self](Graph<T>& gr) {
    gr.accumulate(ia, gr.grad(self));
    gr.accumulate(ib, -gr.grad(self));
  });
}

// Hadamard product.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto& g = a.graph();
  const int ia = a.id(), ib = b.id();
  int self = static_cast<int>(g.size());
  return g.make(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    if (gr.needs_grad(ia)) gr.accumulate(ia, go.cwiseProduct(gr.value(ib)));
    if (gr.needs_grad(ib)) gr.accumulate(ib, go.cwiseProduct(gr.value(ia)));
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  auto& g = a.graph();
  const int ia = a.id();
  int self = static_cast<int>(g.size());
  return g.make(a.value() * s, {a}, [ia, s, self](Graph<T>& gr) { gr.accumulate(ia, gr.grad(self) * s); });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  auto& g = a.graph();
  const int ia = a.id();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value().array() + s;
  return g.make(std::move(out), {a}, [ia, self](Graph<T>& gr) { gr.accumulate(ia, gr.grad(self)); });
}

// a (R x C) + row (1 x C), broadcast over rows.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias must be 1 x cols");
  auto& g = a.graph();
  const int ia = a.id(), ib = row.id();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return g.make(std::move(out), {a, row}, [ia, ib, self](Graph<T>& gr) {
    gr.accumulate(ia, gr.grad(self));
    if (gr.needs_grad(ib)) gr.accumulate(ib, gr.grad(self).colwise().sum());
  });
}

// a (R x C) scaled row-wise by col (R x 1).
template <class T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
  require_shape(col.cols() == 1 && col.rows() == a.rows(), "mul_col: scale must be rows x 1");
  auto& g = a.graph();
  const int ia = a.id(), ic = col.id();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value().array().colwise() * col.value().col(0).array();
  return g.make(std::move(out), {a, col}, [ia, ic, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    if (gr.needs_grad(ia)) {
      Matrix<T> ga = go.array().colwise() * gr.value(ic).col(0).array();
      gr.accumulate(ia, ga);
    }
    if (gr.needs_grad(ic)) gr.accumulate(ic, go.cwiseProduct(gr.value(ia)).rowwise().sum());
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  auto& g = a.graph();
  const int ia = a.id(), ib = b.id();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value() * b.value();
  return g.make(std::move(out), {a, b}, [ia, ib, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    if (gr.needs_grad(ia)) gr.accumulate(ia, go * gr.value(ib).transpose());
    if (gr.needs_grad(ib)) gr.accumulate(ib, gr.value(ia).transpose() * go);
  });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a) { return scale(a, T(-1)); }
template <class T>
Var<T> operator*(T s, const Var<T>& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Unary nonlinearities. `df` maps (input, output) to the local derivative.

namespace detail {

template <class T, class F, class DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  auto& g = a.graph();
  const int ia = a.id();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value().unaryExpr(f);
  return g.make(std::move(out), {a}, [ia, self, df](Graph<T>& gr) {
    const auto& x = gr.value(ia);
    const auto& y = gr.value(self);
    Matrix<T> d = x.binaryExpr(y, df);
    gr.accumulate(ia, gr.grad(self).cwiseProduct(d));
  });
}

template <class T>
T softplus_scalar(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <class T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(a, [](T x) { return detail::sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> elu(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : std::expm1(x); }, [](T x, T y) { return x > T(0) ? T(1) : y + T(1); });
}

template <class T>
Var<T> softplus(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return detail::softplus_scalar(x); }, [](T x, T) { return detail::sigmoid_scalar(x); });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Var<T> reciprocal(const Var<T>& a) {
  return detail::unary(a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& a) {
  auto& g = a.graph();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  int self = static_cast<int>(g.size());
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return g.make(std::move(out), {a}, [ia, r, c, self](Graph<T>& gr) {
    gr.accumulate(ia, Matrix<T>::Constant(r, c, gr.grad(self)(0, 0)));
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// Per-row sum: (R x C) -> (R x 1).
template <class T>
Var<T> row_sum(const Var<T>& a) {
  auto& g = a.graph();
  const int ia = a.id();
  const Index c = a.cols();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value().rowwise().sum();
  return g.make(std::move(out), {a}, [ia, c, self](Graph<T>& gr) {
    Matrix<T> ga = gr.grad(self).col(0).replicate(1, c);
    gr.accumulate(ia, ga);
  });
}

// Row-wise softmax.
template <class T>
Var<T> row_softmax(const Var<T>& a) {
  auto& g = a.graph();
  const int ia = a.id();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const T m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return g.make(std::move(out), {a}, [ia, self](Graph<T>& gr) {
    const auto& y = gr.value(self);
    const auto& go = gr.grad(self);
    Matrix<T> dot = go.cwiseProduct(y).rowwise().sum();
    Matrix<T> ga = y.array() * (go.array().colwise() - dot.col(0).array());
    gr.accumulate(ia, ga);
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <class T>
Var<T> stop_gradient(const Var<T>& a) {
  return a.graph().constant(a.value());
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  require_shape(!parts.empty(), "concat_cols: no inputs");
  auto& g = parts.front().graph();
  const Index r = parts.front().rows();
  Index c = 0;
  for (const auto& p : parts) {
    require_shape(p.rows() == r, "concat_cols: row counts differ");
    c += p.cols();
  }
  Matrix<T> out(r, c);
  std::vector<std::pair<int, Index>> spans;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.cols();
  }
  int self = static_cast<int>(g.size());
  return g.make_from(std::move(out), parts, [spans = std::move(spans), self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    for (const auto& [id, start] : spans)
      if (gr.needs_grad(id)) gr.accumulate(id, go.middleCols(start, gr.value(id).cols()));
  });
}

template <class T>
Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat_cols(std::span<const Var<T>>(v));
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Index start, Index n) {
  require_shape(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols: out of range");
  auto& g = a.graph();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  int self = static_cast<int>(g.size());
  Matrix<T> out = a.value().middleCols(start, n);
  return g.make(std::move(out), {a}, [ia, r, c, start, n, self](Graph<T>& gr) {
    Matrix<T> ga = Matrix<T>::Zero(r, c);
    ga.middleCols(start, n) = gr.grad(self);
    gr.accumulate(ia, ga);
  });
}

// Selects arbitrary columns in the given order.
template <class T>
Var<T> gather_cols(const Var<T>& a, std::vector<int> cols) {
  auto& g = a.graph();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  Matrix<T> out(r, static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    require_shape(cols[j] >= 0 && cols[j] < c, "gather_cols: index out of range");
    out.col(static_cast<Index>(j)) = a.value().col(cols[j]);
  }
  int self = static_cast<int>(g.size());
  return g.make(std::move(out), {a}, [ia, r, c, cols = std::move(cols), self](Graph<T>& gr) {
    Matrix<T> ga = Matrix<T>::Zero(r, c);
    const auto& go = gr.grad(self);
    for (std::size_t j = 0; j < cols.size(); ++j) ga.col(cols[j]) += go.col(static_cast<Index>(j));
    gr.accumulate(ia, ga);
  });
}

// Row-major reshape (memory order preserved).
template <class T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
  require_shape(rows * cols == a.value().size(), "reshape: element count differs");
  auto& g = a.graph();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  int self = static_cast<int>(g.size());
  Matrix<T> out = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return g.make(std::move(out), {a}, [ia, r, c, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    gr.accumulate(ia, Eigen::Map<const Matrix<T>>(go.data(), r, c));
  });
}

// (B x C) -> (B*n x C): row b appears n times consecutively.
template <class T>
Var<T> repeat_rows(const Var<T>& a, Index n) {
  auto& g = a.graph();
  const int ia = a.id();
  const Index b = a.rows(), c = a.cols();
  Matrix<T> out(b * n, c);
  for (Index r = 0; r < b; ++r) out.middleRows(r * n, n) = a.value().row(r).replicate(n, 1);
  int self = static_cast<int>(g.size());
  return g.make(std::move(out), {a}, [ia, b, n, c, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    Matrix<T> ga(b, c);
    for (Index r = 0; r < b; ++r) ga.row(r) = go.middleRows(r * n, n).colwise().sum();
    gr.accumulate(ia, ga);
  });
}

// (n x C) -> (B*n x C): the whole block stacked B times.
template <class T>
Var<T> tile_rows(const Var<T>& a, Index times) {
  auto& g = a.graph();
  const int ia = a.id();
  const Index n = a.rows(), c = a.cols();
  Matrix<T> out = a.value().replicate(times, 1);
  int self = static_cast<int>(g.size());
  return g.make(std::move(out), {a}, [ia, n, c, times, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    Matrix<T> ga = Matrix<T>::Zero(n, c);
    for (Index r = 0; r < times; ++r) ga += go.middleRows(r * n, n);
    gr.accumulate(ia, ga);
  });
}

// (B*n x C) -> (B x C): mean over each consecutive group of n rows.
template <class T>
Var<T> group_mean(const Var<T>& a, Index n) {
  require_shape(n > 0 && a.rows() % n == 0, "group_mean: rows not divisible by group size");
  auto& g = a.graph();
  const int ia = a.id();
  const Index b = a.rows() / n, c = a.cols();
  Matrix<T> out(b, c);
  for (Index r = 0; r < b; ++r) out.row(r) = a.value().middleRows(r * n, n).colwise().mean();
  int self = static_cast<int>(g.size());
  return g.make(std::move(out), {a}, [ia, b, n, c, self](Graph<T>& gr) {
    const auto& go = gr.grad(self);
    Matrix<T> ga(b * n, c);
    const T inv = T(1) / static_cast<T>(n);
    for (Index r = 0; r < b; ++r) ga.middleRows(r * n, n) = (go.row(r) * inv).replicate(n, 1);
    gr.accumulate(ia, ga);
  });
}

// ---------------------------------------------------------------------------
// Self-excluding scaled dot-product attention over groups of n rows.
// For each group: alpha = softmax_j(q_i . k_j / sqrt(D)) over j != i and
// out_i = sum_j alpha_ij v_j. With n == 1 the neighbour set is empty and the
// output is zero.

template <class T>
struct AttentionResult {
  Var<T> out;
  Matrix<T> alpha;  // (B*n x n), row b*n+i holds alpha_i. for group b
};

template <class T>
AttentionResult<T> masked_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index n) {
  require_shape(q.rows() == k.rows() && q.rows() == v.rows() && q.cols() == k.cols(),
                "masked_attention: q/k/v shapes differ");
  require_shape(n > 0 && q.rows() % n == 0, "masked_attention: rows not divisible by node count");
  auto& g = q.graph();
  const Index groups = q.rows() / n;
  const Index dk = q.cols(), dv = v.cols();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
  Matrix<T> alpha = Matrix<T>::Zero(q.rows(), n);
  Matrix<T> out = Matrix<T>::Zero(q.rows(), dv);
  if (n > 1) {
    for (Index b = 0; b < groups; ++b) {
      auto qb = q.value().middleRows(b * n, n);
      auto kb = k.value().middleRows(b * n, n);
      Matrix<T> s = (qb * kb.transpose()) * inv_sqrt;
      for (Index i = 0; i < n; ++i) {
        T m = -std::numeric_limits<T>::infinity();
        for (Index j = 0; j < n; ++j)
          if (j != i) m = std::max(m, s(i, j));
        T z = 0;
        for (Index j = 0; j < n; ++j) {
          const T e = j == i ? T(0) : std::exp(s(i, j) - m);
          alpha(b * n + i, j) = e;
          z += e;
        }
        alpha.row(b * n + i) /= z;
      }
      out.middleRows(b * n, n) = alpha.middleRows(b * n, n) * v.value().middleRows(b * n, n);
    }
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  int self = static_cast<int>(g.size());
  Var<T> res = g.make(std::move(out), {q, k, v}, [iq, ik, iv, n, groups, dk, inv_sqrt, alpha, self](Graph<T>& gr) {
    if (n == 1) return;
    const auto& go = gr.grad(self);
    Matrix<T> gq = Matrix<T>::Zero(groups * n, dk);
    Matrix<T> gk = Matrix<T>::Zero(groups * n, dk);
    Matrix<T> gv = Matrix<T>::Zero(groups * n, gr.value(iv).cols());
    for (Index b = 0; b < groups; ++b) {
      auto ab = alpha.middleRows(b * n, n);
      auto gob = go.middleRows(b * n, n);
      auto vb = gr.value(iv).middleRows(b * n, n);
      gv.middleRows(b * n, n) = ab.transpose() * gob;
      Matrix<T> ga = gob * vb.transpose();
      Matrix<T> dot = ga.cwiseProduct(ab).rowwise().sum();
      Matrix<T> gs = ab.array() * (ga.array().colwise() - dot.col(0).array());
      gs *= inv_sqrt;
      gq.middleRows(b * n, n) = gs * gr.value(ik).middleRows(b * n, n);
      gk.middleRows(b * n, n) = gs.transpose() * gr.value(iq).middleRows(b * n, n);
    }
    gr.accumulate(iq, gq);
    gr.accumulate(ik, gk);
    gr.accumulate(iv, gv);
  });
  return {res, std::move(alpha)};
}

}  // namespace fieldnode::ad
