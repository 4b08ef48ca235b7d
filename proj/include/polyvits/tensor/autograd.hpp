#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/tensor/matrix.hpp"

// Reverse-mode automatic differentiation over 2-D matrices.
//
// Every op returns a Var holding the value and, when gradients are enabled
// and any input requires them, a closure that pushes the output gradient
// back into the inputs. Leaves created with `parameter` keep accumulating
// gradients across backward passes until they are zeroed.

namespace polyvits::ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

  void zero_grad() { node_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

inline Var scalar_constant(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

inline Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

/// Cuts the graph: same value, no history.
inline Var detach(const Var& v) { return constant(v.value()); }

inline Var make_result(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

inline Var make_result(Matrix value, const std::vector<Var>& inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

/// Back-propagates from a 1x1 `loss` into every reachable input that
/// requires gradients. Intermediate gradients are released afterwards.
inline void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) fail(ErrorKind::kLayout, "backward needs a scalar loss");
  if (!loss.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) {
      node->backward(*node);
      node->grad.resize(0, 0);
    }
  }
}

namespace detail {
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::kLayout, std::string(op) + ": shape " + std::to_string(a.rows()) + "x" +
                                 std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                 std::to_string(b.cols()));
  }
}
inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }
}  // namespace detail

// ---- binary arithmetic -----------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::kLayout, "matmul: inner dimensions " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate_expr(pa.value.transpose() * self.grad);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad);
    if (pb.requires_grad) pb.accumulate_expr(-self.grad);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate_expr(self.grad.cwiseProduct(pa.value));
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_same_shape(a, b, "div");
  return make_result(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pb = detail::parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseQuotient(pb.value));
    if (pb.requires_grad) {
      pb.accumulate_expr(-self.grad.cwiseProduct(pa.value).cwiseQuotient(pb.value.cwiseProduct(pb.value)));
    }
  });
}

/// a + row, with a 1 x C row broadcast over every row of a.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) fail(ErrorKind::kLayout, "add_row: row shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pr = detail::parent(self, 1);
    if (pa.requires_grad) pa.accumulate(self.grad);
    if (pr.requires_grad) pr.accumulate_expr(self.grad.colwise().sum());
  });
}

/// a * row, with a 1 x C row broadcast over every row of a.
inline Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) fail(ErrorKind::kLayout, "mul_row: row shape mismatch");
  Matrix out = a.value();
  out.array().rowwise() *= row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pr = detail::parent(self, 1);
    if (pa.requires_grad) {
      Matrix g = self.grad;
      g.array().rowwise() *= pr.value.row(0).array();
      pa.accumulate(g);
    }
    if (pr.requires_grad) pr.accumulate_expr(self.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

/// a * col, with a T x 1 column broadcast over every column of a.
inline Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) fail(ErrorKind::kLayout, "mul_col: column shape mismatch");
  Matrix out = a.value();
  out.array().colwise() *= col.value().col(0).array();
  return make_result(std::move(out), {a, col}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Node& pc = detail::parent(self, 1);
    if (pa.requires_grad) {
      Matrix g = self.grad;
      g.array().colwise() *= pc.value.col(0).array();
      pa.accumulate(g);
    }
    if (pc.requires_grad) pc.accumulate_expr(self.grad.cwiseProduct(pa.value).rowwise().sum());
  });
}

inline Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    Node& pa = detail::parent(self, 0);
    pa.accumulate_expr(self.grad * s);
  });
}

inline Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return make_result(std::move(out), {a}, [](Node& self) { detail::parent(self, 0).accumulate(self.grad); });
}

// ---- elementwise nonlinearities --------------------------------------------

namespace detail {
template <typename Forward, typename Derivative>
Var unary(const Var& a, Forward f, Derivative df) {
  Matrix out = a.value().unaryExpr(f);
  return make_result(std::move(out), {a}, [df](Node& self) {
    Node& pa = detail::parent(self, 0);
    Matrix g(self.grad.rows(), self.grad.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g.data()[i] = self.grad.data()[i] * df(pa.value.data()[i], self.value.data()[i]);
    }
    pa.accumulate(g);
  });
}
}  // namespace detail

inline Var tanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; }, [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

/// |x| with subgradient 0 at 0.
inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); }, [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

/// Hard clamp; gradient passes only where the input is strictly inside.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

/// max(x, floor) with gradient only above the floor.
inline Var floor_at(const Var& a, double floor) {
  return detail::unary(
      a, [floor](double x) { return x < floor ? floor : x; }, [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

inline Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    pa.accumulate(Matrix::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0)));
  });
}

inline Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Row sums as a T x 1 column.
inline Var sum_cols(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    Matrix g(pa.value.rows(), pa.value.cols());
    g.colwise() = self.grad.col(0);
    pa.accumulate(g);
  });
}

// ---- shape manipulation ----------------------------------------------------

inline Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {a}, [](Node& self) {
    detail::parent(self, 0).accumulate_expr(self.grad.transpose());
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) fail(ErrorKind::kLayout, "slice_rows out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    Node& pa = detail::parent(self, 0);
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    g.middleRows(start, count) = self.grad;
    pa.accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) fail(ErrorKind::kLayout, "slice_cols out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    Node& pa = detail::parent(self, 0);
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    g.middleCols(start, count) = self.grad;
    pa.accumulate(g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::kLayout, "concat_cols of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) fail(ErrorKind::kLayout, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.accumulate(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorKind::kLayout, "concat_rows of nothing");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) fail(ErrorKind::kLayout, "concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.accumulate(self.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

/// Output row i is input row index[i]; index -1 yields a zero row.
inline Var gather_rows(const Var& a, std::vector<int> index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r >= a.rows()) fail(ErrorKind::kLayout, "gather_rows index out of range");
    if (r < 0) {
      out.row(static_cast<Eigen::Index>(i)).setZero();
    } else {
      out.row(static_cast<Eigen::Index>(i)) = a.value().row(r);
    }
  }
  return make_result(std::move(out), {a}, [index = std::move(index)](Node& self) {
    Node& pa = detail::parent(self, 0);
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) g.row(index[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    pa.accumulate(g);
  });
}

/// Output column j is input column index[j].
inline Var gather_cols(const Var& a, std::vector<int> index) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] < 0 || index[j] >= a.cols()) fail(ErrorKind::kLayout, "gather_cols index out of range");
    out.col(static_cast<Eigen::Index>(j)) = a.value().col(index[j]);
  }
  return make_result(std::move(out), {a}, [index = std::move(index)](Node& self) {
    Node& pa = detail::parent(self, 0);
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    for (std::size_t j = 0; j < index.size(); ++j) g.col(index[j]) += self.grad.col(static_cast<Eigen::Index>(j));
    pa.accumulate(g);
  });
}

/// Single-column signal (N x 1) to frames: out(i, j) = x(index(i, j)), with
/// index -1 producing zero.
inline Var gather_signal(const Var& x, Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> index) {
  if (x.cols() != 1) fail(ErrorKind::kLayout, "gather_signal needs a single-column signal");
  Matrix out(index.rows(), index.cols());
  for (Eigen::Index i = 0; i < index.size(); ++i) {
    const int k = index.data()[i];
    if (k >= x.rows()) fail(ErrorKind::kLayout, "gather_signal index out of range");
    out.data()[i] = k < 0 ? 0.0 : x.value()(k, 0);
  }
  return make_result(std::move(out), {x}, [index = std::move(index)](Node& self) {
    Node& px = detail::parent(self, 0);
    Matrix g = Matrix::Zero(px.value.rows(), 1);
    for (Eigen::Index i = 0; i < index.size(); ++i) {
      const int k = index.data()[i];
      if (k >= 0) g(k, 0) += self.grad.data()[i];
    }
    px.accumulate(g);
  });
}

/// Unfolds a T x C sequence into T_out x (kernel*C) patches for a 1-D
/// convolution with zero padding. Column block j holds input row
/// t*stride + j*dilation - pad_left.
inline Var im2col(const Var& x, int kernel, int dilation, int stride, int pad_left, int pad_right) {
  const auto T = static_cast<int>(x.rows());
  const auto C = static_cast<int>(x.cols());
  const int span = dilation * (kernel - 1) + 1;
  const int padded = T + pad_left + pad_right;
  if (padded < span) fail(ErrorKind::kLayout, "im2col: sequence shorter than the kernel span");
  const int t_out = (padded - span) / stride + 1;
  Matrix out = Matrix::Zero(t_out, static_cast<Eigen::Index>(kernel) * C);
  for (int t = 0; t < t_out; ++t) {
    for (int j = 0; j < kernel; ++j) {
      const int src = t * stride + j * dilation - pad_left;
      if (src >= 0 && src < T) out.block(t, static_cast<Eigen::Index>(j) * C, 1, C) = x.value().row(src);
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& px = detail::parent(self, 0);
    Matrix g = Matrix::Zero(T, C);
    for (int t = 0; t < t_out; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const int src = t * stride + j * dilation - pad_left;
        if (src >= 0 && src < T) g.row(src) += self.grad.block(t, static_cast<Eigen::Index>(j) * C, 1, C);
      }
    }
    px.accumulate(g);
  });
}

/// Mean over consecutive groups of `factor` rows; trailing rows that do not
/// fill a group are dropped.
inline Var avg_pool_rows(const Var& x, int factor) {
  const Eigen::Index t_out = x.rows() / factor;
  Matrix out(t_out, x.cols());
  for (Eigen::Index t = 0; t < t_out; ++t) out.row(t) = x.value().middleRows(t * factor, factor).colwise().mean();
  return make_result(std::move(out), {x}, [factor, t_out](Node& self) {
    Node& px = detail::parent(self, 0);
    Matrix g = Matrix::Zero(px.value.rows(), px.value.cols());
    for (Eigen::Index t = 0; t < t_out; ++t) {
      for (int k = 0; k < factor; ++k) g.row(t * factor + k) = self.grad.row(t) / factor;
    }
    px.accumulate(g);
  });
}

// ---- normalisation ---------------------------------------------------------

inline Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = detail::parent(self, 0);
    const Matrix& y = self.value;
    const ColVector dot = y.cwiseProduct(self.grad).rowwise().sum();
    Matrix centered = self.grad;
    centered.colwise() -= dot;
    pa.accumulate_expr(y.cwiseProduct(centered));
  });
}

/// Per-row normalisation to zero mean and unit variance, then gamma/beta.
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const Eigen::Index C = x.cols();
  Matrix xhat(x.rows(), C);
  ColVector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x, gamma, beta}, [xhat, inv_std, C](Node& self) {
    Node& px = detail::parent(self, 0);
    Node& pg = detail::parent(self, 1);
    Node& pb = detail::parent(self, 2);
    if (pg.requires_grad) pg.accumulate_expr(self.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate_expr(self.grad.colwise().sum());
    if (px.requires_grad) {
      Matrix dxhat = self.grad;
      dxhat.array().rowwise() *= pg.value.row(0).array();
      Matrix g(dxhat.rows(), C);
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double mean_d = dxhat.row(r).mean();
        const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(C);
        g.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
      }
      px.accumulate(g);
    }
  });
}

// ---- convenience -----------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace polyvits::ag
