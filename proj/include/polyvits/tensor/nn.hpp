#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/tensor/autograd.hpp"

namespace polyvits::nn {

using ag::Var;

/// Named trainable parameters. Names are hierarchical ("flow.0.post.weight")
/// and the map keeps them sorted, which fixes the serialization order.
class ParameterSet {
 public:
  Var create(const std::string& name, Matrix init) {
    if (params_.count(name) != 0) fail(ErrorKind::kSchema, "duplicate parameter " + name);
    Var v = ag::parameter(std::move(init));
    params_.emplace(name, v);
    return v;
  }

  const std::map<std::string, Var>& all() const { return params_; }

  Var at(const std::string& name) const {
    const auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::kSchema, "unknown parameter " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v.value().size());
    return n;
  }

 private:
  std::map<std::string, Var> params_;
};

inline Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

enum class Init { kDefault, kZero };

/// y = x W + b with W stored as in x out.
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int in, int out,
         Init init = Init::kDefault) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ps.create(name + ".weight", init == Init::kZero ? Matrix::Zero(in, out) : normal_matrix(in, out, stddev, rng));
    bias = ps.create(name + ".bias", Matrix::Zero(1, out));
  }

  Var operator()(const Var& x) const { return ag::add_row(ag::matmul(x, weight), bias); }
};

/// 1-D convolution along rows with "same" zero padding (stride 1) or
/// explicit padding; weight is (kernel*in) x out.
struct Conv1d {
  Var weight;
  Var bias;
  int kernel = 1;
  int dilation = 1;
  int stride = 1;
  int pad_left = 0;
  int pad_right = 0;

  Conv1d() = default;
  Conv1d(ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int in, int out, int kernel_size,
         int dilation_rate = 1, int stride_size = 1, Init init = Init::kDefault, int padding = -1)
      : kernel(kernel_size), dilation(dilation_rate), stride(stride_size) {
    const int total_pad = padding >= 0 ? 2 * padding : dilation * (kernel - 1);
    pad_left = total_pad / 2;
    pad_right = total_pad - pad_left;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    weight = ps.create(name + ".weight", init == Init::kZero ? Matrix::Zero(static_cast<Eigen::Index>(kernel) * in, out)
                                                             : normal_matrix(static_cast<Eigen::Index>(kernel) * in, out, stddev, rng));
    bias = ps.create(name + ".bias", Matrix::Zero(1, out));
  }

  Var operator()(const Var& x) const {
    if (kernel == 1 && stride == 1) return ag::add_row(ag::matmul(x, weight), bias);
    return ag::add_row(ag::matmul(ag::im2col(x, kernel, dilation, stride, pad_left, pad_right), weight), bias);
  }
};

struct Embedding {
  Var table;

  Embedding() = default;
  Embedding(ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int count, int dim, double stddev) {
    table = ps.create(name, normal_matrix(count, dim, stddev, rng));
  }

  Var operator()(const std::vector<int>& ids) const {
    for (int id : ids) {
      if (id >= table.rows()) fail(ErrorKind::kOutOfRange, "embedding id " + std::to_string(id) + " out of range");
    }
    return ag::gather_rows(table, ids);
  }
  Var row(int id) const { return (*this)(std::vector<int>{id}); }
  int count() const { return static_cast<int>(table.rows()); }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& name, int dim) {
    gamma = ps.create(name + ".gamma", Matrix::Ones(1, dim));
    beta = ps.create(name + ".beta", Matrix::Zero(1, dim));
  }

  Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gamma, beta); }
};

/// Zeroes padded rows; mask is T x 1 with 1 on valid rows.
inline Var masked(const Var& x, const Var& mask) { return ag::mul_col(x, mask); }

inline Matrix sequence_mask(Eigen::Index total, Eigen::Index valid) {
  Matrix m = Matrix::Zero(total, 1);
  m.topRows(valid).setOnes();
  return m;
}

}  // namespace polyvits::nn
