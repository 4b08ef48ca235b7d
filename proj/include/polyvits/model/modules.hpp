#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/tensor/autograd.hpp"
#include "polyvits/tensor/nn.hpp"

namespace polyvits::model {

using ag::Var;

inline std::string sub(const std::string& prefix, const std::string& name) { return prefix + "." + name; }
inline std::string sub(const std::string& prefix, const std::string& name, int i) {
  return prefix + "." + name + "." + std::to_string(i);
}

/// Gated dilated-free WaveNet stack with a global conditioning vector added
/// to every layer's pre-activation. Inputs and outputs are masked.
struct WaveNet {
  int hidden = 0;
  std::vector<nn::Conv1d> in_layers;
  std::vector<nn::Linear> cond_layers;
  std::vector<nn::Linear> res_skip;

  WaveNet() = default;
  WaveNet(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int hidden_dim, int kernel, int layers,
          int cond_dim)
      : hidden(hidden_dim) {
    for (int i = 0; i < layers; ++i) {
      in_layers.emplace_back(ps, rng, sub(name, "in", i), hidden, 2 * hidden, kernel);
      cond_layers.emplace_back(ps, rng, sub(name, "cond", i), cond_dim, 2 * hidden);
      res_skip.emplace_back(ps, rng, sub(name, "res_skip", i), hidden, i + 1 < layers ? 2 * hidden : hidden);
    }
  }

  Var operator()(Var x, const Var& mask, const Var& g) const {
    Var output;
    const auto n = in_layers.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Var pre = ag::add_row(in_layers[i](x), cond_layers[i](g));
      const Var acts = ag::tanh(ag::slice_cols(pre, 0, hidden)) * ag::sigmoid(ag::slice_cols(pre, hidden, hidden));
      const Var rs = res_skip[i](acts);
      Var skip;
      if (i + 1 < n) {
        x = nn::masked(x + ag::slice_cols(rs, 0, hidden), mask);
        skip = ag::slice_cols(rs, hidden, hidden);
      } else {
        skip = rs;
      }
      output = output.defined() ? output + skip : skip;
    }
    return nn::masked(output, mask);
  }
};

/// Scaled dot-product attention over rows with padded keys excluded by a
/// large negative bias.
struct MultiHeadAttention {
  int heads = 1;
  nn::Linear q, k, v, o;

  MultiHeadAttention() = default;
  MultiHeadAttention(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int hidden, int n_heads)
      : heads(n_heads),
        q(ps, rng, sub(name, "q"), hidden, hidden),
        k(ps, rng, sub(name, "k"), hidden, hidden),
        v(ps, rng, sub(name, "v"), hidden, hidden),
        o(ps, rng, sub(name, "o"), hidden, hidden) {}

  Var operator()(const Var& x, const Matrix& mask) const {
    const auto T = x.rows();
    const int d = static_cast<int>(x.cols()) / heads;
    Matrix bias = Matrix::Zero(T, T);
    for (Eigen::Index j = 0; j < T; ++j) {
      if (mask(j, 0) == 0.0) bias.col(j).setConstant(-1e9);
    }
    const Var bias_var = ag::constant(std::move(bias));
    const Var Q = q(x);
    const Var K = k(x);
    const Var V = v(x);
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
      const Var qh = ag::slice_cols(Q, h * d, d);
      const Var kh = ag::slice_cols(K, h * d, d);
      const Var vh = ag::slice_cols(V, h * d, d);
      const Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(d))) + bias_var;
      outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
    }
    return o(heads == 1 ? outs[0] : ag::concat_cols(outs));
  }
};

/// Post-norm transformer block with a two-layer convolutional feed-forward.
struct EncoderBlock {
  MultiHeadAttention attention;
  nn::LayerNorm norm1, norm2;
  nn::Conv1d ffn1, ffn2;

  EncoderBlock() = default;
  EncoderBlock(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int hidden, int filter, int heads,
               int kernel)
      : attention(ps, rng, sub(name, "attn"), hidden, heads),
        norm1(ps, sub(name, "norm1"), hidden),
        norm2(ps, sub(name, "norm2"), hidden),
        ffn1(ps, rng, sub(name, "ffn1"), hidden, filter, kernel),
        ffn2(ps, rng, sub(name, "ffn2"), filter, hidden, kernel) {}

  Var operator()(Var x, const Matrix& mask) const {
    const Var m = ag::constant(mask);
    x = norm1(x + attention(x, mask));
    Var y = nn::masked(ag::relu(ffn1(nn::masked(x, m))), m);
    y = nn::masked(ffn2(y), m);
    return nn::masked(norm2(x + y), m);
  }
};

/// Mean-only affine coupling: the second half of the channels is shifted by
/// a function of the first half. The output projection starts at zero, so a
/// fresh layer is the identity.
struct Coupling {
  int half = 0;
  nn::Linear pre;
  WaveNet enc;
  nn::Linear post;

  Coupling() = default;
  Coupling(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int channels, int kernel, int layers,
           int cond_dim)
      : half(channels / 2),
        pre(ps, rng, sub(name, "pre"), channels / 2, channels),
        enc(ps, rng, sub(name, "enc"), channels, kernel, layers, cond_dim),
        post(ps, rng, sub(name, "post"), channels, channels / 2, nn::Init::kZero) {}

  Var shift(const Var& x0, const Var& mask, const Var& g) const {
    const Var h = enc(nn::masked(pre(x0), mask), mask, g);
    return nn::masked(post(h), mask);
  }

  Var forward(const Var& x, const Var& mask, const Var& g) const {
    const Var x0 = ag::slice_cols(x, 0, half);
    const Var x1 = ag::slice_cols(x, half, half);
    return ag::concat_cols({x0, nn::masked(x1 + shift(x0, mask, g), mask)});
  }

  Var inverse(const Var& y, const Var& mask, const Var& g) const {
    const Var y0 = ag::slice_cols(y, 0, half);
    const Var y1 = ag::slice_cols(y, half, half);
    return ag::concat_cols({y0, nn::masked(y1 - shift(y0, mask, g), mask)});
  }
};

/// Coupling layers each followed by a channel reversal.
struct Flow {
  std::vector<Coupling> layers;
  std::vector<int> reversal;

  Flow() = default;
  Flow(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int channels, int kernel, int n_layers,
       int wn_layers, int cond_dim) {
    for (int i = 0; i < n_layers; ++i) layers.emplace_back(ps, rng, sub(name, "coupling", i), channels, kernel, wn_layers, cond_dim);
    for (int c = channels - 1; c >= 0; --c) reversal.push_back(c);
  }

  Var forward(Var x, const Var& mask, const Var& g) const {
    for (const auto& layer : layers) x = ag::gather_cols(layer.forward(x, mask, g), reversal);
    return x;
  }

  Var inverse(Var y, const Var& mask, const Var& g) const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) y = it->inverse(ag::gather_cols(y, reversal), mask, g);
    return y;
  }
};

}  // namespace polyvits::model
