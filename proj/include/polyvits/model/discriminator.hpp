#pragma once

#include <random>
#include <string>
#include <vector>

#include "polyvits/config/run_config.hpp"
#include "polyvits/error.hpp"
#include "polyvits/model/modules.hpp"

namespace polyvits::model {

struct DiscriminatorOutput {
  std::vector<Var> scores;                 // one column per scale
  std::vector<std::vector<Var>> features;  // [scale][layer]
};

/// Convolutional critic over one time resolution. `depth` feature layers
/// (the first at stride 1, the rest strided by 4) feed a score convolution.
struct ScaleDiscriminator {
  std::vector<nn::Conv1d> layers;
  nn::Conv1d score;

  ScaleDiscriminator() = default;
  ScaleDiscriminator(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int depth, int channels) {
    layers.emplace_back(ps, rng, sub(name, "conv", 0), 1, channels, 15);
    for (int i = 1; i < depth; ++i) {
      layers.emplace_back(ps, rng, sub(name, "conv", i), channels, channels, 9, 1, 4, nn::Init::kDefault, 4);
    }
    score = nn::Conv1d(ps, rng, sub(name, "score"), channels, 1, 3);
  }

  Var operator()(Var x, std::vector<Var>& features) const {
    for (const auto& layer : layers) {
      x = ag::leaky_relu(layer(x), 0.1);
      features.push_back(x);
    }
    return score(x);
  }
};

/// Scale i sees the waveform average-pooled by 2^i.
class Discriminator {
 public:
  Discriminator(const ModelConfig& m, std::uint64_t seed) : depth_(m.discriminator_depth) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < m.discriminator_scales; ++i) {
      scales_.emplace_back(params, rng, sub("disc", "scale", i), m.discriminator_depth, m.discriminator_channels);
    }
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  nn::ParameterSet params;

  int depth() const { return depth_; }
  int scale_count() const { return static_cast<int>(scales_.size()); }

  /// `wave` is N x 1.
  DiscriminatorOutput operator()(const Var& wave) const {
    if (wave.rows() < 1 || wave.cols() != 1) fail(ErrorKind::kLayout, "discriminator needs a non-empty N x 1 waveform");
    DiscriminatorOutput out;
    Var x = wave;
    for (std::size_t i = 0; i < scales_.size(); ++i) {
      if (i > 0) {
        if (x.rows() < 2) fail(ErrorKind::kLayout, "waveform too short for the discriminator scales");
        x = ag::avg_pool_rows(x, 2);
      }
      out.features.emplace_back();
      out.scores.push_back(scales_[i](x, out.features.back()));
    }
    return out;
  }

 private:
  int depth_;
  std::vector<ScaleDiscriminator> scales_;
};

}  // namespace polyvits::model
