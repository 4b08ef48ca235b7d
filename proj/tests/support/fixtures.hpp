#pragma once

#include <random>
#include <string>

#include "polyvits/config/run_config.hpp"
#include "polyvits/model/generator.hpp"
#include "polyvits/tensor/nn.hpp"

namespace polyvits::testing {

/// Small model for unit tests: H=16, 8 kHz, hop 64.
inline RunConfig tiny_config(bool use_context = false) {
  RunConfig c;
  auto& m = c.model;
  m.hidden = 16;
  m.filter = 32;
  m.heads = 2;
  m.encoder_blocks = 2;
  m.language_dim = 8;
  m.speaker_dim = 8;
  m.posterior_layers = 2;
  m.flow_layers = 2;
  m.flow_wn_layers = 2;
  m.duration_hidden = 16;
  m.decoder_channels = 16;
  m.upsample_rates = {4, 4, 4};
  m.discriminator_scales = 2;
  m.discriminator_depth = 3;
  m.discriminator_channels = 8;
  m.use_context = use_context;
  c.data.sample_rate = 8000;
  c.data.n_fft = 256;
  c.data.hop = 64;
  c.data.win = 256;
  c.data.mel_channels = 20;
  c.data.segment_frames = 16;
  c.train.batch_size = 2;
  c.context.dim = 8;
  validate(c);
  return c;
}

/// A short greeting in each supported language's script.
inline std::string sample_text(const std::string& language) {
  if (language == "english") return "hello world";
  if (language == "bengali") return "নমস্কার বন্ধু";
  if (language == "telugu") return "నమస్కారం మిత్రమా";
  if (language == "kannada") return "ನಮಸ್ಕಾರ ಗೆಳೆಯ";
  return "नमस्ते दोस्त";
}

inline void randomize(const ag::Var& param, std::mt19937_64& rng, double stddev) {
  ag::Var p = param;
  p.mutable_value() = nn::normal_matrix(p.rows(), p.cols(), stddev, rng);
}

/// Gives every zero-initialized flow output projection random weights so the
/// flow is no longer the identity.
inline void perturb_flow(model::Generator& g, std::mt19937_64& rng, double stddev = 0.1) {
  for (const auto& [name, p] : g.params.all()) {
    if (name.rfind("flow.", 0) == 0 && name.find(".post.") != std::string::npos) randomize(p, rng, stddev);
  }
}

}  // namespace polyvits::testing
