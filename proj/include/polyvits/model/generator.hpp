#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "polyvits/config/run_config.hpp"
#include "polyvits/context/features.hpp"
#include "polyvits/error.hpp"
#include "polyvits/frontend/language.hpp"
#include "polyvits/frontend/phoneme_sequence.hpp"
#include "polyvits/model/modules.hpp"
#include "polyvits/tensor/autograd.hpp"
#include "polyvits/tensor/nn.hpp"

namespace polyvits::model {

struct PriorStats {
  Var mu;      // P x H
  Var logvar;  // P x H
  Var hidden;  // P x H
};

struct LatentSequence {
  Var z;        // F x H
  Matrix mask;  // F x 1
};

struct PosteriorStats {
  LatentSequence latent;
  Var mu;
  Var logvar;
};

struct DurationPrediction {
  Matrix log_durations;     // P x 1
  std::vector<int> frames;  // ceil(exp(log_durations) * length_scale), at least 1

  int total() const {
    int t = 0;
    for (int f : frames) t += f;
    return t;
  }
};

inline void check_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) fail(ErrorKind::kNonFinite, what + " contains non-finite values");
}

/// Standard normal noise for the first `valid` rows; padded rows stay zero so
/// the draws do not depend on padding.
inline Matrix masked_noise(Eigen::Index rows, Eigen::Index cols, Eigen::Index valid, std::mt19937_64& rng) {
  Matrix out = Matrix::Zero(rows, cols);
  out.topRows(valid) = nn::normal_matrix(valid, cols, 1.0, rng);
  return out;
}

inline Eigen::Index valid_rows(const Matrix& mask) {
  Eigen::Index n = 0;
  while (n < mask.rows() && mask(n, 0) != 0.0) ++n;
  return n;
}

struct TextEncoder {
  int hidden = 0;
  nn::Embedding symbols;
  std::optional<ContextFusion> fusion;
  nn::Linear language_proj, speaker_proj;
  std::vector<EncoderBlock> blocks;
  nn::Linear proj;
  double logvar_min = -9.0;
  double logvar_max = 4.0;

  TextEncoder() = default;
  TextEncoder(nn::ParameterSet& ps, std::mt19937_64& rng, const ModelConfig& m, int vocab_size, int context_dim)
      : hidden(m.hidden),
        symbols(ps, rng, "text.symbols", vocab_size, m.hidden, 1.0 / std::sqrt(static_cast<double>(m.hidden))),
        logvar_min(m.logvar_min),
        logvar_max(m.logvar_max) {
    if (m.use_context) fusion.emplace(ps, rng, "text.context", context_dim, m.hidden);
    language_proj = nn::Linear(ps, rng, "text.language_proj", m.language_dim, m.hidden);
    speaker_proj = nn::Linear(ps, rng, "text.speaker_proj", m.speaker_dim, m.hidden);
    for (int i = 0; i < m.encoder_blocks; ++i) {
      blocks.emplace_back(ps, rng, sub("text", "block", i), m.hidden, m.filter, m.heads, m.encoder_kernel);
    }
    proj = nn::Linear(ps, rng, "text.proj", m.hidden, 2 * m.hidden);
  }

  PriorStats operator()(const std::vector<int>& ids, const Matrix* context, const Var& lang, const Var& spk,
                        const Matrix& mask) const {
    const Var m = ag::constant(mask);
    Var x = ag::scale(symbols(ids), std::sqrt(static_cast<double>(hidden)));
    if (fusion) x = (*fusion)(x, ag::constant(*context));
    x = nn::masked(ag::add_row(x, language_proj(lang) + speaker_proj(spk)), m);
    for (const auto& block : blocks) x = block(x, mask);
    const Var stats = nn::masked(proj(x), m);
    return {ag::slice_cols(stats, 0, hidden),
            nn::masked(ag::clamp(ag::slice_cols(stats, hidden, hidden), logvar_min, logvar_max), m), x};
  }
};

struct PosteriorEncoder {
  int hidden = 0;
  nn::Linear pre;
  WaveNet enc;
  nn::Linear proj;
  double logvar_min = -9.0;
  double logvar_max = 4.0;

  PosteriorEncoder() = default;
  PosteriorEncoder(nn::ParameterSet& ps, std::mt19937_64& rng, const ModelConfig& m, int spec_bins)
      : hidden(m.hidden),
        pre(ps, rng, "posterior.pre", spec_bins, m.hidden),
        enc(ps, rng, "posterior.enc", m.hidden, m.wn_kernel, m.posterior_layers, m.speaker_dim),
        proj(ps, rng, "posterior.proj", m.hidden, 2 * m.hidden),
        logvar_min(m.logvar_min),
        logvar_max(m.logvar_max) {}

  /// Samples z when `noise` is given, else z = mu.
  PosteriorStats operator()(const Matrix& linear, const Var& spk, const Matrix& mask, std::mt19937_64* noise) const {
    const Var m = ag::constant(mask);
    const Var x = nn::masked(pre(ag::constant(linear)), m);
    const Var stats = nn::masked(proj(enc(x, m, spk)), m);
    const Var mu = ag::slice_cols(stats, 0, hidden);
    const Var logvar = nn::masked(ag::clamp(ag::slice_cols(stats, hidden, hidden), logvar_min, logvar_max), m);
    Var z = mu;
    if (noise != nullptr) {
      const Var eps = ag::constant(masked_noise(mu.rows(), mu.cols(), valid_rows(mask), *noise));
      z = nn::masked(mu + ag::exp(ag::scale(logvar, 0.5)) * eps, m);
    }
    return {{z, mask}, mu, logvar};
  }
};

/// Conditional Gaussian over log-durations: a small conv stack predicts a
/// per-phoneme mean and log-scale from the (detached) text hidden states.
struct DurationPredictor {
  nn::Linear pre;
  nn::Linear cond;
  std::vector<nn::Conv1d> convs;
  std::vector<nn::LayerNorm> norms;
  nn::Linear proj;

  static constexpr double kLogScaleMin = -5.0;
  static constexpr double kLogScaleMax = 1.0;
  static constexpr double kMaxFrames = 1000.0;

  DurationPredictor() = default;
  DurationPredictor(nn::ParameterSet& ps, std::mt19937_64& rng, const ModelConfig& m)
      : pre(ps, rng, "duration.pre", m.hidden, m.duration_hidden),
        cond(ps, rng, "duration.cond", m.speaker_dim + m.language_dim, m.duration_hidden) {
    for (int i = 0; i < 2; ++i) {
      convs.emplace_back(ps, rng, sub("duration", "conv", i), m.duration_hidden, m.duration_hidden, 3);
      norms.emplace_back(ps, sub("duration", "norm", i), m.duration_hidden);
    }
    proj = nn::Linear(ps, rng, "duration.proj", m.duration_hidden, 2, nn::Init::kZero);
  }

  /// P x 2: column 0 is the mean of log-duration, column 1 its log-scale.
  Var operator()(const Var& hidden, const Var& lang, const Var& spk, const Matrix& mask) const {
    const Var m = ag::constant(mask);
    Var x = nn::masked(ag::add_row(pre(ag::detach(hidden)), cond(ag::concat_cols({spk, lang}))), m);
    for (std::size_t i = 0; i < convs.size(); ++i) x = nn::masked(norms[i](ag::relu(convs[i](x))), m);
    const Var out = proj(x);
    return nn::masked(ag::concat_cols({ag::slice_cols(out, 0, 1), ag::clamp(ag::slice_cols(out, 1, 1), kLogScaleMin, kLogScaleMax)}), m);
  }

  /// Mean negative log-likelihood of log(durations) over valid phonemes.
  static Var nll(const Var& stats, const std::vector<int>& durations, const Matrix& mask) {
    const auto P = stats.rows();
    Matrix target = Matrix::Zero(P, 1);
    for (std::size_t i = 0; i < durations.size(); ++i) target(static_cast<Eigen::Index>(i), 0) = std::log(durations[i]);
    const Var mean = ag::slice_cols(stats, 0, 1);
    const Var log_scale = ag::slice_cols(stats, 1, 1);
    const Var standardized = (ag::constant(target) - mean) * ag::exp(ag::scale(log_scale, -1.0));
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    const Var per = ag::add_scalar(ag::scale(ag::square(standardized), 0.5) + log_scale, half_log_2pi);
    return ag::scale(ag::sum(nn::masked(per, ag::constant(mask))), 1.0 / mask.sum());
  }
};

struct ResidualBlock {
  std::vector<nn::Conv1d> convs;

  ResidualBlock() = default;
  ResidualBlock(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int channels) {
    int i = 0;
    for (int dilation : {1, 3}) convs.emplace_back(ps, rng, sub(name, "conv", i++), channels, channels, 3, dilation);
  }

  Var operator()(Var x) const {
    for (const auto& conv : convs) x = x + conv(ag::leaky_relu(x, 0.1));
    return x;
  }
};

/// Latent frames to waveform: nearest-neighbour upsampling stages, each
/// followed by a convolution and a residual block, then tanh.
struct Decoder {
  nn::Conv1d pre;
  nn::Linear cond;
  std::vector<int> rates;
  std::vector<nn::Conv1d> ups;
  std::vector<ResidualBlock> resblocks;
  nn::Conv1d post;

  Decoder() = default;
  Decoder(nn::ParameterSet& ps, std::mt19937_64& rng, const ModelConfig& m)
      : pre(ps, rng, "decoder.pre", m.hidden, m.decoder_channels, m.decoder_kernel),
        cond(ps, rng, "decoder.cond", m.speaker_dim, m.decoder_channels),
        rates(m.upsample_rates) {
    int channels = m.decoder_channels;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      const int next = std::max(channels / 2, 4);
      ups.emplace_back(ps, rng, sub("decoder", "up", static_cast<int>(i)), channels, next, m.decoder_kernel);
      resblocks.emplace_back(ps, rng, sub("decoder", "res", static_cast<int>(i)), next);
      channels = next;
    }
    post = nn::Conv1d(ps, rng, "decoder.post", channels, 1, m.decoder_kernel, 1, 1,
                      m.zero_init_decoder_output ? nn::Init::kZero : nn::Init::kDefault);
  }

  static std::vector<int> repeat_index(Eigen::Index rows, int rate) {
    std::vector<int> index(static_cast<std::size_t>(rows * rate));
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<int>(i) / rate;
    return index;
  }

  Var operator()(const Var& z, const Var& spk) const {
    Var x = ag::add_row(pre(z), cond(spk));
    for (std::size_t i = 0; i < rates.size(); ++i) {
      x = ag::gather_rows(ag::leaky_relu(x, 0.1), repeat_index(x.rows(), rates[i]));
      x = resblocks[i](ups[i](x));
    }
    return ag::tanh(post(ag::leaky_relu(x, 0.1)));
  }
};

/// The generator side of the model. Parameters live in `params`; every
/// forward is const and reads them only, so concurrent inference is safe.
class Generator {
 public:
  Generator(const ModelConfig& m, int spec_bins, int vocab_size, int context_dim, std::uint64_t seed) : cfg_(m) {
    std::mt19937_64 rng(seed);
    languages_ = nn::Embedding(params, rng, "embed.language", m.n_languages, m.language_dim, 1.0);
    speakers_ = nn::Embedding(params, rng, "embed.speaker", m.n_speakers, m.speaker_dim, 1.0);
    text_ = TextEncoder(params, rng, m, vocab_size, context_dim);
    posterior_ = PosteriorEncoder(params, rng, m, spec_bins);
    flow_ = Flow(params, rng, "flow", m.hidden, m.wn_kernel, m.flow_layers, m.flow_wn_layers, m.speaker_dim);
    duration_ = DurationPredictor(params, rng, m);
    decoder_ = Decoder(params, rng, m);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  nn::ParameterSet params;

  const ModelConfig& config() const { return cfg_; }
  int speaker_count() const { return speakers_.count(); }
  int language_count() const { return languages_.count(); }
  const DurationPredictor& duration_predictor() const { return duration_; }
  const Flow& flow() const { return flow_; }

  Var speaker(int spk_id) const {
    if (spk_id < 0 || spk_id >= speaker_count()) {
      fail(ErrorKind::kOutOfRange, "speaker id " + std::to_string(spk_id) + " outside [0, " +
                                       std::to_string(speaker_count()) + ")");
    }
    return speakers_.row(spk_id);
  }

  Var language(int lang_id) const {
    if (lang_id < 0 || lang_id >= language_count()) {
      fail(ErrorKind::kOutOfRange, "language id " + std::to_string(lang_id) + " outside [0, " +
                                       std::to_string(language_count()) + ")");
    }
    return languages_.row(lang_id);
  }

  /// Appends `count` speaker rows, each the mean of the existing rows.
  void extend_speakers(int count) {
    if (count < 0) fail(ErrorKind::kConfig, "cannot remove speakers");
    Var table = params.at("embed.speaker");
    const Matrix old = table.value();
    Matrix grown(old.rows() + count, old.cols());
    grown.topRows(old.rows()) = old;
    const RowVector mean = old.colwise().mean();
    for (int i = 0; i < count; ++i) grown.row(old.rows() + i) = mean;
    table.mutable_value() = std::move(grown);
    table.zero_grad();
    cfg_.n_speakers += count;
  }

  /// Padded form: `ids` and `mask` have max_p rows, `context` (if any) too.
  PriorStats encode_text(const std::vector<int>& ids, const Matrix* context, int lang_id, int spk_id,
                         const Matrix& mask) const {
    if ((context != nullptr) != cfg_.use_context) {
      fail(ErrorKind::kContextMismatch, cfg_.use_context ? "model expects context features but none were given"
                                                          : "model has no context fusion but context features were given");
    }
    return text_(ids, context, language(lang_id), speaker(spk_id), mask);
  }

  PriorStats encode_text(const PhonemeSequence& seq, const ContextFeatures* context, int lang_id, int spk_id) const {
    if (seq.ids.empty()) fail(ErrorKind::kEmptyText, "cannot encode an empty phoneme sequence");
    const Matrix mask = Matrix::Ones(static_cast<Eigen::Index>(seq.ids.size()), 1);
    return encode_text(seq.ids, context != nullptr ? &context->matrix : nullptr, lang_id, spk_id, mask);
  }

  /// `noise` selects training mode (z sampled); nullptr is evaluation mode.
  PosteriorStats encode_posterior(const Matrix& linear, int spk_id, const Matrix& mask, std::mt19937_64* noise) const {
    if (linear.rows() < 1) fail(ErrorKind::kLayout, "posterior input needs at least one frame");
    check_finite(linear, "linear spectrogram");
    return posterior_(linear, speaker(spk_id), mask, noise);
  }

  PosteriorStats encode_posterior(const Matrix& linear, int spk_id, std::mt19937_64* noise = nullptr) const {
    return encode_posterior(linear, spk_id, Matrix::Ones(linear.rows(), 1), noise);
  }

  Var flow_forward(const Var& z, const Matrix& mask, int spk_id) const {
    return flow_.forward(z, ag::constant(mask), speaker(spk_id));
  }
  Var flow_inverse(const Var& y, const Matrix& mask, int spk_id) const {
    return flow_.inverse(y, ag::constant(mask), speaker(spk_id));
  }

  Var duration_stats(const Var& hidden, const Matrix& mask, int lang_id, int spk_id) const {
    return duration_(hidden, language(lang_id), speaker(spk_id), mask);
  }

  DurationPrediction predict_durations(const Var& hidden, int lang_id, int spk_id, double noise_scale,
                                       double length_scale = 1.0, std::mt19937_64* rng = nullptr) const {
    if (noise_scale < 0.0) fail(ErrorKind::kConfig, "noise scale must be non-negative");
    if (noise_scale > 0.0 && rng == nullptr) fail(ErrorKind::kConfig, "a random stream is needed when noise_scale > 0");
    const Matrix mask = Matrix::Ones(hidden.rows(), 1);
    const Matrix stats = duration_stats(hidden, mask, lang_id, spk_id).value();
    DurationPrediction out;
    out.log_durations = stats.col(0);
    if (noise_scale > 0.0) {
      const Matrix eps = nn::normal_matrix(stats.rows(), 1, 1.0, *rng);
      out.log_durations.array() += noise_scale * stats.col(1).array().exp() * eps.array();
    }
    check_finite(out.log_durations, "predicted log-durations");
    out.log_durations = out.log_durations.cwiseMin(std::log(DurationPredictor::kMaxFrames));
    for (Eigen::Index p = 0; p < stats.rows(); ++p) {
      const double frames = std::ceil(std::exp(out.log_durations(p, 0)) * length_scale);
      out.frames.push_back(std::max(1, static_cast<int>(frames)));
    }
    return out;
  }

  Var decode_waveform(const Var& z, int spk_id) const {
    if (z.rows() < 1) fail(ErrorKind::kLayout, "decoder input needs at least one frame");
    return decoder_(z, speaker(spk_id));
  }

 private:
  ModelConfig cfg_;
  nn::Embedding languages_;
  nn::Embedding speakers_;
  TextEncoder text_;
  PosteriorEncoder posterior_;
  Flow flow_;
  DurationPredictor duration_;
  Decoder decoder_;
};

}  // namespace polyvits::model
