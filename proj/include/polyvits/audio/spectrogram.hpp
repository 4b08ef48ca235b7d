#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "polyvits/audio/wav.hpp"
#include "polyvits/config/run_config.hpp"
#include "polyvits/error.hpp"
#include "polyvits/tensor/autograd.hpp"
#include "polyvits/tensor/matrix.hpp"

namespace polyvits {

inline constexpr double kLogMelFloor = 1e-5;

struct SpectrogramPair {
  Matrix linear;  // F x (n_fft/2 + 1) magnitude
  Matrix mel;     // F x mel_channels, natural log with floor

  Eigen::Index frames() const { return linear.rows(); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// HTK-scale triangular filters without area normalisation, bins x mels.
inline Matrix mel_filterbank(int sample_rate, int n_fft, int mel_channels, double fmin, double fmax) {
  const int bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(mel_channels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(mel_channels + 1));
  }
  Matrix fb = Matrix::Zero(bins, mel_channels);
  for (int k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * sample_rate / n_fft;
    for (int m = 0; m < mel_channels; ++m) {
      const double left = edges[static_cast<std::size_t>(m)];
      const double centre = edges[static_cast<std::size_t>(m) + 1];
      const double right = edges[static_cast<std::size_t>(m) + 2];
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      fb(k, m) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

/// Maps a padded-signal position to a source index under reflect padding
/// (edge sample not repeated), folding as often as needed.
inline int reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<int>(r < n ? r : period - r);
}

/// Centered STFT (reflect padding of n_fft/2 on both sides) with a periodic
/// Hann window of length `win` zero-padded to n_fft. A signal of N samples
/// gives 1 + N / hop frames.
class Stft {
 public:
  Stft(int sample_rate, int n_fft, int hop, int win, int mel_channels, double fmin, double fmax)
      : sample_rate_(sample_rate), n_fft_(n_fft), hop_(hop) {
    const int bins = n_fft / 2 + 1;
    std::vector<double> window(static_cast<std::size_t>(n_fft), 0.0);
    const int offset = (n_fft - win) / 2;
    for (int i = 0; i < win; ++i) {
      window[static_cast<std::size_t>(offset + i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
    }
    cos_ = Matrix(n_fft, bins);
    sin_ = Matrix(n_fft, bins);
    for (int n = 0; n < n_fft; ++n) {
      for (int k = 0; k < bins; ++k) {
        const long phase = (static_cast<long>(n) * k) % n_fft;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(phase) / n_fft;
        cos_(n, k) = window[static_cast<std::size_t>(n)] * std::cos(angle);
        sin_(n, k) = -window[static_cast<std::size_t>(n)] * std::sin(angle);
      }
    }
    mel_ = mel_filterbank(sample_rate, n_fft, mel_channels, fmin, fmax);
  }

  explicit Stft(const RunConfig& c)
      : Stft(c.data.sample_rate, c.data.n_fft, c.data.hop, c.data.win, c.data.mel_channels, c.data.fmin,
             c.effective_fmax()) {}

  int sample_rate() const { return sample_rate_; }
  int hop() const { return hop_; }
  int n_fft() const { return n_fft_; }
  int bins() const { return static_cast<int>(cos_.cols()); }
  int mel_channels() const { return static_cast<int>(mel_.cols()); }
  const Matrix& mel_basis() const { return mel_; }

  Eigen::Index frame_count(Eigen::Index samples) const { return 1 + samples / hop_; }

  IndexMatrix frame_indices(Eigen::Index samples) const {
    if (samples < 1) fail(ErrorKind::kLayout, "cannot frame an empty signal");
    const Eigen::Index frames = frame_count(samples);
    IndexMatrix idx(frames, n_fft_);
    const long half = n_fft_ / 2;
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (int j = 0; j < n_fft_; ++j) idx(t, j) = reflect_index(t * hop_ + j - half, samples);
    }
    return idx;
  }

  Matrix frames(const std::vector<double>& samples) const {
    const IndexMatrix idx = frame_indices(static_cast<Eigen::Index>(samples.size()));
    Matrix out(idx.rows(), idx.cols());
    for (Eigen::Index i = 0; i < idx.size(); ++i) out.data()[i] = samples[static_cast<std::size_t>(idx.data()[i])];
    return out;
  }

  Matrix magnitude(const std::vector<double>& samples) const {
    const Matrix f = frames(samples);
    const Matrix re = f * cos_;
    const Matrix im = f * sin_;
    return (re.array().square() + im.array().square()).sqrt().matrix();
  }

  static Matrix log_floor(const Matrix& m) { return m.array().max(kLogMelFloor).log().matrix(); }

  Matrix log_mel(const Matrix& linear) const { return log_floor(linear * mel_); }

  /// Differentiable log-mel of a waveform given as an N x 1 column. A tiny
  /// offset inside the square root keeps the gradient finite at silence.
  ag::Var log_mel(const ag::Var& wave) const {
    const ag::Var f = ag::gather_signal(wave, frame_indices(wave.rows()));
    const ag::Var re = ag::matmul(f, ag::constant(cos_));
    const ag::Var im = ag::matmul(f, ag::constant(sin_));
    const ag::Var mag = ag::sqrt(ag::add_scalar(ag::square(re) + ag::square(im), 1e-12));
    return ag::log(ag::floor_at(ag::matmul(mag, ag::constant(mel_)), kLogMelFloor));
  }

 private:
  int sample_rate_;
  int n_fft_;
  int hop_;
  Matrix cos_;
  Matrix sin_;
  Matrix mel_;
};

inline SpectrogramPair compute_spectrograms(const Audio& audio, const Stft& stft) {
  if (audio.sample_rate != stft.sample_rate()) {
    fail(ErrorKind::kSampleRateMismatch, "audio is " + std::to_string(audio.sample_rate) + " Hz, config expects " +
                                             std::to_string(stft.sample_rate()) + " Hz");
  }
  if (audio.samples.empty()) fail(ErrorKind::kEmptyDataset, "cannot compute spectrograms of empty audio");
  for (double x : audio.samples) {
    if (!std::isfinite(x)) fail(ErrorKind::kNonFinite, "audio contains non-finite samples");
  }
  SpectrogramPair out;
  out.linear = stft.magnitude(audio.samples);
  out.mel = stft.log_mel(out.linear);
  return out;
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
inline Audio resample(const Audio& in, int target_rate, int zero_crossings = 16) {
  if (in.sample_rate <= 0 || target_rate <= 0) fail(ErrorKind::kSchema, "sample rates must be positive");
  if (in.sample_rate == target_rate) return in;
  const double ratio = static_cast<double>(target_rate) / in.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const auto n_in = static_cast<long>(in.samples.size());
  const auto n_out = static_cast<long>(std::llround(static_cast<double>(n_in) * ratio));
  const double half_width = zero_crossings / cutoff;
  Audio out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(std::max<long>(n_out, 0)));
  for (long j = 0; j < n_out; ++j) {
    const double centre = static_cast<double>(j) / ratio;
    const long first = static_cast<long>(std::ceil(centre - half_width));
    const long last = static_cast<long>(std::floor(centre + half_width));
    double acc = 0.0;
    for (long i = std::max<long>(first, 0); i <= std::min(last, n_in - 1); ++i) {
      const double x = (static_cast<double>(i) - centre) * cutoff;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * (static_cast<double>(i) - centre) / half_width);
      acc += in.samples[static_cast<std::size_t>(i)] * cutoff * sinc * w;
    }
    out.samples[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

}  // namespace polyvits
