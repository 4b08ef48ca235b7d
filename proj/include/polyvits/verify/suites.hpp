#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "polyvits/align/mas.hpp"
#include "polyvits/context/features.hpp"
#include "polyvits/data/synthetic.hpp"
#include "polyvits/model/generator.hpp"
#include "polyvits/train/trainer.hpp"

namespace polyvits::verify {

struct PropertyResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"mas", "flow", "replication", "padding"};
  return names;
}

/// H=16 model at 8 kHz, small enough for property sweeps.
inline RunConfig small_config(bool use_context) {
  RunConfig c;
  auto& m = c.model;
  m.hidden = 16;
  m.filter = 32;
  m.heads = 2;
  m.encoder_blocks = 2;
  m.language_dim = 8;
  m.speaker_dim = 8;
  m.posterior_layers = 2;
  m.flow_layers = 4;
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

/// Gives the zero-initialized flow output projections random weights.
inline void perturb_flow(model::Generator& g, std::mt19937_64& rng, double stddev) {
  for (const auto& [name, p] : g.params.all()) {
    if (name.rfind("flow.", 0) == 0 && name.find(".post.") != std::string::npos) {
      ag::Var v = p;
      v.mutable_value() = nn::normal_matrix(v.rows(), v.cols(), stddev, rng);
    }
  }
}

namespace suites_detail {

inline PropertyResult timed(const std::string& suite, const std::string& name,
                            const std::function<bool(std::string&)>& body) {
  PropertyResult r{suite, name, false, {}, 0.0};
  const auto start = std::chrono::steady_clock::now();
  try {
    r.passed = body(r.detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline Matrix random_loglik(int P, int F, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(P, F);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline std::vector<int> random_ids(int n, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(PhonemeVocabulary::kReservedCount, vocab - 1);
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (auto& id : ids) id = pick(rng);
  return ids;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

/// Temporary directory removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    do {
      path_ = std::filesystem::temp_directory_path() / ("polyvits-verify-" + std::to_string(rd()) + std::to_string(rd()));
    } while (std::filesystem::exists(path_));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  std::string path() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace suites_detail

/// Reference MAS against exhaustive search on every shape with P <= 5 and
/// F <= 8, plus invariance of the path under a constant shift.
inline std::vector<PropertyResult> mas_suite(bool quick) {
  using namespace suites_detail;
  std::vector<PropertyResult> out;
  out.push_back(timed("mas", "oracle-equivalence", [&](std::string& detail) {
    std::mt19937_64 rng(1234);
    const int per_shape = quick ? 4 : 8;
    int instances = 0;
    for (int P = 1; P <= 5; ++P) {
      for (int F = P; F <= 8; ++F) {
        for (int k = 0; k < per_shape; ++k, ++instances) {
          const Matrix m = random_loglik(P, F, rng);
          const auto fast = mas(m);
          const auto oracle = brute_force_align(m);
          if (fast.assignment != oracle.assignment || path_score(m, fast.assignment) != path_score(m, oracle.assignment)) {
            detail = "mismatch at P=" + std::to_string(P) + " F=" + std::to_string(F);
            return false;
          }
        }
      }
    }
    detail = std::to_string(instances) + " instances identical";
    return instances >= 100;
  }));
  out.push_back(timed("mas", "shift-invariance", [&](std::string& detail) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const int P = 1 + static_cast<int>(rng() % 6);
      const int F = P + static_cast<int>(rng() % 10);
      const Matrix m = random_loglik(P, F, rng);
      const double c = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
      if (mas(m).assignment != mas((m.array() + c).matrix()).assignment) {
        detail = "assignment changed at trial " + std::to_string(trial);
        return false;
      }
    }
    detail = "100 instances unchanged";
    return true;
  }));
  return out;
}

/// Forward then inverse flow on random 40x16 latents.
inline std::vector<PropertyResult> flow_suite(bool quick) {
  using namespace suites_detail;
  std::vector<PropertyResult> out;
  out.push_back(timed("flow", "round-trip", [&](std::string& detail) {
    const auto c = small_config(false);
    model::Generator g(c.model, c.spec_bins(), 40, c.context.dim, 11);
    std::mt19937_64 rng(8);
    perturb_flow(g, rng, 0.2);
    const Matrix mask = Matrix::Ones(40, 1);
    const ag::NoGradGuard no_grad;
    const int n = quick ? 20 : 100;
    double worst = 0.0;
    double moved = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const ag::Var z = ag::constant(nn::normal_matrix(40, 16, 1.0, rng));
      const int spk = i % c.model.n_speakers;
      const ag::Var y = g.flow_forward(z, mask, spk);
      moved = std::min(moved, max_abs_diff(y.value(), z.value()));
      worst = std::max(worst, max_abs_diff(g.flow_inverse(y, mask, spk).value(), z.value()));
    }
    detail = std::to_string(n) + " latents, max error " + fmt(worst) + ", min displacement " + fmt(moved);
    return worst <= 1e-4 && moved > 0.0;
  }));
  return out;
}

/// Word features copied to phonemes: row j equals the row of the word
/// owning phoneme j, for random span structures.
inline std::vector<PropertyResult> replication_suite(bool quick) {
  using namespace suites_detail;
  std::vector<PropertyResult> out;
  out.push_back(timed("replication", "row-ownership", [&](std::string& detail) {
    std::mt19937_64 rng(11);
    const int cases = quick ? 200 : 1000;
    for (int trial = 0; trial < cases; ++trial) {
      PhonemeSequence seq;
      const int words = 1 + static_cast<int>(rng() % 12);
      for (int w = 0; w < words; ++w) {
        const int len = 1 + static_cast<int>(rng() % 7);
        seq.word_spans.push_back({w, len});
        for (int k = 0; k < len; ++k) seq.phonemes.push_back("p");
      }
      const ContextFeatures feats{FeatureLevel::kWord, nn::normal_matrix(words, 5, 1.0, rng)};
      const auto rep = replicate_to_phonemes(feats, seq);
      if (rep.rows() != static_cast<Eigen::Index>(seq.size())) {
        detail = "row count mismatch at case " + std::to_string(trial);
        return false;
      }
      const auto owners = seq.phoneme_owners();
      for (std::size_t j = 0; j < owners.size(); ++j) {
        if (rep.matrix.row(static_cast<Eigen::Index>(j)) != feats.matrix.row(owners[j])) {
          detail = "row " + std::to_string(j) + " differs at case " + std::to_string(trial);
          return false;
        }
      }
    }
    detail = std::to_string(cases) + " cases exact";
    return true;
  }));
  return out;
}

/// Extra padding must not change encoder outputs (<= 1e-4) or any loss term
/// (<= 1e-5).
inline std::vector<PropertyResult> padding_suite(bool quick) {
  using namespace suites_detail;
  std::vector<PropertyResult> out;
  out.push_back(timed("padding", "text-encoder", [&](std::string& detail) {
    const auto c = small_config(true);
    model::Generator g(c.model, c.spec_bins(), 40, c.context.dim, 7);
    std::mt19937_64 rng(4);
    ag::Var w = g.params.at("text.context.weight");
    w.mutable_value() = nn::normal_matrix(w.rows(), w.cols(), 0.3, rng);
    const ag::NoGradGuard no_grad;
    double worst = 0.0;
    const int trials = quick ? 4 : 10;
    for (int trial = 0; trial < trials; ++trial) {
      const int P = 3 + trial;
      const int pad = 1 + trial % 4;
      auto ids = random_ids(P, 40, rng);
      const Matrix ctx = nn::normal_matrix(P, c.context.dim, 1.0, rng);
      const int lang = trial % kLanguageCount;
      const int spk = trial % c.model.n_speakers;
      const auto alone = g.encode_text(ids, &ctx, lang, spk, Matrix::Ones(P, 1));
      ids.resize(static_cast<std::size_t>(P + pad), PhonemeVocabulary::kPad);
      Matrix padded_ctx = Matrix::Zero(P + pad, c.context.dim);
      padded_ctx.topRows(P) = ctx;
      const auto padded = g.encode_text(ids, &padded_ctx, lang, spk, nn::sequence_mask(P + pad, P));
      for (const auto& [a, b] : {std::pair{alone.mu, padded.mu}, std::pair{alone.logvar, padded.logvar},
                                 std::pair{alone.hidden, padded.hidden}}) {
        worst = std::max(worst, max_abs_diff(a.value(), b.value().topRows(P)));
      }
    }
    detail = "max deviation " + fmt(worst);
    return worst <= 1e-4;
  }));
  out.push_back(timed("padding", "loss-terms", [&](std::string& detail) {
    const ScratchDir dir;
    const auto c = small_config(true);
    SyntheticCorpusOptions o;
    o.sample_rate = c.data.sample_rate;
    o.speakers = 4;
    o.utterances_per_speaker = 1;
    o.max_duration = 1.0;
    const auto manifest = load_manifest(generate_synthetic_corpus(dir.path(), 3, o));
    const auto frontend = TextFrontend::from_config(c.frontend);
    RunConfig cfg = c;
    cfg.train.require_languages.clear();
    auto s = train::init_pretraining(cfg, manifest, frontend);
    std::mt19937_64 init(5);
    perturb_flow(*s.generator, init, 0.1);
    const auto examples = prepare_examples(manifest.utterances, s.cfg, s.vocab, frontend, s.speakers);
    const Stft stft(s.cfg);
    std::vector<std::size_t> all(examples.size());
    std::iota(all.begin(), all.end(), 0);
    double worst = 0.0;
    for (const auto& [pp, pf] : {std::pair{5, 17}, std::pair{1, 3}}) {
      std::mt19937_64 r1(9), r2(9);
      const auto a = train::compute_losses(*s.generator, *s.discriminator, collate(examples, all), s.cfg, stft, r1);
      const auto b =
          train::compute_losses(*s.generator, *s.discriminator, collate(examples, all, pp, pf), s.cfg, stft, r2);
      if (!a.non_finite_term().empty()) {
        detail = "non-finite " + a.non_finite_term();
        return false;
      }
      for (const auto& [x, y] : {std::pair{a.mel, b.mel}, std::pair{a.kl, b.kl}, std::pair{a.duration, b.duration},
                                 std::pair{a.adversarial_g, b.adversarial_g}, std::pair{a.adversarial_d, b.adversarial_d},
                                 std::pair{a.feature_matching, b.feature_matching}, std::pair{a.total, b.total}}) {
        worst = std::max(worst, std::abs(x - y));
      }
      if (quick) break;
    }
    detail = "max loss deviation " + fmt(worst);
    return worst <= 1e-5;
  }));
  return out;
}

/// Runs one named suite or "all".
inline std::vector<PropertyResult> run_suite(const std::string& name, bool quick) {
  if (name == "mas") return mas_suite(quick);
  if (name == "flow") return flow_suite(quick);
  if (name == "replication") return replication_suite(quick);
  if (name == "padding") return padding_suite(quick);
  if (name == "all") {
    std::vector<PropertyResult> all;
    for (const auto& n : suite_names()) {
      auto r = run_suite(n, quick);
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  }
  fail(ErrorKind::kUsage, "unknown suite '" + name + "'");
}

}  // namespace polyvits::verify
