#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include "polyvits/data/dataset.hpp"
#include "polyvits/model/discriminator.hpp"
#include "polyvits/model/generator.hpp"
#include "polyvits/model/synthesis.hpp"
#include "polyvits/tensor/optimizer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace polyvits {
namespace {

using ag::Var;
using model::Generator;

constexpr int kVocab = 40;
constexpr int kBins = 129;

std::unique_ptr<Generator> make_generator(const RunConfig& c, std::uint64_t seed = 7) {
  return std::make_unique<Generator>(c.model, c.spec_bins(), kVocab, c.context.dim, seed);
}

std::vector<int> random_ids(int n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(3, kVocab - 1);
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (auto& id : ids) id = pick(rng);
  return ids;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

TEST(TextEncoder, ShapesAndClamp) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(1);
  const auto ids = random_ids(5, rng);
  const auto prior = g->encode_text(ids, nullptr, 2, 3, Matrix::Ones(5, 1));
  for (const Var& v : {prior.mu, prior.logvar, prior.hidden}) {
    EXPECT_EQ(v.rows(), 5);
    EXPECT_EQ(v.cols(), 16);
    EXPECT_TRUE(v.value().allFinite());
  }
  EXPECT_GE(prior.logvar.value().minCoeff(), c.model.logvar_min);
  EXPECT_LE(prior.logvar.value().maxCoeff(), c.model.logvar_max);
}

TEST(TextEncoder, LanguageAndSpeakerChangeOutput) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(2);
  const auto ids = random_ids(6, rng);
  const Matrix mask = Matrix::Ones(6, 1);
  const ag::NoGradGuard guard;
  const Matrix base = g->encode_text(ids, nullptr, 0, 0, mask).mu.value();
  EXPECT_EQ(max_abs_diff(base, g->encode_text(ids, nullptr, 0, 0, mask).mu.value()), 0.0);
  EXPECT_GT(max_abs_diff(base, g->encode_text(ids, nullptr, 4, 0, mask).mu.value()), 0.0);
  EXPECT_GT(max_abs_diff(base, g->encode_text(ids, nullptr, 0, 5, mask).mu.value()), 0.0);
}

TEST(TextEncoder, RejectsOutOfRangeIds) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  const std::vector<int> ids{3, 4, 5};
  const Matrix mask = Matrix::Ones(3, 1);
  try {
    g->encode_text(ids, nullptr, 7, 0, mask);
    FAIL() << "expected out-of-range";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kOutOfRange);
  }
  EXPECT_THROW(g->encode_text(ids, nullptr, -1, 0, mask), Error);
  EXPECT_THROW(g->encode_text(ids, nullptr, 0, c.model.n_speakers, mask), Error);
}

TEST(TextEncoder, ContextPresenceMustMatchMode) {
  const auto plain = testing::tiny_config(false);
  const auto fused = testing::tiny_config(true);
  auto g1 = make_generator(plain);
  auto g2 = make_generator(fused);
  const std::vector<int> ids{3, 4, 5};
  const Matrix mask = Matrix::Ones(3, 1);
  const Matrix ctx = Matrix::Ones(3, fused.context.dim);
  try {
    g1->encode_text(ids, &ctx, 0, 0, mask);
    FAIL() << "expected context-mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContextMismatch);
  }
  EXPECT_THROW(g2->encode_text(ids, nullptr, 0, 0, mask), Error);
}

TEST(TextEncoder, ZeroFusionMatchesPlainModeBitForBit) {
  auto g1 = make_generator(testing::tiny_config(false));
  auto g2 = make_generator(testing::tiny_config(true));
  std::mt19937_64 rng(3);
  const auto ids = random_ids(7, rng);
  const Matrix mask = Matrix::Ones(7, 1);
  const Matrix ctx = nn::normal_matrix(7, 8, 1.0, rng);
  const auto a = g1->encode_text(ids, nullptr, 1, 2, mask);
  const auto b = g2->encode_text(ids, &ctx, 1, 2, mask);
  EXPECT_TRUE(a.mu.value() == b.mu.value());
  EXPECT_TRUE(a.logvar.value() == b.logvar.value());
  EXPECT_TRUE(a.hidden.value() == b.hidden.value());
}

TEST(TextEncoder, PaddingInvariance) {
  const auto c = testing::tiny_config(true);
  auto g = make_generator(c);
  std::mt19937_64 rng(4);
  testing::randomize(g->params.at("text.context.weight"), rng, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    const int P = 3 + trial;
    const int pad = 1 + trial % 4;
    auto ids = random_ids(P, rng);
    const Matrix ctx = nn::normal_matrix(P, 8, 1.0, rng);
    const auto alone = g->encode_text(ids, &ctx, trial % 7, trial % 14, Matrix::Ones(P, 1));
    ids.resize(static_cast<std::size_t>(P + pad), PhonemeVocabulary::kPad);
    Matrix padded_ctx = Matrix::Zero(P + pad, 8);
    padded_ctx.topRows(P) = ctx;
    const auto padded = g->encode_text(ids, &padded_ctx, trial % 7, trial % 14, nn::sequence_mask(P + pad, P));
    EXPECT_LE(max_abs_diff(alone.mu.value(), padded.mu.value().topRows(P)), 1e-4);
    EXPECT_LE(max_abs_diff(alone.logvar.value(), padded.logvar.value().topRows(P)), 1e-4);
    EXPECT_LE(max_abs_diff(alone.hidden.value(), padded.hidden.value().topRows(P)), 1e-4);
    EXPECT_EQ(padded.mu.value().bottomRows(pad).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Posterior, EvalModeReturnsMean) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(5);
  const Matrix spec = nn::normal_matrix(40, kBins, 1.0, rng).cwiseAbs();
  const auto post = g->encode_posterior(spec, 1);
  EXPECT_EQ(post.latent.z.rows(), 40);
  EXPECT_EQ(post.latent.z.cols(), 16);
  EXPECT_TRUE(post.latent.z.value() == post.mu.value());
}

TEST(Posterior, TrainingModeIsSeeded) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(6);
  const Matrix spec = nn::normal_matrix(40, kBins, 1.0, rng).cwiseAbs();
  std::mt19937_64 n1(99), n2(99), n3(100);
  const Matrix a = g->encode_posterior(spec, 1, &n1).latent.z.value();
  const Matrix b = g->encode_posterior(spec, 1, &n2).latent.z.value();
  const Matrix d = g->encode_posterior(spec, 1, &n3).latent.z.value();
  EXPECT_TRUE(a == b);
  EXPECT_GT(max_abs_diff(a, d), 0.0);
}

TEST(Posterior, RejectsNonFiniteInput) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  Matrix spec = Matrix::Ones(10, kBins);
  spec(3, 4) = std::nan("");
  try {
    g->encode_posterior(spec, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
  }
}

TEST(Flow, IdentityAtInit) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(7);
  const Var z = ag::constant(nn::normal_matrix(40, 16, 1.0, rng));
  const Matrix mask = Matrix::Ones(40, 1);
  EXPECT_TRUE(g->flow_forward(z, mask, 3).value() == z.value());
}

TEST(Flow, RoundTrip) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(8);
  testing::perturb_flow(*g, rng, 0.2);
  const Matrix mask = Matrix::Ones(40, 1);
  const ag::NoGradGuard guard;
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Var z = ag::constant(nn::normal_matrix(40, 16, 1.0, rng));
    const Var y = g->flow_forward(z, mask, i % 14);
    EXPECT_GT(max_abs_diff(y.value(), z.value()), 0.0);
    worst = std::max(worst, max_abs_diff(g->flow_inverse(y, mask, i % 14).value(), z.value()));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Flow, SpeakerConditioningIsLiveAfterOneStep) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(9);
  const Matrix zv = nn::normal_matrix(20, 16, 1.0, rng);
  const Matrix mask = Matrix::Ones(20, 1);
  const Matrix target = nn::normal_matrix(20, 16, 1.0, rng);
  const Var loss = ag::mean(ag::square(g->flow_forward(ag::constant(zv), mask, 0) - ag::constant(target)));
  ag::backward(loss);
  std::vector<std::string> names;
  for (const auto& [name, p] : g->params.all()) names.push_back(name);
  nn::AdamW opt(nn::AdamWOptions{});
  opt.step(g->params, names, 1e-2);
  const ag::NoGradGuard guard;
  const Matrix a = g->flow_forward(ag::constant(zv), mask, 0).value();
  const Matrix b = g->flow_forward(ag::constant(zv), mask, 1).value();
  EXPECT_GT(max_abs_diff(a, b), 0.0);
}

TEST(Flow, CouplingGradientsMatchFiniteDifferences) {
  nn::ParameterSet ps;
  std::mt19937_64 rng(10);
  const model::Coupling layer(ps, rng, "c", 4, 3, 2, 3);
  for (const auto& [name, p] : ps.all()) testing::randomize(p, rng, 0.5);
  const Var x = ag::parameter(nn::normal_matrix(6, 4, 1.0, rng));
  const Var g = ag::parameter(nn::normal_matrix(1, 3, 1.0, rng));
  const Var mask = ag::constant(nn::sequence_mask(6, 5));
  const Matrix w = nn::normal_matrix(6, 4, 1.0, rng);
  auto loss = [&] { return ag::sum(ag::square(layer.forward(x, mask, g)) * ag::constant(w)); };
  std::vector<Var> params{x, g};
  for (const auto& [name, p] : ps.all()) params.push_back(p);
  const auto result = testing::grad_check(loss, params);
  EXPECT_LE(result.max_relative_error, 1e-3);
  EXPECT_GT(result.max_abs_analytic, 0.0);
}

TEST(Duration, HeadGradientsMatchFiniteDifferences) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(11);
  testing::randomize(g->params.at("duration.proj.weight"), rng, 0.5);
  const Var hidden = ag::constant(nn::normal_matrix(6, 16, 1.0, rng));
  const Matrix mask = nn::sequence_mask(6, 5);
  const std::vector<int> durations{1, 3, 2, 5, 4};
  auto loss = [&] { return model::DurationPredictor::nll(g->duration_stats(hidden, mask, 3, 2), durations, mask); };
  const auto result =
      testing::grad_check(loss, {g->params.at("duration.proj.weight"), g->params.at("duration.proj.bias")});
  EXPECT_LE(result.max_relative_error, 1e-3);
  EXPECT_GT(result.max_abs_analytic, 0.0);
}

TEST(Duration, DeterministicPositiveAndSized) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(12);
  testing::randomize(g->params.at("duration.proj.weight"), rng, 0.5);
  const ag::NoGradGuard guard;
  for (int i = 0; i < 100; ++i) {
    const int P = 1 + i % 9;
    const Var hidden = ag::constant(nn::normal_matrix(P, 16, 3.0, rng));
    std::mt19937_64 noise(static_cast<std::uint64_t>(i));
    const auto noisy = g->predict_durations(hidden, i % 7, i % 14, 0.8, 1.0, &noise);
    ASSERT_EQ(static_cast<int>(noisy.frames.size()), P);
    for (int f : noisy.frames) EXPECT_GE(f, 1);
    for (Eigen::Index p = 0; p < P; ++p) {
      EXPECT_EQ(noisy.frames[static_cast<std::size_t>(p)],
                std::max(1, static_cast<int>(std::ceil(std::exp(noisy.log_durations(p, 0))))));
    }
  }
  const Var hidden = ag::constant(nn::normal_matrix(5, 16, 1.0, rng));
  const auto a = g->predict_durations(hidden, 0, 0, 0.0);
  const auto b = g->predict_durations(hidden, 0, 0, 0.0);
  EXPECT_EQ(a.frames.size(), 5U);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_TRUE(a.log_durations == b.log_durations);
}

TEST(Decoder, SampleCountAndRange) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  std::mt19937_64 rng(13);
  const Var z = ag::constant(nn::normal_matrix(32, 16, 2.0, rng));
  const Matrix wave = g->decode_waveform(z, 4).value();
  EXPECT_EQ(wave.rows(), 32 * 64);
  EXPECT_EQ(wave.cols(), 1);
  EXPECT_LE(wave.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_GT(wave.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decoder, ZeroInitOutputIsSilent) {
  auto c = testing::tiny_config();
  c.model.zero_init_decoder_output = true;
  auto g = make_generator(c);
  const Matrix wave = g->decode_waveform(ag::constant(Matrix::Zero(32, 16)), 0).value();
  const double rms = std::sqrt(wave.squaredNorm() / static_cast<double>(wave.size()));
  EXPECT_LT(rms, 1e-3);
}

TEST(Discriminator, ShapesDeterminismFiniteness) {
  const auto c = testing::tiny_config();
  const model::Discriminator d(c.model, 3);
  std::mt19937_64 rng(14);
  const Var noise = ag::constant(nn::normal_matrix(1024, 1, 1.0, rng));
  const auto a = d(noise);
  const auto b = d(noise);
  ASSERT_EQ(a.scores.size(), 2U);
  for (std::size_t s = 0; s < a.scores.size(); ++s) {
    EXPECT_EQ(static_cast<int>(a.features[s].size()), c.model.discriminator_depth);
    EXPECT_TRUE(a.scores[s].value().allFinite());
    EXPECT_TRUE(a.scores[s].value() == b.scores[s].value());
  }
}

TEST(Generator, SpeakerExtensionUsesMeanRow) {
  const auto c = testing::tiny_config();
  auto g = make_generator(c);
  const Matrix before = g->params.at("embed.speaker").value();
  g->extend_speakers(9);
  const Matrix after = g->params.at("embed.speaker").value();
  ASSERT_EQ(after.rows(), 23);
  EXPECT_TRUE(after.topRows(14) == before);
  for (int r = 14; r < 23; ++r) EXPECT_LE((after.row(r) - before.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(g->language_count(), 7);
  EXPECT_NO_THROW(g->speaker(22));
  EXPECT_THROW(g->speaker(23), Error);
}

struct SynthesisFixture : ::testing::Test {
  RunConfig cfg = testing::tiny_config(true);
  TextFrontend frontend = TextFrontend::from_config(cfg.frontend);
  PhonemeVocabulary vocab =
      build_vocabulary({frontend.phonemize("hello", resolve_backend("english"))}, *frontend.backend->inventory());
  std::unique_ptr<Generator> g =
      std::make_unique<Generator>(cfg.model, cfg.spec_bins(), static_cast<int>(vocab.size()), cfg.context.dim, 21);
};

TEST_F(SynthesisFixture, DeterministicAtZeroNoise) {
  const model::SynthesisOptions opts{0.0, 0.0, 1.0, 5};
  const auto a = model::synthesize(*g, cfg, vocab, frontend, "hello world", "english", 3, opts);
  const auto b = model::synthesize(*g, cfg, vocab, frontend, "hello world", "english", 3, opts);
  EXPECT_EQ(a.audio.samples, b.audio.samples);
  int total = 0;
  for (int f : a.durations) total += f;
  EXPECT_EQ(a.audio.samples.size(), static_cast<std::size_t>(total * cfg.data.hop));
  EXPECT_EQ(a.audio.sample_rate, 8000);
}

TEST_F(SynthesisFixture, ChhattisgarhiRoutesThroughHindi) {
  const model::SynthesisOptions opts{0.667, 0.8, 1.0, 5};
  const auto r = model::synthesize(*g, cfg, vocab, frontend, "मोर नाव राम हे", "chhattisgarhi", 0, opts);
  EXPECT_EQ(r.backend, "hindi");
  EXPECT_FALSE(r.audio.samples.empty());
}

TEST_F(SynthesisFixture, ConcurrentCallsAgree) {
  const model::SynthesisOptions opts{0.667, 0.8, 1.0, 11};
  const auto reference = model::synthesize(*g, cfg, vocab, frontend, "नमस्ते दुनिया", "hindi", 2, opts);
  std::vector<std::vector<double>> outputs(4);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    threads.emplace_back([&, i] {
      outputs[i] = model::synthesize(*g, cfg, vocab, frontend, "नमस्ते दुनिया", "hindi", 2, opts).audio.samples;
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& out : outputs) EXPECT_EQ(out, reference.audio.samples);
}

}  // namespace
}  // namespace polyvits
