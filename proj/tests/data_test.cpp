#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>

#include "polyvits/audio/spectrogram.hpp"
#include "polyvits/audio/wav.hpp"
#include "polyvits/data/dataset.hpp"
#include "polyvits/data/manifest.hpp"
#include "polyvits/data/synthetic.hpp"
#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"

namespace polyvits {
namespace {

namespace fs = std::filesystem;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kUsage;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

// Same deterministic signal as tests/oracles/stft_reference.py.
std::vector<double> probe_signal(int n, int sr) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    x[static_cast<std::size_t>(i)] = std::sin(2 * std::numbers::pi * 440.0 * t) +
                                     0.3 * std::sin(2 * std::numbers::pi * 1234.5 * t) * std::cos(i / 300.0);
  }
  return x;
}

TEST(Wav, Pcm16RoundTrip) {
  testing::TempDir dir;
  Audio a{8000, {0.0, 0.5, -0.5, 1.0, -1.0, 0.25}};
  write_wav(dir.file("a.wav"), a);
  const auto info = probe_wav(dir.file("a.wav"));
  EXPECT_EQ(info.sample_rate, 8000);
  EXPECT_EQ(info.frames, 6u);
  const Audio b = read_wav(dir.file("a.wav"));
  ASSERT_EQ(b.samples.size(), a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_NEAR(b.samples[i], a.samples[i], 1.0 / 32767.0);
}

TEST(Wav, StereoIsAveragedToMono) {
  testing::TempDir dir;
  std::string bytes = encode_wav_pcm16(Audio{8000, {0.5, -0.5}});
  // rewrite header as stereo: the two samples become one frame
  bytes[22] = 2;
  bytes[32] = 4;
  std::ofstream(dir.file("s.wav"), std::ios::binary) << bytes;
  const Audio a = read_wav(dir.file("s.wav"));
  ASSERT_EQ(a.samples.size(), 1u);
  EXPECT_NEAR(a.samples[0], 0.0, 1e-4);
}

TEST(Wav, RejectsGarbage) {
  testing::TempDir dir;
  std::ofstream(dir.file("x.wav")) << "not audio";
  EXPECT_EQ(kind_of([&] { read_wav(dir.file("x.wav")); }), ErrorKind::kSchema);
  EXPECT_EQ(kind_of([&] { read_wav(dir.file("missing.wav")); }), ErrorKind::kIo);
}

TEST(Stft, FrameCountMatchesReferenceImplementation) {
  // torch.stft(center=True) on 16000 samples with hop 256
  const Stft stft(16000, 1024, 256, 1024, 80, 0.0, 8000.0);
  EXPECT_EQ(stft.magnitude(probe_signal(16000, 16000)).rows(), 63);
  EXPECT_EQ(stft.frame_count(16000), 63);
  const Stft small(8000, 256, 64, 200, 40, 0.0, 4000.0);
  EXPECT_EQ(small.magnitude(probe_signal(3000, 8000)).rows(), 47);
}

TEST(Stft, MagnitudesMatchReferenceImplementation) {
  const Stft stft(16000, 1024, 256, 1024, 80, 0.0, 8000.0);
  const Matrix mag = stft.magnitude(probe_signal(16000, 16000));
  EXPECT_NEAR(mag(0, 28), 42.15593082814902, 1e-9);
  EXPECT_NEAR(mag(10, 28), 251.80120988892244, 1e-9);
  EXPECT_NEAR(mag(31, 79), 15.664744239728696, 1e-9);
  EXPECT_NEAR(mag(62, 0), 10.648773451608657, 1e-9);
  EXPECT_NEAR(mag(40, 200), 9.179145466646214e-06, 1e-9);
  const Stft small(8000, 256, 64, 200, 40, 0.0, 4000.0);
  const Matrix mag2 = small.magnitude(probe_signal(3000, 8000));
  EXPECT_NEAR(mag2(0, 14), 4.970293482117914, 1e-9);
  EXPECT_NEAR(mag2(20, 14), 49.87391549294727, 1e-9);
  EXPECT_NEAR(mag2(46, 3), 2.3531224283784486, 1e-9);
}

TEST(Stft, MelFilterbankMatchesReference) {
  const Matrix fb = mel_filterbank(8000, 256, 40, 0.0, 4000.0);
  EXPECT_NEAR(fb(1, 0), 0.9390535058505508, 1e-12);
  EXPECT_NEAR(fb(5, 3), 0.6670879746366144, 1e-12);
  EXPECT_NEAR(fb(37, 20), 0.997623305442665, 1e-12);
  EXPECT_NEAR(fb(69, 30), 0.2718291115769978, 1e-12);
  EXPECT_NEAR(fb(110, 38), 0.25103627583378624, 1e-12);
}

TEST(Spectrogram, SilenceHitsTheLogFloor) {
  const Stft stft(8000, 256, 64, 256, 40, 0.0, 4000.0);
  const auto s = compute_spectrograms(Audio{8000, std::vector<double>(4000, 0.0)}, stft);
  EXPECT_EQ(s.linear.rows(), s.mel.rows());
  EXPECT_TRUE((s.mel.array() == std::log(1e-5)).all());
}

TEST(Spectrogram, BinCenteredSinePeaksAtExpectedBin) {
  const int sr = 16000;
  const int n_fft = 1024;
  const Stft stft(sr, n_fft, 256, n_fft, 80, 0.0, 8000.0);
  for (int k : {10, 57, 200}) {
    const double f = static_cast<double>(k) * sr / n_fft;
    std::vector<double> x(16000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / sr);
    const auto s = compute_spectrograms(Audio{sr, x}, stft);
    Eigen::Index arg = 0;
    s.linear.colwise().mean().maxCoeff(&arg);
    EXPECT_EQ(arg, k);
  }
}

TEST(Spectrogram, SampleRateMismatch) {
  const Stft stft(8000, 256, 64, 256, 40, 0.0, 4000.0);
  EXPECT_EQ(kind_of([&] { compute_spectrograms(Audio{16000, std::vector<double>(100, 0.1)}, stft); }),
            ErrorKind::kSampleRateMismatch);
}

TEST(Spectrogram, DifferentiableLogMelMatchesAndHasCorrectGradient) {
  const Stft stft(8000, 64, 16, 64, 8, 0.0, 4000.0);
  const auto x = probe_signal(200, 8000);
  Matrix col(200, 1);
  for (int i = 0; i < 200; ++i) col(i, 0) = x[static_cast<std::size_t>(i)];
  const Matrix reference = stft.log_mel(stft.magnitude(x));
  const ag::Var wave = ag::parameter(col);
  // the 1e-12 offset under the square root only matters near the floor
  EXPECT_LT((stft.log_mel(wave).value() - reference).cwiseAbs().maxCoeff(), 1e-4);

  const ag::Var small = ag::parameter(col.topRows(40));
  const auto result = testing::grad_check([&] { return ag::mean(stft.log_mel(small)); }, {small});
  EXPECT_LT(result.max_relative_error, 1e-4);
}

TEST(Resample, HalvesRateAndPreservesLowTone) {
  Audio in{16000, {}};
  for (int i = 0; i < 16000; ++i) in.samples.push_back(std::sin(2 * std::numbers::pi * 440.0 * i / 16000.0));
  const Audio out = resample(in, 8000);
  EXPECT_EQ(out.sample_rate, 8000);
  ASSERT_EQ(out.samples.size(), 8000u);
  double worst = 0.0;
  for (int j = 200; j < 7800; ++j) {
    worst = std::max(worst, std::abs(out.samples[static_cast<std::size_t>(j)] - std::sin(2 * std::numbers::pi * 440.0 * j / 8000.0)));
  }
  EXPECT_LT(worst, 1e-2);
}

class ManifestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    write_wav(dir.file("a.wav"), Audio{8000, std::vector<double>(4000, 0.1)});
    write_wav(dir.file("b.wav"), Audio{8000, std::vector<double>(8000, 0.1)});
  }
  std::string write_lines(const std::vector<std::string>& lines) {
    const std::string path = dir.file("m.jsonl");
    std::ofstream out(path);
    for (const auto& l : lines) out << l << "\n";
    return path;
  }
  testing::TempDir dir;
};

TEST_F(ManifestTest, LoadsWellFormedLines) {
  const auto m = load_manifest(write_lines({
      R"({"id":"u1","audio":"a.wav","text":"hello","language":"english","speaker":"B"})",
      R"({"id":"u2","audio":"b.wav","text":"world","language":"hindi","speaker":"A"})",
      "",
      R"({"id":"u3","audio":"a.wav","text":"river","language":"english","speaker":"B"})",
  }));
  ASSERT_EQ(m.utterances.size(), 3u);
  EXPECT_EQ(m.speakers, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(m.utterances[0].speaker_id, 1);
  EXPECT_EQ(m.utterances[1].speaker_id, 0);
  EXPECT_DOUBLE_EQ(m.utterances[0].duration_sec, 0.5);
  EXPECT_DOUBLE_EQ(m.utterances[1].duration_sec, 1.0);
}

TEST_F(ManifestTest, SchemaErrorsNameTheLine) {
  const auto path = write_lines({
      R"({"id":"u1","audio":"a.wav","text":"hello","language":"english","speaker":"B"})",
      R"({"id":"u2","audio":"a.wav","text":"bonjour","language":"french","speaker":"B"})",
  });
  EXPECT_EQ(kind_of([&] { load_manifest(path); }), ErrorKind::kSchema);
  EXPECT_NE(error_text([&] { load_manifest(path); }).find("m.jsonl:2"), std::string::npos);

  const auto bad_json = write_lines({"{not json"});
  EXPECT_NE(error_text([&] { load_manifest(bad_json); }).find(":1"), std::string::npos);
  const auto missing_field = write_lines({R"({"id":"u1","audio":"a.wav","language":"english","speaker":"B"})"});
  EXPECT_NE(error_text([&] { load_manifest(missing_field); }).find("'text'"), std::string::npos);
  const auto duplicate = write_lines({
      R"({"id":"u1","audio":"a.wav","text":"a","language":"english","speaker":"B"})",
      R"({"id":"u1","audio":"a.wav","text":"a","language":"english","speaker":"B"})",
  });
  EXPECT_EQ(kind_of([&] { load_manifest(duplicate); }), ErrorKind::kSchema);
}

TEST_F(ManifestTest, MissingFiles) {
  EXPECT_EQ(kind_of([&] { load_manifest(dir.file("nope.jsonl")); }), ErrorKind::kIo);
  const auto path = write_lines({R"({"id":"u1","audio":"gone.wav","text":"a","language":"english","speaker":"B"})"});
  EXPECT_EQ(kind_of([&] { load_manifest(path); }), ErrorKind::kIo);
}

TEST_F(ManifestTest, WriteThenLoadRoundTrips) {
  const auto m = load_manifest(write_lines({
      R"({"id":"u1","audio":"a.wav","text":"नमस्ते भारत","language":"chhattisgarhi","speaker":"B"})",
      R"({"id":"u2","audio":"b.wav","text":"world","language":"hindi","speaker":"A"})",
  }));
  write_manifest(dir.file("copy.jsonl"), m.utterances);
  const auto again = load_manifest(dir.file("copy.jsonl"));
  EXPECT_EQ(again.utterances, m.utterances);
  EXPECT_EQ(again.speakers, m.speakers);
}

TEST(SyntheticCorpus, CoversFourteenSpeakersAndSevenLanguages) {
  testing::TempDir dir;
  const auto path = generate_synthetic_corpus(dir.path(), 7, {.sample_rate = 8000});
  const auto m = load_manifest(path);
  EXPECT_EQ(m.speakers.size(), 14u);
  std::set<std::string> languages;
  for (const auto& u : m.utterances) {
    languages.insert(u.language);
    EXPECT_GE(u.duration_sec, 0.5) << u.id;
    EXPECT_LE(u.duration_sec, 2.0) << u.id;
  }
  EXPECT_EQ(languages.size(), 7u);
}

TEST(SyntheticCorpus, RegenerationIsByteIdentical) {
  testing::TempDir a;
  testing::TempDir b;
  const SyntheticCorpusOptions options{.sample_rate = 8000, .speakers = 3, .utterances_per_speaker = 2};
  const auto pa = generate_synthetic_corpus(a.path(), 11, options);
  const auto pb = generate_synthetic_corpus(b.path(), 11, options);
  EXPECT_EQ(io::read_bytes(pa), io::read_bytes(pb));
  for (const auto& entry : fs::directory_iterator(fs::path(a.path()) / "wavs")) {
    EXPECT_EQ(io::read_bytes(entry.path().string()),
              io::read_bytes((fs::path(b.path()) / "wavs" / entry.path().filename()).string()));
  }
  testing::TempDir c;
  EXPECT_NE(io::read_bytes(generate_synthetic_corpus(c.path(), 12, options)), io::read_bytes(pa));
}

TEST(SyntheticCorpus, VocabularyClosureHasNoUnknowns) {
  testing::TempDir dir;
  const auto m = load_manifest(generate_synthetic_corpus(dir.path(), 3, {.sample_rate = 8000}));
  const auto frontend = TextFrontend::from_config({});
  std::vector<PhonemeSequence> seqs;
  for (const auto& u : m.utterances) seqs.push_back(frontend.phonemize(u.text, resolve_backend(u.language)));
  const auto vocab = build_vocabulary(seqs);
  for (const auto& s : seqs) EXPECT_EQ(encode(s, vocab).unknown_count, 0);
}

TEST(Batching, ThirtyThreeIntoSixteens) {
  std::vector<int> lengths(33);
  for (int i = 0; i < 33; ++i) lengths[static_cast<std::size_t>(i)] = (i * 7) % 13 + 1;
  const auto batches = make_batches(lengths, 16, 5);
  std::multiset<std::size_t> sizes;
  for (const auto& b : batches) sizes.insert(b.size());
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{1, 16, 16}));
  EXPECT_EQ(make_batches(lengths, 16, 5, true).size(), 2u);
}

TEST(Batching, PartitionAndDeterminism) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> lengths(1 + rng() % 200);
    for (auto& l : lengths) l = static_cast<int>(rng() % 100);
    const int bs = 1 + static_cast<int>(rng() % 20);
    const auto batches = make_batches(lengths, bs, trial);
    std::vector<std::size_t> seen;
    for (const auto& b : batches) {
      EXPECT_LE(b.size(), static_cast<std::size_t>(bs));
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> expected(lengths.size());
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(seen, expected);
    EXPECT_EQ(make_batches(lengths, bs, trial), batches);
  }
}

TEST(Batching, Errors) {
  EXPECT_EQ(kind_of([] { make_batches({}, 4, 1); }), ErrorKind::kEmptyDataset);
  EXPECT_EQ(kind_of([] { make_batches({1, 2}, 0, 1); }), ErrorKind::kConfig);
}

TEST(Batching, MasksFlagAllPadding) {
  std::vector<Example> examples(3);
  const int frames[] = {5, 9, 7};
  const int phonemes[] = {2, 4, 3};
  for (int i = 0; i < 3; ++i) {
    examples[static_cast<std::size_t>(i)].linear = Matrix::Ones(frames[i], 3);
    examples[static_cast<std::size_t>(i)].seq.ids.assign(static_cast<std::size_t>(phonemes[i]), 5);
  }
  const Batch batch = collate(examples, {0, 1, 2}, 2, 3);
  EXPECT_EQ(batch.max_p, 6);
  EXPECT_EQ(batch.max_f, 12);
  for (std::size_t b = 0; b < 3; ++b) {
    const Matrix fm = batch.frame_mask(b);
    const Matrix lin = batch.padded_linear(b);
    for (int t = 0; t < batch.max_f; ++t) {
      EXPECT_EQ(fm(t, 0), t < frames[b] ? 1.0 : 0.0);
      if (t >= frames[b]) {
        EXPECT_TRUE((lin.row(t).array() == 0.0).all());
      }
    }
    const auto ids = batch.padded_ids(b);
    for (int p = phonemes[b]; p < batch.max_p; ++p) EXPECT_EQ(ids[static_cast<std::size_t>(p)], PhonemeVocabulary::kPad);
    EXPECT_EQ(batch.phoneme_mask(b).sum(), phonemes[b]);
  }
}

TEST(PrepareExamples, BuildsAlignedFeaturesAndUsesCache) {
  testing::TempDir dir;
  RunConfig cfg = load_run_config(POLYVITS_CONFIG_DIR "/desk.cfg", {}, nullptr);
  const auto m = load_manifest(generate_synthetic_corpus(dir.path(), 1, {.sample_rate = 8000, .speakers = 2, .utterances_per_speaker = 2}));
  const auto frontend = TextFrontend::from_config(cfg.frontend);
  const auto vocab = build_corpus_vocabulary(m.utterances, frontend);
  const SpectrogramCache cache(dir.file("cache"), cfg);
  const auto first = prepare_examples(m.utterances, cfg, vocab, frontend, m.speakers, &cache);
  ASSERT_EQ(first.size(), 4u);
  for (const auto& ex : first) {
    EXPECT_EQ(ex.mel.rows(), ex.linear.rows());
    EXPECT_EQ(ex.mel.cols(), cfg.data.mel_channels);
    EXPECT_EQ(ex.linear.cols(), cfg.spec_bins());
    EXPECT_EQ(ex.context.rows(), ex.phonemes());
    EXPECT_EQ(ex.context.cols(), cfg.context.dim);
    EXPECT_EQ(ex.wave.size(), static_cast<std::size_t>(ex.frames() * cfg.data.hop));
    EXPECT_TRUE(fs::exists(cache.entry_path(ex.id)));
  }
  const auto second = prepare_examples(m.utterances, cfg, vocab, frontend, m.speakers, &cache);
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(second[i].mel, first[i].mel);

  cfg.data.sample_rate = 16000;
  cfg.data.hop = 64;
  EXPECT_EQ(kind_of([&] { prepare_examples(m.utterances, cfg, vocab, frontend, m.speakers); }),
            ErrorKind::kSampleRateMismatch);
  EXPECT_EQ(kind_of([&] { prepare_examples(m.utterances, cfg, vocab, frontend, {"nobody"}); }),
            ErrorKind::kUnknownSpeaker);
}

}  // namespace
}  // namespace polyvits
