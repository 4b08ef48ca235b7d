#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "polyvits/audio/wav.hpp"
#include "polyvits/context/features.hpp"
#include "polyvits/data/manifest.hpp"
#include "polyvits/frontend/backend.hpp"
#include "polyvits/frontend/language.hpp"
#include "polyvits/frontend/phonemize.hpp"
#include "polyvits/frontend/utf8.hpp"

namespace polyvits {

struct SyntheticCorpusOptions {
  int sample_rate = 16000;
  int speakers = 14;
  int utterances_per_speaker = 4;
  std::string speaker_prefix = "spk";
  /// Added to the speaker index when picking a voice, so separately
  /// generated speaker sets do not share voices.
  int voice_offset = 0;
  /// Speaker k's native language is languages[k % languages.size()].
  std::vector<std::string> languages = {kSupportedLanguages.begin(), kSupportedLanguages.end()};
  double min_duration = 0.5;
  double max_duration = 2.0;
};

namespace synthetic_detail {

/// Small counter-based generator so the corpus does not depend on the
/// standard library's distribution implementations.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() { return detail::splitmix64(state_); }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

inline char32_t script_base(const std::string& language) {
  if (language == "bengali") return 0x0980;
  if (language == "telugu") return 0x0C00;
  if (language == "kannada") return 0x0C80;
  return 0x0900;  // hindi, marathi, chhattisgarhi
}

inline std::string indic_word(Stream& rng, const std::string& language) {
  static const std::vector<char32_t> consonants = [] {
    std::vector<char32_t> c;
    for (char32_t o = 0x15; o <= 0x28; ++o) c.push_back(o);
    for (char32_t o = 0x2A; o <= 0x30; ++o) c.push_back(o);
    c.insert(c.end(), {0x32, 0x38, 0x39});
    return c;
  }();
  static const std::vector<char32_t> signs = {0, 0x3E, 0x3F, 0x40, 0x41, 0x42, 0x47, 0x4B};
  const char32_t base = script_base(language);
  const int syllables = 1 + static_cast<int>(rng.index(3));
  std::string word;
  for (int s = 0; s < syllables; ++s) {
    utf8::append(word, base + consonants[rng.index(consonants.size())]);
    const char32_t sign = signs[rng.index(signs.size())];
    if (sign != 0) utf8::append(word, base + sign);
  }
  return word;
}

inline std::string english_word(Stream& rng) {
  const auto& lexicon = detail::english_lexicon();
  auto it = lexicon.begin();
  std::advance(it, static_cast<long>(rng.index(lexicon.size())));
  return it->first;
}

/// Per-speaker voice: fundamental and a spectral tilt.
struct Voice {
  double f0;
  double brightness;
};

inline Voice voice_for(int speaker) {
  return {110.0 + 23.0 * speaker, 0.35 + 0.04 * (speaker % 7)};
}

/// Each phoneme is a harmonic tone whose pitch multiplier and harmonic
/// weights are keyed by the phoneme symbol.
inline void render_phoneme(std::vector<double>& out, const std::string& phoneme, const Voice& voice, double seconds,
                           int sample_rate) {
  Stream key(detail::fnv1a64(phoneme));
  const double pitch = voice.f0 * (1.0 + 0.125 * static_cast<double>(key.index(9)));
  const double h2 = 0.2 + 0.6 * key.uniform();
  const double h3 = voice.brightness * key.uniform();
  const double noise_level = key.uniform() < 0.3 ? 0.05 : 0.0;
  Stream noise(key.next());
  const auto n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  const double nyquist = sample_rate / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    double s = std::sin(2.0 * std::numbers::pi * pitch * t);
    if (2.0 * pitch < nyquist) s += h2 * std::sin(2.0 * std::numbers::pi * 2.0 * pitch * t);
    if (3.0 * pitch < nyquist) s += h3 * std::sin(2.0 * std::numbers::pi * 3.0 * pitch * t);
    s += noise_level * (2.0 * noise.uniform() - 1.0);
    out.push_back(0.3 * env * s);
  }
}

}  // namespace synthetic_detail

/// Writes `<out_dir>/wavs/*.wav` and `<out_dir>/manifest.jsonl`; returns the
/// manifest path. Output is a pure function of (options, seed).
inline std::string generate_synthetic_corpus(const std::string& out_dir, std::uint64_t seed,
                                             const SyntheticCorpusOptions& options = {}) {
  namespace fs = std::filesystem;
  if (options.speakers < 1 || options.utterances_per_speaker < 1 || options.languages.empty()) {
    fail(ErrorKind::kConfig, "synthetic corpus needs at least one speaker, utterance and language");
  }
  for (const auto& l : options.languages) resolve_backend(l);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "wavs", ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + out_dir + ": " + ec.message());

  const LexiconBackend backend;
  std::vector<Utterance> utterances;
  for (int s = 0; s < options.speakers; ++s) {
    char label[32];
    std::snprintf(label, sizeof(label), "%s%02d", options.speaker_prefix.c_str(), s);
    const std::string language = options.languages[static_cast<std::size_t>(s) % options.languages.size()];
    const auto tag = resolve_backend(language);
    const auto voice = synthetic_detail::voice_for(s + options.voice_offset);
    for (int u = 0; u < options.utterances_per_speaker; ++u) {
      synthetic_detail::Stream rng(seed * 0x100000001B3ULL ^ detail::fnv1a64(std::string(label) + "/" + std::to_string(u)));
      std::string text;
      PhonemeSequence seq;
      const int words = 2 + static_cast<int>(rng.index(3));
      for (int w = 0; w < words; ++w) {
        const std::string word =
            language == "english" ? synthetic_detail::english_word(rng) : synthetic_detail::indic_word(rng, language);
        const std::string candidate = text.empty() ? word : text + " " + word;
        auto candidate_seq = phonemize(candidate, tag, backend);
        if (!text.empty() && candidate_seq.size() > 18) break;
        text = candidate;
        seq = std::move(candidate_seq);
      }
      std::vector<double> durations;
      double total = 0.0;
      for (std::size_t p = 0; p < seq.size(); ++p) {
        durations.push_back(rng.uniform(0.06, 0.14));
        total += durations.back();
      }
      const double target = std::clamp(total, options.min_duration + 0.02, options.max_duration - 0.02);
      Audio audio;
      audio.sample_rate = options.sample_rate;
      for (std::size_t p = 0; p < seq.size(); ++p) {
        synthetic_detail::render_phoneme(audio.samples, seq.phonemes[p], voice, durations[p] * target / total,
                                         options.sample_rate);
      }
      Utterance utt;
      utt.id = std::string(label) + "_" + language + "_" + std::to_string(u);
      utt.audio = "wavs/" + utt.id + ".wav";
      utt.text = text;
      utt.language = language;
      utt.speaker = label;
      write_wav((fs::path(out_dir) / utt.audio).string(), audio);
      utterances.push_back(std::move(utt));
    }
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.jsonl").string();
  write_manifest(manifest, utterances);
  return manifest;
}

}  // namespace polyvits
