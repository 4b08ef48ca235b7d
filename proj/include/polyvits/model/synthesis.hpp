#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "polyvits/audio/wav.hpp"
#include "polyvits/config/run_config.hpp"
#include "polyvits/context/features.hpp"
#include "polyvits/data/dataset.hpp"
#include "polyvits/frontend/language.hpp"
#include "polyvits/frontend/vocabulary.hpp"
#include "polyvits/model/generator.hpp"

namespace polyvits::model {

struct SynthesisOptions {
  double noise_scale = 0.667;
  double noise_scale_duration = 0.8;
  double length_scale = 1.0;
  std::uint64_t seed = 0;

  static SynthesisOptions from_config(const InferenceConfig& c, std::uint64_t seed) {
    return {c.noise_scale, c.noise_scale_duration, c.length_scale, seed};
  }
};

struct SynthesisResult {
  Audio audio;
  std::vector<int> durations;  // frames per phoneme
  std::string backend;         // phonemizer language actually used
};

/// Text to waveform with the generator's inference path. Any supported
/// language may be paired with any speaker.
inline SynthesisResult synthesize(const Generator& generator, const RunConfig& cfg, const PhonemeVocabulary& vocab,
                                  const TextFrontend& frontend, const std::string& text, const std::string& lang_code,
                                  int spk_id, const SynthesisOptions& options) {
  const ag::NoGradGuard no_grad;
  const LanguageTag tag = resolve_backend(lang_code);
  const int lang_id = language_id(lang_code);
  const PhonemeSequence seq = encode(frontend.phonemize(text, tag), vocab).sequence;
  if (seq.ids.empty()) fail(ErrorKind::kEmptyText, "text produced no phonemes");
  std::optional<ContextFeatures> context;
  if (cfg.model.use_context) context = replicate_to_phonemes(extract_word_features(text, tag, cfg.context), seq);

  std::mt19937_64 rng(options.seed);
  const PriorStats prior = generator.encode_text(seq, context ? &*context : nullptr, lang_id, spk_id);
  const DurationPrediction durations = generator.predict_durations(
      prior.hidden, lang_id, spk_id, options.noise_scale_duration, options.length_scale, &rng);

  std::vector<int> owner;
  for (std::size_t p = 0; p < durations.frames.size(); ++p) owner.insert(owner.end(), static_cast<std::size_t>(durations.frames[p]), static_cast<int>(p));
  const Var mu = ag::gather_rows(prior.mu, owner);
  Var z_p = mu;
  if (options.noise_scale > 0.0) {
    const Var logvar = ag::gather_rows(prior.logvar, owner);
    const Matrix eps = nn::normal_matrix(mu.rows(), mu.cols(), options.noise_scale, rng);
    z_p = mu + ag::exp(ag::scale(logvar, 0.5)) * ag::constant(eps);
  }
  const Matrix mask = Matrix::Ones(mu.rows(), 1);
  const Var z = generator.flow_inverse(z_p, mask, spk_id);
  const Var wave = generator.decode_waveform(z, spk_id);
  check_finite(wave.value(), "synthesized waveform");

  SynthesisResult result;
  result.audio.sample_rate = cfg.data.sample_rate;
  result.audio.samples.assign(wave.value().data(), wave.value().data() + wave.value().size());
  result.durations = durations.frames;
  result.backend = tag.backend_code;
  return result;
}

}  // namespace polyvits::model
