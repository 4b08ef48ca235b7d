#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "polyvits/audio/spectrogram.hpp"
#include "polyvits/audio/wav.hpp"
#include "polyvits/config/run_config.hpp"
#include "polyvits/context/features.hpp"
#include "polyvits/data/manifest.hpp"
#include "polyvits/frontend/backend.hpp"
#include "polyvits/frontend/phonemize.hpp"
#include "polyvits/frontend/vocabulary.hpp"
#include "polyvits/io/serialize.hpp"

namespace polyvits {

/// Backend selection plus phonemizer options, as configured.
struct TextFrontend {
  std::shared_ptr<const PhonemizerBackend> backend;
  PhonemizeOptions options;

  static TextFrontend from_config(const FrontendConfig& cfg) {
    TextFrontend f;
    if (cfg.backend == "espeak") {
      f.backend = std::make_shared<EspeakBackend>(cfg.espeak_path);
    } else {
      f.backend = std::make_shared<LexiconBackend>();
    }
    f.options.insert_word_boundaries = cfg.word_boundaries;
    f.options.keep_punctuation = cfg.punctuation;
    return f;
  }

  PhonemeSequence phonemize(const std::string& text, const LanguageTag& tag) const {
    return polyvits::phonemize(text, tag, *backend, options);
  }
};

/// Corpus symbols plus the backend's full inventory when it has one, so
/// text in languages absent from the corpus still encodes without unknowns.
inline PhonemeVocabulary build_corpus_vocabulary(const std::vector<Utterance>& utterances, const TextFrontend& frontend) {
  std::vector<PhonemeSequence> seqs;
  seqs.reserve(utterances.size());
  for (const auto& u : utterances) seqs.push_back(frontend.phonemize(u.text, resolve_backend(u.language)));
  std::vector<std::string> extra;
  if (auto inv = frontend.backend->inventory()) extra = *inv;
  if (frontend.options.keep_punctuation) {
    for (const char* p : {".", ",", "!", "?", ";", ":", "-", "'", "\"", "(", ")", "।", "॥"}) extra.emplace_back(p);
  }
  return build_vocabulary(seqs, extra);
}

struct Example {
  std::string id;
  int lang_id = 0;
  int spk_id = 0;
  PhonemeSequence seq;  // ids populated
  Matrix context;       // phoneme-level rows; empty when context is disabled
  Matrix linear;        // F x bins
  Matrix mel;           // F x mel
  std::vector<double> wave;  // zero-padded to F * hop samples

  int phonemes() const { return static_cast<int>(seq.ids.size()); }
  int frames() const { return static_cast<int>(linear.rows()); }
};

/// Spectrograms cached per utterance under `<dir>/v1/`, keyed by a
/// fingerprint of the STFT settings and the audio file size.
class SpectrogramCache {
 public:
  static constexpr int kVersion = 1;

  SpectrogramCache(const std::string& dir, const RunConfig& cfg)
      : root_((std::filesystem::path(dir) / ("v" + std::to_string(kVersion))).string()) {
    std::string key;
    for (const char* k : {"data.sample_rate", "data.n_fft", "data.hop", "data.win", "data.mel_channels", "data.fmin",
                          "data.fmax"}) {
      key += std::string(k) + "=" + get_value(cfg, k) + ";";
    }
    fingerprint_ = std::to_string(detail::fnv1a64(key));
  }

  const std::string& root() const { return root_; }
  const std::string& fingerprint() const { return fingerprint_; }

  std::string entry_path(const std::string& id) const { return (std::filesystem::path(root_) / (id + ".cbor")).string(); }

  bool load(const Utterance& u, SpectrogramPair& out) const {
    const std::string path = entry_path(u.id);
    if (!std::filesystem::exists(path)) return false;
    const auto j = io::from_cbor(io::read_bytes(path), path);
    if (j.value("fingerprint", "") != fingerprint_ ||
        j.value("audio_bytes", std::uintmax_t{0}) != std::filesystem::file_size(u.audio_path)) {
      return false;
    }
    out.linear = io::matrix_from_json(j.at("linear"), path);
    out.mel = io::matrix_from_json(j.at("mel"), path);
    return true;
  }

  void store(const Utterance& u, const SpectrogramPair& s) const {
    io::Json j;
    j["fingerprint"] = fingerprint_;
    j["audio_bytes"] = std::filesystem::file_size(u.audio_path);
    j["linear"] = io::matrix_to_json(s.linear);
    j["mel"] = io::matrix_to_json(s.mel);
    io::write_atomic(entry_path(u.id), io::to_cbor(j));
  }

 private:
  std::string root_;
  std::string fingerprint_;
};

inline int lookup_speaker(const std::vector<std::string>& table, const std::string& label) {
  const auto it = std::find(table.begin(), table.end(), label);
  if (it == table.end()) fail(ErrorKind::kUnknownSpeaker, "unknown speaker '" + label + "'");
  return static_cast<int>(it - table.begin());
}

/// Turns manifest records into model-ready examples. `speakers` is the
/// model's speaker table; every utterance's speaker must be in it.
inline std::vector<Example> prepare_examples(const std::vector<Utterance>& utterances, const RunConfig& cfg,
                                             const PhonemeVocabulary& vocab, const TextFrontend& frontend,
                                             const std::vector<std::string>& speakers,
                                             const SpectrogramCache* cache = nullptr) {
  const Stft stft(cfg);
  std::unique_ptr<MemoizedFeatures> context;
  if (cfg.model.use_context) context = std::make_unique<MemoizedFeatures>(cfg.context);
  std::vector<Example> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) {
    Example ex;
    ex.id = u.id;
    ex.lang_id = language_id(u.language);
    ex.spk_id = lookup_speaker(speakers, u.speaker);
    const auto tag = resolve_backend(u.language);
    ex.seq = encode(frontend.phonemize(u.text, tag), vocab).sequence;
    if (context) ex.context = replicate_to_phonemes(context->get(u.text, tag), ex.seq).matrix;

    const Audio audio = read_wav(u.audio_path);
    if (audio.sample_rate != cfg.data.sample_rate) {
      fail(ErrorKind::kSampleRateMismatch, u.id + ": audio is " + std::to_string(audio.sample_rate) + " Hz, config expects " +
                                               std::to_string(cfg.data.sample_rate) + " Hz");
    }
    SpectrogramPair spec;
    if (cache == nullptr || !cache->load(u, spec)) {
      spec = compute_spectrograms(audio, stft);
      if (cache != nullptr) cache->store(u, spec);
    }
    ex.linear = std::move(spec.linear);
    ex.mel = std::move(spec.mel);
    if (ex.frames() < ex.phonemes()) {
      fail(ErrorKind::kInfeasible, u.id + ": " + std::to_string(ex.phonemes()) + " phonemes but only " +
                                       std::to_string(ex.frames()) + " frames");
    }
    ex.wave = audio.samples;
    ex.wave.resize(static_cast<std::size_t>(ex.frames()) * static_cast<std::size_t>(cfg.data.hop), 0.0);
    out.push_back(std::move(ex));
  }
  return out;
}

/// Length-bucketed batching. Indices are shuffled, cut into buckets of
/// 8 batches, sorted by length inside each bucket, chunked, and the batch
/// order is shuffled again. Every index appears exactly once per epoch
/// unless `drop_last` discards the trailing partial batch.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<int>& lengths, int batch_size,
                                                          std::uint64_t seed, bool drop_last = false) {
  if (lengths.empty()) fail(ErrorKind::kEmptyDataset, "cannot batch an empty dataset");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch size must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bucket = static_cast<std::size_t>(batch_size) * 8;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += bucket) {
    const auto end = std::min(order.size(), start + bucket);
    std::stable_sort(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end),
                     [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    if (drop_last && end - start < static_cast<std::size_t>(batch_size)) break;
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  if (batches.empty()) fail(ErrorKind::kEmptyDataset, "drop_last left no complete batch");
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

/// Per-item padded views of a batch. Padding is explicit so tests can add
/// extra padding and check that results do not move.
struct Batch {
  std::vector<const Example*> items;
  int max_p = 0;
  int max_f = 0;
  std::vector<int> valid_p;
  std::vector<int> valid_f;

  std::size_t size() const { return items.size(); }

  std::vector<int> padded_ids(std::size_t b) const {
    std::vector<int> ids(static_cast<std::size_t>(max_p), PhonemeVocabulary::kPad);
    std::copy(items[b]->seq.ids.begin(), items[b]->seq.ids.end(), ids.begin());
    return ids;
  }
  Matrix padded_context(std::size_t b) const {
    const Matrix& c = items[b]->context;
    Matrix out = Matrix::Zero(max_p, c.cols());
    out.topRows(c.rows()) = c;
    return out;
  }
  Matrix padded_linear(std::size_t b) const {
    const Matrix& s = items[b]->linear;
    Matrix out = Matrix::Zero(max_f, s.cols());
    out.topRows(s.rows()) = s;
    return out;
  }
  Matrix phoneme_mask(std::size_t b) const {
    Matrix m = Matrix::Zero(max_p, 1);
    m.topRows(valid_p[b]).setOnes();
    return m;
  }
  Matrix frame_mask(std::size_t b) const {
    Matrix m = Matrix::Zero(max_f, 1);
    m.topRows(valid_f[b]).setOnes();
    return m;
  }
};

inline Batch collate(const std::vector<const Example*>& items, int extra_phoneme_padding = 0, int extra_frame_padding = 0) {
  if (items.empty()) fail(ErrorKind::kEmptyDataset, "cannot collate an empty batch");
  Batch batch;
  batch.items = items;
  for (const auto* ex : items) {
    batch.valid_p.push_back(ex->phonemes());
    batch.valid_f.push_back(ex->frames());
    batch.max_p = std::max(batch.max_p, ex->phonemes());
    batch.max_f = std::max(batch.max_f, ex->frames());
  }
  batch.max_p += extra_phoneme_padding;
  batch.max_f += extra_frame_padding;
  return batch;
}

inline Batch collate(const std::vector<Example>& examples, const std::vector<std::size_t>& indices,
                     int extra_phoneme_padding = 0, int extra_frame_padding = 0) {
  std::vector<const Example*> items;
  for (std::size_t i : indices) items.push_back(&examples.at(i));
  return collate(items, extra_phoneme_padding, extra_frame_padding);
}

}  // namespace polyvits
