#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/frontend/language.hpp"
#include "polyvits/frontend/phoneme_sequence.hpp"
#include "polyvits/frontend/phonemize.hpp"
#include "polyvits/tensor/autograd.hpp"
#include "polyvits/tensor/matrix.hpp"
#include "polyvits/tensor/nn.hpp"

namespace polyvits {

enum class FeatureLevel { kWord, kPhoneme };

struct ContextFeatures {
  FeatureLevel level = FeatureLevel::kWord;
  Matrix matrix;

  Eigen::Index rows() const { return matrix.rows(); }
  int dim() const { return static_cast<int>(matrix.cols()); }
};

enum class ExtractorKind { kStub, kPretrained };

struct ContextExtractorSpec {
  ExtractorKind kind = ExtractorKind::kStub;
  int dim = 8;
  /// Model name for pretrained extractors, seed string for the stub.
  std::string identifier = "42";
};

inline std::string to_string(ExtractorKind kind) { return kind == ExtractorKind::kStub ? "stub" : "pretrained"; }

inline ExtractorKind parse_extractor_kind(const std::string& s) {
  if (s == "stub") return ExtractorKind::kStub;
  if (s == "pretrained") return ExtractorKind::kPretrained;
  fail(ErrorKind::kConfig, "unknown extractor kind '" + s + "'");
}

/// Produces one row per word. Instances may keep state and are not shared
/// across threads.
class ContextExtractor {
 public:
  virtual ~ContextExtractor() = default;
  virtual std::string identifier() const = 0;
  virtual Matrix extract(const std::vector<std::string>& words, const LanguageTag& tag) = 0;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic stand-in for a contextual encoder. Row for word w at
/// position i is splitmix64 noise in [-1, 1) seeded by
/// FNV-1a("<seed>\x1f<w>\x1f<i>"), scaled to unit L2 norm.
class StubExtractor final : public ContextExtractor {
 public:
  StubExtractor(std::string seed, int dim) : seed_(std::move(seed)), dim_(dim) {
    if (dim_ <= 0) fail(ErrorKind::kConfig, "context dim must be positive");
  }

  std::string identifier() const override { return "stub:" + seed_; }

  static RowVector word_vector(const std::string& seed, const std::string& word, std::size_t position, int dim) {
    std::uint64_t state = detail::fnv1a64(seed + '\x1f' + word + '\x1f' + std::to_string(position));
    RowVector v(dim);
    for (int j = 0; j < dim; ++j) {
      const std::uint64_t bits = detail::splitmix64(state);
      v(j) = 2.0 * (static_cast<double>(bits >> 11) * 0x1.0p-53) - 1.0;
    }
    const double norm = v.norm();
    if (norm == 0.0) {
      v.setZero();
      v(0) = 1.0;
      return v;
    }
    return v / norm;
  }

  Matrix extract(const std::vector<std::string>& words, const LanguageTag&) override {
    Matrix m(static_cast<Eigen::Index>(words.size()), dim_);
    for (std::size_t i = 0; i < words.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = word_vector(seed_, words[i], i, dim_);
    return m;
  }

 private:
  std::string seed_;
  int dim_;
};

/// Averages subword vectors into one row per word. `owner[k]` is the word
/// index of subword k; every word must own at least one subword.
inline Matrix mean_pool_subwords(const Matrix& subwords, const std::vector<int>& owner, int word_count) {
  if (static_cast<Eigen::Index>(owner.size()) != subwords.rows()) {
    fail(ErrorKind::kLengthMismatch, "subword owner list does not match subword rows");
  }
  Matrix out = Matrix::Zero(word_count, subwords.cols());
  std::vector<int> counts(static_cast<std::size_t>(word_count), 0);
  for (std::size_t k = 0; k < owner.size(); ++k) {
    const int w = owner[k];
    if (w < 0 || w >= word_count) fail(ErrorKind::kOutOfRange, "subword owner out of range");
    out.row(w) += subwords.row(static_cast<Eigen::Index>(k));
    ++counts[static_cast<std::size_t>(w)];
  }
  for (int w = 0; w < word_count; ++w) {
    if (counts[static_cast<std::size_t>(w)] == 0) fail(ErrorKind::kWordCountMismatch, "word without subwords");
    out.row(w) /= counts[static_cast<std::size_t>(w)];
  }
  return out;
}

/// Factories for pretrained adapters, keyed by model identifier. Nothing is
/// registered by default.
class ExtractorRegistry {
 public:
  using Factory = std::function<std::unique_ptr<ContextExtractor>(const ContextExtractorSpec&)>;

  static ExtractorRegistry& instance() {
    static ExtractorRegistry registry;
    return registry;
  }

  void add(const std::string& identifier, Factory factory) {
    std::lock_guard<std::mutex> lock(mutex_);
    factories_[identifier] = std::move(factory);
  }

  void remove(const std::string& identifier) {
    std::lock_guard<std::mutex> lock(mutex_);
    factories_.erase(identifier);
  }

  std::unique_ptr<ContextExtractor> create(const ContextExtractorSpec& spec) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = factories_.find(spec.identifier);
    if (it == factories_.end()) {
      fail(ErrorKind::kExtractorUnavailable, "pretrained extractor '" + spec.identifier + "' is not installed");
    }
    return it->second(spec);
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Factory> factories_;
};

inline std::unique_ptr<ContextExtractor> make_extractor(const ContextExtractorSpec& spec) {
  if (spec.dim <= 0) fail(ErrorKind::kConfig, "context dim must be positive");
  if (spec.kind == ExtractorKind::kStub) return std::make_unique<StubExtractor>(spec.identifier, spec.dim);
  return ExtractorRegistry::instance().create(spec);
}

/// Words are segmented exactly as the phonemizer segments them, so word
/// counts agree by construction. The tag's own code (not the phonemizer
/// alias) is what the extractor sees.
inline ContextFeatures extract_word_features(const std::string& text, const LanguageTag& tag,
                                             ContextExtractor& extractor, const ContextExtractorSpec& spec) {
  const auto segmented = segment_words(text);
  if (segmented.empty()) fail(ErrorKind::kEmptyText, "no words to extract features from");
  std::vector<std::string> words;
  words.reserve(segmented.size());
  for (const auto& w : segmented) words.push_back(w.text);
  Matrix m = extractor.extract(words, tag);
  if (m.cols() != spec.dim) {
    fail(ErrorKind::kDimensionMismatch, extractor.identifier() + " returned dim " + std::to_string(m.cols()) +
                                            ", expected " + std::to_string(spec.dim));
  }
  if (m.rows() != static_cast<Eigen::Index>(words.size())) {
    fail(ErrorKind::kWordCountMismatch, extractor.identifier() + " returned " + std::to_string(m.rows()) +
                                            " rows for " + std::to_string(words.size()) + " words");
  }
  if (!m.allFinite()) fail(ErrorKind::kNonFinite, extractor.identifier() + " returned non-finite features");
  return {FeatureLevel::kWord, std::move(m)};
}

inline ContextFeatures extract_word_features(const std::string& text, const LanguageTag& tag,
                                             const ContextExtractorSpec& spec) {
  auto extractor = make_extractor(spec);
  return extract_word_features(text, tag, *extractor, spec);
}

/// In-memory cache of word features keyed by (language code, text).
class MemoizedFeatures {
 public:
  explicit MemoizedFeatures(ContextExtractorSpec spec) : spec_(std::move(spec)), extractor_(make_extractor(spec_)) {}

  const ContextFeatures& get(const std::string& text, const LanguageTag& tag) {
    auto key = std::make_pair(tag.code, text);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, extract_word_features(text, tag, *extractor_, spec_)).first;
    return it->second;
  }

  const ContextExtractorSpec& spec() const { return spec_; }
  std::size_t size() const { return cache_.size(); }

 private:
  ContextExtractorSpec spec_;
  std::unique_ptr<ContextExtractor> extractor_;
  std::map<std::pair<std::string, std::string>, ContextFeatures> cache_;
};

inline ContextFeatures replicate_to_phonemes(const ContextFeatures& words, const PhonemeSequence& seq) {
  if (words.level != FeatureLevel::kWord) fail(ErrorKind::kWordCountMismatch, "replication expects word-level features");
  if (words.rows() != static_cast<Eigen::Index>(seq.word_count())) {
    fail(ErrorKind::kWordCountMismatch, std::to_string(words.rows()) + " feature rows for " +
                                            std::to_string(seq.word_count()) + " words");
  }
  check_spans(seq);
  const auto owners = seq.phoneme_owners();
  Matrix out(static_cast<Eigen::Index>(owners.size()), words.matrix.cols());
  for (std::size_t j = 0; j < owners.size(); ++j) out.row(static_cast<Eigen::Index>(j)) = words.matrix.row(owners[j]);
  return {FeatureLevel::kPhoneme, std::move(out)};
}

/// Learned projection context_dim -> H added to phoneme embeddings,
/// zero-initialized so fusion starts as the identity.
struct ContextFusion {
  nn::Linear projection;

  ContextFusion() = default;
  ContextFusion(nn::ParameterSet& ps, std::mt19937_64& rng, const std::string& name, int context_dim, int hidden)
      : projection(ps, rng, name, context_dim, hidden, nn::Init::kZero) {}

  ag::Var operator()(const ag::Var& embeddings, const ag::Var& context) const {
    if (embeddings.rows() != context.rows()) {
      fail(ErrorKind::kLengthMismatch, "context has " + std::to_string(context.rows()) + " rows, embeddings have " +
                                           std::to_string(embeddings.rows()));
    }
    return ag::add(embeddings, projection(context));
  }
};

inline Matrix fuse(const Matrix& embeddings, const ContextFeatures& context, const Matrix& weight,
                   const RowVector& bias) {
  if (context.level != FeatureLevel::kPhoneme || context.rows() != embeddings.rows()) {
    fail(ErrorKind::kLengthMismatch, "context rows do not match phoneme count");
  }
  if (weight.rows() != context.matrix.cols() || weight.cols() != embeddings.cols() || bias.size() != embeddings.cols()) {
    fail(ErrorKind::kDimensionMismatch, "projection shape does not match context/embedding dims");
  }
  Matrix out = embeddings + context.matrix * weight;
  out.rowwise() += bias;
  return out;
}

}  // namespace polyvits
