#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/frontend/phoneme_sequence.hpp"
#include "polyvits/frontend/phonemize.hpp"

namespace polyvits {

/// Bijection between IPA symbols and a contiguous ID range. IDs 0..2 are
/// reserved for padding, unknown symbols and word boundaries.
class PhonemeVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;
  static constexpr int kBoundary = 2;
  static constexpr int kReservedCount = 3;

  PhonemeVocabulary() : symbols_{"<pad>", "<unk>", kWordBoundarySymbol} { reindex(); }

  /// Builds from an id-ordered symbol list that includes the reserved entries.
  static PhonemeVocabulary from_symbols(std::vector<std::string> symbols) {
    PhonemeVocabulary vocab;
    if (symbols.size() < kReservedCount || symbols[kPad] != "<pad>" || symbols[kUnknown] != "<unk>" ||
        symbols[kBoundary] != kWordBoundarySymbol) {
      fail(ErrorKind::kSchema, "vocabulary must start with the reserved <pad>, <unk>, <wb> entries");
    }
    vocab.symbols_ = std::move(symbols);
    vocab.reindex();
    if (vocab.index_.size() != vocab.symbols_.size()) fail(ErrorKind::kSchema, "vocabulary has duplicate symbols");
    return vocab;
  }

  std::size_t size() const { return symbols_.size(); }
  std::size_t symbol_count() const { return symbols_.size() - kReservedCount; }

  std::optional<int> id_of(const std::string& symbol) const {
    const auto it = index_.find(symbol);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& symbol_of(int id) const {
    if (id < 0 || id >= static_cast<int>(symbols_.size())) {
      fail(ErrorKind::kOutOfRange, "phoneme id " + std::to_string(id) + " outside vocabulary");
    }
    return symbols_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& symbols() const { return symbols_; }

  /// `symbol<TAB>id` per line, sorted by id.
  std::string to_tsv() const {
    std::ostringstream os;
    for (std::size_t id = 0; id < symbols_.size(); ++id) os << symbols_[id] << '\t' << id << '\n';
    return os.str();
  }

  static PhonemeVocabulary from_tsv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::string> symbols;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos) fail(ErrorKind::kSchema, "vocabulary line " + std::to_string(line_no) + ": missing tab");
      const std::string symbol = line.substr(0, tab);
      int id = -1;
      try {
        id = std::stoi(line.substr(tab + 1));
      } catch (const std::exception&) {
        fail(ErrorKind::kSchema, "vocabulary line " + std::to_string(line_no) + ": bad id");
      }
      if (id != static_cast<int>(symbols.size())) {
        fail(ErrorKind::kSchema, "vocabulary line " + std::to_string(line_no) + ": ids must be contiguous from 0");
      }
      symbols.push_back(symbol);
    }
    return from_symbols(std::move(symbols));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write vocabulary to " + path);
    out << to_tsv();
  }

  static PhonemeVocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::kIo, "cannot read vocabulary from " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_tsv(ss.str());
  }

  /// FNV-1a of the serialized form, as lowercase hex.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : to_tsv()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }

  friend bool operator==(const PhonemeVocabulary& a, const PhonemeVocabulary& b) { return a.symbols_ == b.symbols_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<int>(i));
  }

  std::vector<std::string> symbols_;
  std::map<std::string, int> index_;
};

/// Maps every symbol occurring in `sequences` (plus `extra_symbols`) to an ID;
/// symbols are sorted bytewise so rebuilding is reproducible.
inline PhonemeVocabulary build_vocabulary(const std::vector<PhonemeSequence>& sequences,
                                          const std::vector<std::string>& extra_symbols = {}) {
  if (sequences.empty()) fail(ErrorKind::kEmptyCorpus, "cannot build a vocabulary from an empty corpus");
  const PhonemeVocabulary reserved;
  std::set<std::string> symbols(extra_symbols.begin(), extra_symbols.end());
  for (const auto& seq : sequences) symbols.insert(seq.phonemes.begin(), seq.phonemes.end());
  std::vector<std::string> ordered = reserved.symbols();
  for (const auto& s : symbols) {
    if (!reserved.id_of(s)) ordered.push_back(s);
  }
  return PhonemeVocabulary::from_symbols(std::move(ordered));
}

struct EncodeResult {
  PhonemeSequence sequence;
  int unknown_count = 0;
};

inline EncodeResult encode(const PhonemeSequence& seq, const PhonemeVocabulary& vocab) {
  EncodeResult result{seq, 0};
  result.sequence.ids.clear();
  result.sequence.ids.reserve(seq.phonemes.size());
  for (const auto& symbol : seq.phonemes) {
    const auto id = vocab.id_of(symbol);
    if (!id || *id == PhonemeVocabulary::kPad || *id == PhonemeVocabulary::kUnknown) {
      result.sequence.ids.push_back(PhonemeVocabulary::kUnknown);
      ++result.unknown_count;
    } else {
      result.sequence.ids.push_back(*id);
    }
  }
  return result;
}

}  // namespace polyvits
