#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "polyvits/error.hpp"

namespace polyvits {

struct WordSpan {
  int word_index = 0;
  int length = 0;
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

/// IPA symbols of an utterance plus the bookkeeping linking every phoneme to
/// the whitespace word it came from. `ids` stays empty until `encode`.
struct PhonemeSequence {
  std::vector<std::string> phonemes;
  std::vector<int> ids;
  std::vector<WordSpan> word_spans;

  std::size_t size() const { return phonemes.size(); }
  std::size_t word_count() const { return word_spans.size(); }

  /// Word index owning each phoneme position.
  std::vector<int> phoneme_owners() const {
    std::vector<int> owners;
    owners.reserve(phonemes.size());
    for (const auto& span : word_spans) owners.insert(owners.end(), span.length, span.word_index);
    return owners;
  }

  friend bool operator==(const PhonemeSequence&, const PhonemeSequence&) = default;
};

/// Throws unless spans are contiguous from word 0 and exactly cover the
/// phoneme list, and ids (when present) match the phoneme count.
inline void check_spans(const PhonemeSequence& seq) {
  int expected_word = 0;
  long total = 0;
  for (const auto& span : seq.word_spans) {
    if (span.word_index != expected_word) {
      fail(ErrorKind::kSchema, "word spans are not contiguous at word " + std::to_string(expected_word));
    }
    if (span.length < 1) {
      fail(ErrorKind::kSchema, "word " + std::to_string(span.word_index) + " has an empty span");
    }
    total += span.length;
    ++expected_word;
  }
  if (total != static_cast<long>(seq.phonemes.size())) {
    fail(ErrorKind::kSchema, "word spans cover " + std::to_string(total) + " phonemes, sequence has " +
                                 std::to_string(seq.phonemes.size()));
  }
  if (!seq.ids.empty() && seq.ids.size() != seq.phonemes.size()) {
    fail(ErrorKind::kSchema, "id count does not match phoneme count");
  }
}

}  // namespace polyvits
