#pragma once

#include <string>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/frontend/backend.hpp"
#include "polyvits/frontend/language.hpp"
#include "polyvits/frontend/phoneme_sequence.hpp"
#include "polyvits/frontend/utf8.hpp"

namespace polyvits {

inline constexpr const char* kWordBoundarySymbol = "<wb>";

struct PhonemizeOptions {
  bool insert_word_boundaries = false;
  bool keep_punctuation = false;
};

/// A whitespace token after punctuation stripping. `leading`/`trailing` hold
/// the stripped punctuation so it can optionally be re-emitted.
struct Word {
  std::string text;
  std::string leading;
  std::string trailing;
};

/// Whitespace segmentation with punctuation stripped from both ends of every
/// token; tokens that were pure punctuation are folded into the neighbouring
/// word's `trailing`/`leading` text. This is the single source of truth for
/// what counts as a word, shared with the context extractor.
inline std::vector<Word> segment_words(const std::string& text) {
  std::vector<std::vector<char32_t>> tokens;
  std::vector<char32_t> current;
  for (char32_t cp : utf8::decode(text)) {
    if (utf8::is_space(cp)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(cp);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));

  std::vector<Word> words;
  std::string orphan_leading;
  for (const auto& token : tokens) {
    std::size_t begin = 0;
    std::size_t end = token.size();
    while (begin < end && (utf8::is_punctuation(token[begin]) || utf8::is_format_control(token[begin]))) ++begin;
    while (end > begin && (utf8::is_punctuation(token[end - 1]) || utf8::is_format_control(token[end - 1]))) --end;
    std::vector<char32_t> lead(token.begin(), token.begin() + static_cast<long>(begin));
    std::vector<char32_t> body(token.begin() + static_cast<long>(begin), token.begin() + static_cast<long>(end));
    std::vector<char32_t> trail(token.begin() + static_cast<long>(end), token.end());
    if (body.empty()) {
      if (!words.empty()) {
        words.back().trailing += utf8::encode(token);
      } else {
        orphan_leading += utf8::encode(token);
      }
      continue;
    }
    Word word{utf8::encode(body), orphan_leading + utf8::encode(lead), utf8::encode(trail)};
    orphan_leading.clear();
    words.push_back(std::move(word));
  }
  return words;
}

namespace detail {

inline void append_punctuation(std::vector<std::string>& out, const std::string& text) {
  for (char32_t cp : utf8::decode(text)) {
    if (utf8::is_punctuation(cp)) {
      std::string symbol;
      utf8::append(symbol, cp);
      out.push_back(symbol);
    }
  }
}

}  // namespace detail

/// Phonemizes word by word so that every phoneme is attributed to exactly
/// one source word. Safe to call concurrently; thread safety of the backend
/// is the backend's responsibility.
inline PhonemeSequence phonemize(const std::string& text, const LanguageTag& tag,
                                 const PhonemizerBackend& backend, const PhonemizeOptions& options = {}) {
  const auto words = segment_words(text);
  if (words.empty()) fail(ErrorKind::kEmptyText, "no words to phonemize in '" + text + "'");
  if (!backend.supports(tag.backend_code)) {
    fail(ErrorKind::kBackendFailure,
         backend.name() + " does not support backend language '" + tag.backend_code + "'");
  }
  PhonemeSequence seq;
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::vector<std::string> symbols;
    if (options.keep_punctuation) detail::append_punctuation(symbols, words[w].leading);
    auto phones = backend.phonemize_word(words[w].text, tag.backend_code);
    if (phones.empty()) {
      fail(ErrorKind::kBackendFailure, backend.name() + " produced no phonemes for word '" + words[w].text + "'");
    }
    symbols.insert(symbols.end(), phones.begin(), phones.end());
    if (options.keep_punctuation) detail::append_punctuation(symbols, words[w].trailing);
    if (options.insert_word_boundaries && w + 1 < words.size()) symbols.emplace_back(kWordBoundarySymbol);
    seq.word_spans.push_back({static_cast<int>(w), static_cast<int>(symbols.size())});
    seq.phonemes.insert(seq.phonemes.end(), symbols.begin(), symbols.end());
  }
  return seq;
}

}  // namespace polyvits
