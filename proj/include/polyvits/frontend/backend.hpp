#pragma once

#include <array>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/frontend/utf8.hpp"

namespace polyvits {

/// Converts one orthographic word into IPA symbols. Implementations must be
/// deterministic for a fixed version.
class PhonemizerBackend {
 public:
  virtual ~PhonemizerBackend() = default;

  virtual std::string name() const = 0;
  virtual bool supports(std::string_view backend_code) const = 0;
  virtual std::vector<std::string> phonemize_word(const std::string& word,
                                                  const std::string& backend_code) const = 0;
  /// Every symbol the backend can emit, when it is known up front.
  virtual std::optional<std::vector<std::string>> inventory() const { return std::nullopt; }
};

namespace detail {

// Vowel classes shared by the Brahmic scripts handled below.
enum class Vowel { kInherent, kAA, kI, kII, kU, kUU, kR, kEShort, kE, kAI, kOCandra, kOShort, kO, kAU };

struct IndicVowelTable {
  std::map<Vowel, std::vector<std::string>> symbols;
  bool drop_final_inherent = false;
};

inline const IndicVowelTable& indic_vowels(std::string_view lang) {
  using V = Vowel;
  static const IndicVowelTable hindi{{{V::kInherent, {"ə"}}, {V::kAA, {"aː"}}, {V::kI, {"ɪ"}},
                                      {V::kII, {"iː"}}, {V::kU, {"ʊ"}}, {V::kUU, {"uː"}},
                                      {V::kR, {"ɾ", "ɪ"}}, {V::kEShort, {"e"}}, {V::kE, {"eː"}},
                                      {V::kAI, {"ɛː"}}, {V::kOCandra, {"ɔ"}}, {V::kOShort, {"o"}},
                                      {V::kO, {"oː"}}, {V::kAU, {"ɔː"}}},
                                     true};
  static const IndicVowelTable marathi{{{V::kInherent, {"ə"}}, {V::kAA, {"aː"}}, {V::kI, {"i"}},
                                        {V::kII, {"iː"}}, {V::kU, {"u"}}, {V::kUU, {"uː"}},
                                        {V::kR, {"ɾ", "u"}}, {V::kEShort, {"e"}}, {V::kE, {"eː"}},
                                        {V::kAI, {"ə", "i"}}, {V::kOCandra, {"ɔ"}}, {V::kOShort, {"o"}},
                                        {V::kO, {"oː"}}, {V::kAU, {"ə", "u"}}},
                                       true};
  static const IndicVowelTable bengali{{{V::kInherent, {"ɔ"}}, {V::kAA, {"a"}}, {V::kI, {"i"}},
                                        {V::kII, {"i"}}, {V::kU, {"u"}}, {V::kUU, {"u"}},
                                        {V::kR, {"ɾ", "i"}}, {V::kEShort, {"e"}}, {V::kE, {"e"}},
                                        {V::kAI, {"o", "i"}}, {V::kOCandra, {"ɔ"}}, {V::kOShort, {"o"}},
                                        {V::kO, {"o"}}, {V::kAU, {"o", "u"}}},
                                       true};
  static const IndicVowelTable dravidian{{{V::kInherent, {"a"}}, {V::kAA, {"aː"}}, {V::kI, {"i"}},
                                          {V::kII, {"iː"}}, {V::kU, {"u"}}, {V::kUU, {"uː"}},
                                          {V::kR, {"ɾ", "u"}}, {V::kEShort, {"e"}}, {V::kE, {"eː"}},
                                          {V::kAI, {"a", "i"}}, {V::kOCandra, {"ɔ"}}, {V::kOShort, {"o"}},
                                          {V::kO, {"oː"}}, {V::kAU, {"a", "u"}}},
                                         false};
  if (lang == "hindi") return hindi;
  if (lang == "marathi") return marathi;
  if (lang == "bengali") return bengali;
  return dravidian;
}

// Devanagari, Bengali, Telugu and Kannada share the ISCII-derived layout, so
// one table keyed by offset within the 128-codepoint block serves all four.
inline constexpr std::array<char32_t, 4> kIndicBlocks = {0x0900, 0x0980, 0x0C00, 0x0C80};

inline std::optional<char32_t> indic_offset(char32_t cp) {
  for (char32_t base : kIndicBlocks) {
    if (cp >= base && cp < base + 0x80) return cp - base;
  }
  return std::nullopt;
}

inline const char* indic_consonant(char32_t offset, std::string_view lang) {
  static const std::array<const char*, 0x25> table = {
      "k",  "kʰ",  "ɡ",  "ɡʱ",  "ŋ",                   // 0x15
      "tʃ", "tʃʰ", "dʒ", "dʒʱ", "ɲ",                   // 0x1A
      "ʈ",  "ʈʰ",  "ɖ",  "ɖʱ",  "ɳ",                   // 0x1F
      "t̪",  "t̪ʰ",  "d̪",  "d̪ʱ",  "n",  "n",             // 0x24
      "p",  "pʰ",  "b",  "bʱ",  "m",                   // 0x2A
      "j",  "ɾ",   "r",  "l",   "ɭ",  "ɻ", "ʋ",         // 0x2F
      "ʃ",  "ʂ",   "s",  "h"};                         // 0x36
  if (offset < 0x15 || offset > 0x39) {
    switch (offset) {
      case 0x58: return "q";
      case 0x59: return "x";
      case 0x5A: return "ɣ";
      case 0x5B: return "z";
      case 0x5C: return "ɽ";
      case 0x5D: return "ɽʱ";
      case 0x5E: return "f";
      case 0x5F: return "j";
      case 0x4E: return "t̪";
      default: return nullptr;
    }
  }
  if (lang == "bengali") {
    if (offset == 0x2F) return "dʒ";
    if (offset == 0x36 || offset == 0x37 || offset == 0x38) return "ʃ";
  }
  return table[offset - 0x15];
}

inline std::optional<Vowel> indic_independent_vowel(char32_t offset) {
  switch (offset) {
    case 0x05: return Vowel::kInherent;
    case 0x06: return Vowel::kAA;
    case 0x07: return Vowel::kI;
    case 0x08: return Vowel::kII;
    case 0x09: return Vowel::kU;
    case 0x0A: return Vowel::kUU;
    case 0x0B: return Vowel::kR;
    case 0x0D: case 0x0E: return Vowel::kEShort;
    case 0x0F: return Vowel::kE;
    case 0x10: return Vowel::kAI;
    case 0x11: return Vowel::kOCandra;
    case 0x12: return Vowel::kOShort;
    case 0x13: return Vowel::kO;
    case 0x14: return Vowel::kAU;
    default: return std::nullopt;
  }
}

inline std::optional<Vowel> indic_vowel_sign(char32_t offset) {
  switch (offset) {
    case 0x3E: return Vowel::kAA;
    case 0x3F: return Vowel::kI;
    case 0x40: return Vowel::kII;
    case 0x41: return Vowel::kU;
    case 0x42: return Vowel::kUU;
    case 0x43: case 0x44: return Vowel::kR;
    case 0x45: case 0x46: return Vowel::kEShort;
    case 0x47: return Vowel::kE;
    case 0x48: return Vowel::kAI;
    case 0x49: return Vowel::kOCandra;
    case 0x4A: return Vowel::kOShort;
    case 0x4B: return Vowel::kO;
    case 0x4C: return Vowel::kAU;
    default: return std::nullopt;
  }
}

inline std::string apply_nukta(const std::string& consonant) {
  static const std::map<std::string, std::string> shifted = {
      {"k", "q"}, {"kʰ", "x"}, {"ɡ", "ɣ"}, {"dʒ", "z"}, {"ɖ", "ɽ"}, {"ɖʱ", "ɽʱ"}, {"pʰ", "f"}};
  const auto it = shifted.find(consonant);
  return it == shifted.end() ? consonant : it->second;
}

inline std::vector<std::string> indic_g2p(const std::vector<char32_t>& cps, const std::string& word,
                                          std::string_view lang, const std::string& backend_name) {
  const auto& vowels = indic_vowels(lang);
  std::vector<std::string> out;
  bool pending_inherent = false;
  int syllables = 0;
  auto flush = [&] {
    if (pending_inherent) {
      for (const auto& s : vowels.symbols.at(Vowel::kInherent)) out.push_back(s);
      pending_inherent = false;
    }
  };
  auto emit_vowel = [&](Vowel v) {
    for (const auto& s : vowels.symbols.at(v)) out.push_back(s);
    ++syllables;
  };
  for (char32_t cp : cps) {
    if (utf8::is_format_control(cp)) continue;
    const auto offset = indic_offset(cp);
    if (!offset) {
      fail(ErrorKind::kBackendFailure, backend_name + ": cannot phonemize '" + word + "' as " +
                                           std::string(lang) + " (character outside Indic scripts)");
    }
    if (const char* c = indic_consonant(*offset, lang)) {
      flush();
      out.emplace_back(c);
      pending_inherent = true;
      ++syllables;
    } else if (auto v = indic_independent_vowel(*offset)) {
      flush();
      emit_vowel(*v);
    } else if (auto sign = indic_vowel_sign(*offset)) {
      if (!pending_inherent) {
        emit_vowel(*sign);
      } else {
        pending_inherent = false;
        for (const auto& s : vowels.symbols.at(*sign)) out.push_back(s);
      }
    } else if (*offset == 0x4D) {
      if (pending_inherent) --syllables;
      pending_inherent = false;
    } else if (*offset == 0x3C) {
      if (!out.empty()) out.back() = apply_nukta(out.back());
    } else if (*offset == 0x01 || *offset == 0x02) {
      flush();
      out.emplace_back("n");
    } else if (*offset == 0x03) {
      flush();
      out.emplace_back("h");
    } else if (*offset == 0x50) {
      flush();
      out.emplace_back("oː");
      out.emplace_back("m");
    } else if (*offset == 0x3D || *offset == 0x55 || *offset == 0x56 || *offset == 0x57) {
      // avagraha and length marks are not pronounced on their own
    } else {
      fail(ErrorKind::kBackendFailure, backend_name + ": unmapped character in '" + word + "'");
    }
  }
  if (pending_inherent) {
    if (!(vowels.drop_final_inherent && syllables > 1)) flush();
  }
  return out;
}

inline const std::map<std::string, std::vector<std::string>>& english_lexicon() {
  static const std::map<std::string, std::vector<std::string>> lexicon = {
      {"a", {"ə"}},
      {"about", {"ə", "b", "aʊ", "t"}},
      {"all", {"ɔː", "l"}},
      {"and", {"æ", "n", "d"}},
      {"are", {"ɑː", "ɹ"}},
      {"bright", {"b", "ɹ", "aɪ", "t"}},
      {"city", {"s", "ɪ", "t", "i"}},
      {"clear", {"k", "l", "ɪ", "ɹ"}},
      {"day", {"d", "eɪ"}},
      {"evening", {"iː", "v", "n", "ɪ", "ŋ"}},
      {"friend", {"f", "ɹ", "ɛ", "n", "d"}},
      {"good", {"ɡ", "ʊ", "d"}},
      {"green", {"ɡ", "ɹ", "iː", "n"}},
      {"hello", {"h", "ə", "l", "oʊ"}},
      {"house", {"h", "aʊ", "s"}},
      {"is", {"ɪ", "z"}},
      {"light", {"l", "aɪ", "t"}},
      {"morning", {"m", "ɔː", "ɹ", "n", "ɪ", "ŋ"}},
      {"music", {"m", "j", "uː", "z", "ɪ", "k"}},
      {"new", {"n", "uː"}},
      {"of", {"ʌ", "v"}},
      {"one", {"w", "ʌ", "n"}},
      {"people", {"p", "iː", "p", "əl"}},
      {"quiet", {"k", "w", "aɪ", "ə", "t"}},
      {"rain", {"ɹ", "eɪ", "n"}},
      {"river", {"ɹ", "ɪ", "v", "ɚ"}},
      {"road", {"ɹ", "oʊ", "d"}},
      {"see", {"s", "iː"}},
      {"small", {"s", "m", "ɔː", "l"}},
      {"song", {"s", "ɔ", "ŋ"}},
      {"speech", {"s", "p", "iː", "tʃ"}},
      {"the", {"ð", "ə"}},
      {"this", {"ð", "ɪ", "s"}},
      {"to", {"t", "uː"}},
      {"today", {"t", "ə", "d", "eɪ"}},
      {"voice", {"v", "ɔɪ", "s"}},
      {"warm", {"w", "ɔː", "ɹ", "m"}},
      {"water", {"w", "ɔː", "t", "ɚ"}},
      {"we", {"w", "iː"}},
      {"with", {"w", "ɪ", "ð"}},
      {"world", {"w", "ɜː", "l", "d"}},
      {"you", {"j", "uː"}},
  };
  return lexicon;
}

// Letter-to-sound fallback for words missing from the lexicon.
inline std::vector<std::string> english_rules(const std::string& lower, const std::string& word,
                                              const std::string& backend_name) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> multi = {
      {"tch", {"tʃ"}}, {"igh", {"aɪ"}}, {"th", {"θ"}},  {"sh", {"ʃ"}},  {"ch", {"tʃ"}},
      {"ph", {"f"}},   {"ng", {"ŋ"}},   {"ck", {"k"}},  {"qu", {"k", "w"}}, {"ee", {"iː"}},
      {"ea", {"iː"}},  {"oo", {"uː"}},  {"ou", {"aʊ"}}, {"ow", {"oʊ"}}, {"ai", {"eɪ"}},
      {"ay", {"eɪ"}},  {"oa", {"oʊ"}},  {"oi", {"ɔɪ"}}, {"oy", {"ɔɪ"}}, {"wh", {"w"}}};
  static const std::map<char, std::vector<std::string>> single = {
      {'a', {"æ"}}, {'b', {"b"}}, {'c', {"k"}}, {'d', {"d"}}, {'e', {"ɛ"}}, {'f', {"f"}},
      {'g', {"ɡ"}}, {'h', {"h"}}, {'i', {"ɪ"}}, {'j', {"dʒ"}}, {'k', {"k"}}, {'l', {"l"}},
      {'m', {"m"}}, {'n', {"n"}}, {'o', {"ɒ"}}, {'p', {"p"}}, {'q', {"k"}}, {'r', {"ɹ"}},
      {'s', {"s"}}, {'t', {"t"}}, {'u', {"ʌ"}}, {'v', {"v"}}, {'w', {"w"}}, {'x', {"k", "s"}},
      {'z', {"z"}}};
  std::string s = lower;
  // silent final e after a consonant
  if (s.size() > 2 && s.back() == 'e' && single.count(s[s.size() - 2]) &&
      std::string("aeiou").find(s[s.size() - 2]) == std::string::npos) {
    s.pop_back();
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    bool matched = false;
    for (const auto& [graph, phones] : multi) {
      if (s.compare(i, graph.size(), graph) == 0) {
        out.insert(out.end(), phones.begin(), phones.end());
        i += graph.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    const char c = s[i];
    if (c == 'y') {
      out.emplace_back(i == 0 ? "j" : "i");
      ++i;
      continue;
    }
    if (c == '\'') {
      ++i;
      continue;
    }
    const auto it = single.find(c);
    if (it == single.end()) {
      fail(ErrorKind::kBackendFailure, backend_name + ": cannot phonemize '" + word + "' as english");
    }
    // doubled consonants are pronounced once
    if (i > 0 && s[i - 1] == c && std::string("aeiou").find(c) == std::string::npos) {
      ++i;
      continue;
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
    ++i;
  }
  return out;
}

}  // namespace detail

/// Built-in backend: a small English lexicon with letter-to-sound fallback
/// and rule-based grapheme-to-IPA conversion for Devanagari, Bengali, Telugu
/// and Kannada script. Like espeak it has no Chhattisgarhi voice.
class LexiconBackend final : public PhonemizerBackend {
 public:
  std::string name() const override { return "builtin-lexicon"; }

  bool supports(std::string_view code) const override {
    return code == "bengali" || code == "english" || code == "hindi" || code == "kannada" ||
           code == "marathi" || code == "telugu";
  }

  std::vector<std::string> phonemize_word(const std::string& word,
                                          const std::string& backend_code) const override {
    if (!supports(backend_code)) {
      fail(ErrorKind::kBackendFailure, name() + ": no voice for '" + backend_code + "' (word '" + word + "')");
    }
    const auto cps = utf8::decode(word);
    if (backend_code == "english") {
      std::string lower;
      for (char32_t cp : cps) {
        if (cp >= 0x80) {
          fail(ErrorKind::kBackendFailure, name() + ": cannot phonemize '" + word + "' as english");
        }
        lower.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
      }
      const auto& lexicon = detail::english_lexicon();
      if (auto it = lexicon.find(lower); it != lexicon.end()) return it->second;
      return detail::english_rules(lower, word, name());
    }
    return detail::indic_g2p(cps, word, backend_code, name());
  }

  std::optional<std::vector<std::string>> inventory() const override {
    std::set<std::string> symbols;
    for (const auto& [word, phones] : detail::english_lexicon()) symbols.insert(phones.begin(), phones.end());
    for (char c = 'a'; c <= 'z'; ++c) {
      for (const auto& p : detail::english_rules(std::string(1, c), std::string(1, c), name())) symbols.insert(p);
    }
    for (const char* g : {"tch", "igh", "th", "sh", "ch", "ph", "ng", "qu", "ee", "oo", "ou", "ow", "ai", "oi", "y"}) {
      for (const auto& p : detail::english_rules(g, g, name())) symbols.insert(p);
    }
    symbols.insert("j");
    symbols.insert("i");
    for (std::string_view lang : {"hindi", "marathi", "bengali", "telugu"}) {
      for (const auto& [v, phones] : detail::indic_vowels(lang).symbols) symbols.insert(phones.begin(), phones.end());
      for (char32_t off = 0; off < 0x80; ++off) {
        if (const char* c = detail::indic_consonant(off, lang)) symbols.insert(c);
      }
    }
    for (const char* extra : {"n", "h", "oː", "m", "q", "x", "ɣ", "z", "ɽ", "ɽʱ", "f"}) symbols.insert(extra);
    return std::vector<std::string>(symbols.begin(), symbols.end());
  }
};

/// Adapter around an espeak-compatible executable. The tool is asked for IPA
/// with an explicit phoneme separator so symbols can be split without
/// guessing at multi-codepoint phonemes; stress marks are dropped.
class EspeakBackend final : public PhonemizerBackend {
 public:
  explicit EspeakBackend(std::string executable = "espeak-ng") : executable_(std::move(executable)) {}

  std::string name() const override { return "espeak(" + executable_ + ")"; }

  bool supports(std::string_view code) const override { return voice_for(code).has_value(); }

  static std::optional<std::string> voice_for(std::string_view code) {
    static const std::map<std::string, std::string, std::less<>> voices = {
        {"bengali", "bn"}, {"english", "en-us"}, {"hindi", "hi"},
        {"kannada", "kn"}, {"marathi", "mr"},    {"telugu", "te"}};
    const auto it = voices.find(code);
    if (it == voices.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::string> phonemize_word(const std::string& word,
                                          const std::string& backend_code) const override {
    const auto voice = voice_for(backend_code);
    if (!voice) {
      fail(ErrorKind::kBackendFailure, name() + ": no voice for '" + backend_code + "' (word '" + word + "')");
    }
    const std::string command = quote(executable_) + " -q --ipa --sep=_ -v " + quote(*voice) + " -- " +
                                quote(word) + " 2>/dev/null";
    std::string output;
    int status = 0;
    {
      // one external process per backend instance at a time
      std::lock_guard<std::mutex> lock(mutex_);
      FILE* pipe = ::popen(command.c_str(), "r");
      if (pipe == nullptr) {
        fail(ErrorKind::kBackendFailure, name() + ": failed to launch for word '" + word + "'");
      }
      std::array<char, 512> buffer{};
      while (std::fgets(buffer.data(), static_cast<int>(buffer.size()), pipe) != nullptr) output += buffer.data();
      status = ::pclose(pipe);
    }
    if (status != 0) {
      fail(ErrorKind::kBackendFailure,
           name() + ": exited with status " + std::to_string(status) + " on word '" + word + "'");
    }
    auto symbols = split_ipa(output);
    if (symbols.empty()) {
      fail(ErrorKind::kBackendFailure, name() + ": produced no phonemes for word '" + word + "'");
    }
    return symbols;
  }

  /// Splits separator-delimited IPA output into symbols, dropping stress and
  /// syllable marks.
  static std::vector<std::string> split_ipa(const std::string& output) {
    std::vector<std::string> symbols;
    std::string current;
    auto push = [&] {
      if (!current.empty()) symbols.push_back(current);
      current.clear();
    };
    for (char32_t cp : utf8::decode(output)) {
      if (cp == U'_' || utf8::is_space(cp)) {
        push();
      } else if (cp == 0x02C8 || cp == 0x02CC || cp == U'.' || utf8::is_format_control(cp)) {
        continue;
      } else {
        utf8::append(current, cp);
      }
    }
    push();
    return symbols;
  }

 private:
  static std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
      if (c == '\'') {
        out += "'\\''";
      } else {
        out.push_back(c);
      }
    }
    out.push_back('\'');
    return out;
  }

  std::string executable_;
  mutable std::mutex mutex_;
};

}  // namespace polyvits
