#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

#include "polyvits/error.hpp"

namespace polyvits {

/// Closed set of supported languages. The position in this array is the
/// language ID fed to the model, so the order is part of the checkpoint
/// format and must never change.
inline constexpr std::array<std::string_view, 7> kSupportedLanguages = {
    "bengali", "chhattisgarhi", "english", "hindi", "kannada", "marathi", "telugu"};

inline constexpr int kLanguageCount = static_cast<int>(kSupportedLanguages.size());

/// Languages without a phonemizer of their own are routed through a closely
/// related one.
struct BackendAlias {
  std::string_view language;
  std::string_view backend;
};

inline constexpr std::array<BackendAlias, 1> kBackendAliases = {{{"chhattisgarhi", "hindi"}}};

struct LanguageTag {
  std::string code;
  std::string backend_code;

  bool aliased() const { return code != backend_code; }
  friend bool operator==(const LanguageTag&, const LanguageTag&) = default;
};

inline bool is_supported_language(std::string_view code) {
  return std::find(kSupportedLanguages.begin(), kSupportedLanguages.end(), code) !=
         kSupportedLanguages.end();
}

inline int language_id(std::string_view code) {
  const auto it = std::find(kSupportedLanguages.begin(), kSupportedLanguages.end(), code);
  if (it == kSupportedLanguages.end()) {
    fail(ErrorKind::kUnsupportedLanguage, "unsupported language '" + std::string(code) + "'");
  }
  return static_cast<int>(it - kSupportedLanguages.begin());
}

inline LanguageTag resolve_backend(std::string_view code) {
  if (!is_supported_language(code)) {
    fail(ErrorKind::kUnsupportedLanguage, "unsupported language '" + std::string(code) + "'");
  }
  for (const auto& alias : kBackendAliases) {
    if (alias.language == code) return {std::string(code), std::string(alias.backend)};
  }
  return {std::string(code), std::string(code)};
}

}  // namespace polyvits
