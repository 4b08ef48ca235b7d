#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "polyvits/audio/wav.hpp"
#include "polyvits/error.hpp"
#include "polyvits/frontend/language.hpp"

namespace polyvits {

struct Utterance {
  std::string id;
  std::string audio;       // as written in the manifest
  std::string audio_path;  // resolved against the manifest directory
  std::string text;
  std::string language;
  std::string speaker;
  int speaker_id = -1;
  double duration_sec = 0.0;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Manifest {
  std::string path;
  std::vector<Utterance> utterances;
  std::vector<std::string> speakers;  // sorted; index is the dense speaker id

  int speaker_id(const std::string& label) const {
    const auto it = std::lower_bound(speakers.begin(), speakers.end(), label);
    if (it == speakers.end() || *it != label) fail(ErrorKind::kUnknownSpeaker, "unknown speaker '" + label + "'");
    return static_cast<int>(it - speakers.begin());
  }
};

inline std::string manifest_line(const Utterance& u) {
  nlohmann::ordered_json j;
  j["id"] = u.id;
  j["audio"] = u.audio;
  j["text"] = u.text;
  j["language"] = u.language;
  j["speaker"] = u.speaker;
  return j.dump();
}

inline void write_manifest(const std::string& path, const std::vector<Utterance>& utterances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write manifest " + path);
  for (const auto& u : utterances) out << manifest_line(u) << '\n';
  if (!out) fail(ErrorKind::kIo, "short write to " + path);
}

/// One JSON object per line with string fields id, audio, text, language
/// and speaker. Blank lines are skipped; every other problem is reported
/// with its 1-based line number.
inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  Manifest m;
  m.path = path;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kSchema, where + ": malformed JSON (" + std::string(e.what()) + ")");
    }
    if (!j.is_object()) fail(ErrorKind::kSchema, where + ": expected a JSON object");
    auto field = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string()) {
        fail(ErrorKind::kSchema, where + ": missing or non-string field '" + key + "'");
      }
      return j[key].get<std::string>();
    };
    Utterance u;
    u.id = field("id");
    u.audio = field("audio");
    u.text = field("text");
    u.language = field("language");
    u.speaker = field("speaker");
    if (u.id.empty() || u.speaker.empty()) fail(ErrorKind::kSchema, where + ": empty id or speaker");
    if (!is_supported_language(u.language)) {
      fail(ErrorKind::kSchema, where + ": unsupported language '" + u.language + "'");
    }
    if (!ids.insert(u.id).second) fail(ErrorKind::kSchema, where + ": duplicate id '" + u.id + "'");
    const std::filesystem::path audio(u.audio);
    u.audio_path = (audio.is_absolute() ? audio : base / audio).lexically_normal().string();
    if (!std::filesystem::exists(u.audio_path)) fail(ErrorKind::kIo, where + ": audio file not found: " + u.audio_path);
    const auto info = probe_wav(u.audio_path);
    u.duration_sec = info.sample_rate > 0 ? static_cast<double>(info.frames) / info.sample_rate : 0.0;
    if (!(u.duration_sec > 0.0)) fail(ErrorKind::kSchema, where + ": audio has zero duration");
    m.utterances.push_back(std::move(u));
  }
  std::set<std::string> labels;
  for (const auto& u : m.utterances) labels.insert(u.speaker);
  m.speakers.assign(labels.begin(), labels.end());
  for (auto& u : m.utterances) u.speaker_id = m.speaker_id(u.speaker);
  return m;
}

}  // namespace polyvits
