#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "polyvits/context/features.hpp"
#include "polyvits/error.hpp"

extern char** environ;

namespace polyvits {

struct ModelConfig {
  int n_languages = 7;
  int n_speakers = 14;
  int hidden = 192;
  int filter = 768;
  int heads = 2;
  int encoder_blocks = 6;
  int encoder_kernel = 3;
  int language_dim = 32;
  int speaker_dim = 256;
  int posterior_layers = 16;
  int flow_layers = 4;
  int flow_wn_layers = 4;
  int wn_kernel = 5;
  int duration_hidden = 192;
  int decoder_channels = 512;
  std::vector<int> upsample_rates = {8, 8, 2, 2};
  int decoder_kernel = 7;
  int discriminator_scales = 3;
  int discriminator_depth = 4;
  int discriminator_channels = 16;
  double logvar_min = -9.0;
  double logvar_max = 4.0;
  bool use_context = false;
  bool zero_init_decoder_output = false;
};

struct DataConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int hop = 256;
  int win = 1024;
  int mel_channels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means sample_rate / 2
  int segment_frames = 32;
  std::string manifest;
  std::string cache_dir;
};

struct LossWeights {
  double mel = 45.0;
  double kl = 1.0;
  double duration = 1.0;
  double adversarial = 1.0;
  double feature_matching = 2.0;
};

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 16;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-9;
  double weight_decay = 0.01;
  double lr_decay = 0.999875;
  long max_iterations = 136000;
  int grad_accumulation = 1;
  double grad_clip = 0.0;
  long checkpoint_every = 1000;
  long log_every = 1;
  long seed = 1234;
  bool drop_last = false;
  bool replay = false;
  /// Comma-separated language codes that must each have training data.
  std::string require_languages;
  LossWeights weights;
};

struct FrontendConfig {
  std::string backend = "builtin";
  std::string espeak_path = "espeak-ng";
  bool word_boundaries = false;
  bool punctuation = false;
};

struct InferenceConfig {
  double noise_scale = 0.667;
  double noise_scale_duration = 0.8;
  double length_scale = 1.0;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  FrontendConfig frontend;
  ContextExtractorSpec context;
  InferenceConfig inference;

  double effective_fmax() const { return data.fmax > 0.0 ? data.fmax : data.sample_rate / 2.0; }
  int spec_bins() const { return data.n_fft / 2 + 1; }
  int upsample_product() const {
    int p = 1;
    for (int r : model.upsample_rates) p *= r;
    return p;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  fail(ErrorKind::kConfig, key + ": '" + value + "' is not " + expected);
}

inline long parse_long(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  char* end = nullptr;
  errno = 0;
  const long out = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) bad_value(key, raw, "an integer");
  return out;
}

inline double parse_double(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno != 0) bad_value(key, raw, "a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, raw, "a boolean");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;

  std::string path() const { return section + "." + key; }
};

template <class Access>
Field field(std::string section, std::string key, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f{section, key, {}, {}};
  const std::string path = section + "." + key;
  f.get = [access](const RunConfig& c) -> std::string {
    const T& v = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(v);
    } else if constexpr (std::is_integral_v<T>) {
      return std::to_string(v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
      return out;
    } else {
      return to_string(v);
    }
  };
  f.set = [access, path](RunConfig& c, const std::string& raw) {
    T& v = access(c);
    if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(path, raw);
    } else if constexpr (std::is_same_v<T, double>) {
      v = parse_double(path, raw);
    } else if constexpr (std::is_integral_v<T>) {
      v = static_cast<T>(parse_long(path, raw));
    } else if constexpr (std::is_same_v<T, std::string>) {
      v = trim(raw);
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      v.clear();
      std::stringstream ss(raw);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(static_cast<int>(parse_long(path, item)));
      if (v.empty()) bad_value(path, raw, "a comma-separated integer list");
    } else {
      v = parse_extractor_kind(trim(raw));
    }
  };
  return f;
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(field("model", "n_languages", [](RunConfig& c) -> auto& { return c.model.n_languages; }));
    f.push_back(field("model", "n_speakers", [](RunConfig& c) -> auto& { return c.model.n_speakers; }));
    f.push_back(field("model", "hidden", [](RunConfig& c) -> auto& { return c.model.hidden; }));
    f.push_back(field("model", "filter", [](RunConfig& c) -> auto& { return c.model.filter; }));
    f.push_back(field("model", "heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    f.push_back(field("model", "encoder_blocks", [](RunConfig& c) -> auto& { return c.model.encoder_blocks; }));
    f.push_back(field("model", "encoder_kernel", [](RunConfig& c) -> auto& { return c.model.encoder_kernel; }));
    f.push_back(field("model", "language_dim", [](RunConfig& c) -> auto& { return c.model.language_dim; }));
    f.push_back(field("model", "speaker_dim", [](RunConfig& c) -> auto& { return c.model.speaker_dim; }));
    f.push_back(field("model", "posterior_layers", [](RunConfig& c) -> auto& { return c.model.posterior_layers; }));
    f.push_back(field("model", "flow_layers", [](RunConfig& c) -> auto& { return c.model.flow_layers; }));
    f.push_back(field("model", "flow_wn_layers", [](RunConfig& c) -> auto& { return c.model.flow_wn_layers; }));
    f.push_back(field("model", "wn_kernel", [](RunConfig& c) -> auto& { return c.model.wn_kernel; }));
    f.push_back(field("model", "duration_hidden", [](RunConfig& c) -> auto& { return c.model.duration_hidden; }));
    f.push_back(field("model", "decoder_channels", [](RunConfig& c) -> auto& { return c.model.decoder_channels; }));
    f.push_back(field("model", "upsample_rates", [](RunConfig& c) -> auto& { return c.model.upsample_rates; }));
    f.push_back(field("model", "decoder_kernel", [](RunConfig& c) -> auto& { return c.model.decoder_kernel; }));
    f.push_back(field("model", "discriminator_scales", [](RunConfig& c) -> auto& { return c.model.discriminator_scales; }));
    f.push_back(field("model", "discriminator_depth", [](RunConfig& c) -> auto& { return c.model.discriminator_depth; }));
    f.push_back(field("model", "discriminator_channels", [](RunConfig& c) -> auto& { return c.model.discriminator_channels; }));
    f.push_back(field("model", "logvar_min", [](RunConfig& c) -> auto& { return c.model.logvar_min; }));
    f.push_back(field("model", "logvar_max", [](RunConfig& c) -> auto& { return c.model.logvar_max; }));
    f.push_back(field("model", "use_context", [](RunConfig& c) -> auto& { return c.model.use_context; }));
    f.push_back(field("model", "zero_init_decoder_output", [](RunConfig& c) -> auto& { return c.model.zero_init_decoder_output; }));

    f.push_back(field("data", "sample_rate", [](RunConfig& c) -> auto& { return c.data.sample_rate; }));
    f.push_back(field("data", "n_fft", [](RunConfig& c) -> auto& { return c.data.n_fft; }));
    f.push_back(field("data", "hop", [](RunConfig& c) -> auto& { return c.data.hop; }));
    f.push_back(field("data", "win", [](RunConfig& c) -> auto& { return c.data.win; }));
    f.push_back(field("data", "mel_channels", [](RunConfig& c) -> auto& { return c.data.mel_channels; }));
    f.push_back(field("data", "fmin", [](RunConfig& c) -> auto& { return c.data.fmin; }));
    f.push_back(field("data", "fmax", [](RunConfig& c) -> auto& { return c.data.fmax; }));
    f.push_back(field("data", "segment_frames", [](RunConfig& c) -> auto& { return c.data.segment_frames; }));
    f.push_back(field("data", "manifest", [](RunConfig& c) -> auto& { return c.data.manifest; }));
    f.push_back(field("data", "cache_dir", [](RunConfig& c) -> auto& { return c.data.cache_dir; }));

    f.push_back(field("train", "learning_rate", [](RunConfig& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(field("train", "batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    f.push_back(field("train", "beta1", [](RunConfig& c) -> auto& { return c.train.beta1; }));
    f.push_back(field("train", "beta2", [](RunConfig& c) -> auto& { return c.train.beta2; }));
    f.push_back(field("train", "eps", [](RunConfig& c) -> auto& { return c.train.eps; }));
    f.push_back(field("train", "weight_decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
    f.push_back(field("train", "lr_decay", [](RunConfig& c) -> auto& { return c.train.lr_decay; }));
    f.push_back(field("train", "max_iterations", [](RunConfig& c) -> auto& { return c.train.max_iterations; }));
    f.push_back(field("train", "grad_accumulation", [](RunConfig& c) -> auto& { return c.train.grad_accumulation; }));
    f.push_back(field("train", "grad_clip", [](RunConfig& c) -> auto& { return c.train.grad_clip; }));
    f.push_back(field("train", "checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));
    f.push_back(field("train", "log_every", [](RunConfig& c) -> auto& { return c.train.log_every; }));
    f.push_back(field("train", "seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    f.push_back(field("train", "drop_last", [](RunConfig& c) -> auto& { return c.train.drop_last; }));
    f.push_back(field("train", "replay", [](RunConfig& c) -> auto& { return c.train.replay; }));
    f.push_back(field("train", "require_languages", [](RunConfig& c) -> auto& { return c.train.require_languages; }));
    f.push_back(field("train", "weight_mel", [](RunConfig& c) -> auto& { return c.train.weights.mel; }));
    f.push_back(field("train", "weight_kl", [](RunConfig& c) -> auto& { return c.train.weights.kl; }));
    f.push_back(field("train", "weight_duration", [](RunConfig& c) -> auto& { return c.train.weights.duration; }));
    f.push_back(field("train", "weight_adversarial", [](RunConfig& c) -> auto& { return c.train.weights.adversarial; }));
    f.push_back(field("train", "weight_feature_matching", [](RunConfig& c) -> auto& { return c.train.weights.feature_matching; }));

    f.push_back(field("frontend", "backend", [](RunConfig& c) -> auto& { return c.frontend.backend; }));
    f.push_back(field("frontend", "espeak_path", [](RunConfig& c) -> auto& { return c.frontend.espeak_path; }));
    f.push_back(field("frontend", "word_boundaries", [](RunConfig& c) -> auto& { return c.frontend.word_boundaries; }));
    f.push_back(field("frontend", "punctuation", [](RunConfig& c) -> auto& { return c.frontend.punctuation; }));

    f.push_back(field("context", "kind", [](RunConfig& c) -> auto& { return c.context.kind; }));
    f.push_back(field("context", "dim", [](RunConfig& c) -> auto& { return c.context.dim; }));
    f.push_back(field("context", "identifier", [](RunConfig& c) -> auto& { return c.context.identifier; }));

    f.push_back(field("inference", "noise_scale", [](RunConfig& c) -> auto& { return c.inference.noise_scale; }));
    f.push_back(field("inference", "noise_scale_duration", [](RunConfig& c) -> auto& { return c.inference.noise_scale_duration; }));
    f.push_back(field("inference", "length_scale", [](RunConfig& c) -> auto& { return c.inference.length_scale; }));
    return f;
  }();
  return all;
}

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

inline bool known_section(const std::string& section) {
  for (const auto& f : fields()) {
    if (f.section == section) return true;
  }
  return false;
}

}  // namespace config_detail

/// Throws a config error describing the first violated constraint.
inline void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kConfig, what);
  };
  const auto& m = c.model;
  require(m.n_languages == 7, "model.n_languages must be 7");
  require(m.n_speakers >= 1, "model.n_speakers must be positive");
  require(m.hidden > 0 && m.filter > 0 && m.language_dim > 0 && m.speaker_dim > 0 && m.duration_hidden > 0 &&
              m.decoder_channels > 0 && m.discriminator_channels > 0,
          "model dims must be positive");
  require(m.heads > 0 && m.hidden % m.heads == 0, "model.hidden must be divisible by model.heads");
  require(m.hidden % 2 == 0, "model.hidden must be even for coupling layers");
  require(m.encoder_blocks >= 0 && m.posterior_layers >= 1 && m.flow_layers >= 0 && m.flow_wn_layers >= 1,
          "model layer counts out of range");
  require(m.flow_layers % 2 == 0, "model.flow_layers must be even so the channel reversals cancel");
  require(m.encoder_kernel % 2 == 1 && m.wn_kernel % 2 == 1 && m.decoder_kernel % 2 == 1,
          "model kernel sizes must be odd");
  require(!m.upsample_rates.empty(), "model.upsample_rates must not be empty");
  for (int r : m.upsample_rates) require(r >= 1, "model.upsample_rates entries must be positive");
  require(m.discriminator_scales >= 1 && m.discriminator_depth >= 1, "discriminator sizes must be positive");
  require(m.logvar_min < m.logvar_max, "model.logvar_min must be below model.logvar_max");
  const auto& d = c.data;
  require(d.sample_rate > 0 && d.n_fft > 0 && d.hop > 0 && d.win > 0 && d.mel_channels > 0, "data dims must be positive");
  require(d.win <= d.n_fft, "data.win must not exceed data.n_fft");
  require(d.n_fft % 2 == 0, "data.n_fft must be even");
  require(c.upsample_product() == d.hop, "product of model.upsample_rates must equal data.hop");
  require(d.fmin >= 0.0 && c.effective_fmax() > d.fmin && c.effective_fmax() <= d.sample_rate / 2.0,
          "data.fmin/fmax out of range");
  require(d.segment_frames >= 1, "data.segment_frames must be positive");
  const auto& t = c.train;
  require(t.learning_rate > 0.0, "train.learning_rate must be positive");
  require(t.batch_size >= 1, "train.batch_size must be at least 1");
  require(t.beta1 >= 0.0 && t.beta1 < 1.0 && t.beta2 >= 0.0 && t.beta2 < 1.0, "train betas must be in [0, 1)");
  require(t.eps > 0.0 && t.weight_decay >= 0.0, "train.eps/weight_decay out of range");
  require(t.lr_decay > 0.0 && t.lr_decay <= 1.0, "train.lr_decay must be in (0, 1]");
  require(t.max_iterations >= 0, "train.max_iterations must be non-negative");
  require(t.grad_accumulation >= 1, "train.grad_accumulation must be at least 1");
  require(t.grad_clip >= 0.0, "train.grad_clip must be non-negative");
  require(t.checkpoint_every >= 1 && t.log_every >= 1, "train checkpoint/log intervals must be positive");
  const auto& w = t.weights;
  require(w.mel >= 0 && w.kl >= 0 && w.duration >= 0 && w.adversarial >= 0 && w.feature_matching >= 0,
          "loss weights must be non-negative");
  require(c.frontend.backend == "builtin" || c.frontend.backend == "espeak",
          "frontend.backend must be builtin or espeak");
  require(c.context.dim > 0, "context.dim must be positive");
  require(!c.context.identifier.empty(), "context.identifier must not be empty");
  require(c.inference.noise_scale >= 0.0 && c.inference.noise_scale_duration >= 0.0,
          "inference noise scales must be non-negative");
  require(c.inference.length_scale > 0.0, "inference.length_scale must be positive");
}

/// Sets one value addressed as "section.key".
inline void set_value(RunConfig& c, const std::string& path, const std::string& value) {
  const auto dot = path.find('.');
  if (dot == std::string::npos) fail(ErrorKind::kConfig, "config key '" + path + "' must be section.key");
  const auto* f = config_detail::find_field(path.substr(0, dot), path.substr(dot + 1));
  if (f == nullptr) fail(ErrorKind::kConfig, "unknown config key '" + path + "'");
  f->set(c, value);
}

inline std::string get_value(const RunConfig& c, const std::string& path) {
  const auto dot = path.find('.');
  const auto* f = dot == std::string::npos ? nullptr : config_detail::find_field(path.substr(0, dot), path.substr(dot + 1));
  if (f == nullptr) fail(ErrorKind::kConfig, "unknown config key '" + path + "'");
  return f->get(c);
}

inline void apply_ini(RunConfig& c, std::istream& in, const std::string& origin) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::kConfig, origin + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(ErrorKind::kConfig, origin + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      if (config_detail::find_field(section, key) == nullptr) {
        fail(ErrorKind::kConfig, origin + ": unknown config key '" + section + "." + key + "'");
      }
      set_value(c, section + "." + key, value.data());
    }
  }
}

inline void apply_ini_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read config file " + path);
  apply_ini(c, in, path);
}

/// Applies POLYVITS_<SECTION>_<KEY> variables for known sections. Variables
/// whose prefix names no config section are left alone.
inline void apply_environment(RunConfig& c, char** env = environ) {
  const std::string prefix = "POLYVITS_";
  std::vector<std::pair<std::string, std::string>> found;
  for (char** e = env; e != nullptr && *e != nullptr; ++e) {
    const std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(prefix.size(), eq - prefix.size());
    for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const auto us = name.find('_');
    if (us == std::string::npos || !config_detail::known_section(name.substr(0, us))) continue;
    found.emplace_back(name.substr(0, us) + "." + name.substr(us + 1), entry.substr(eq + 1));
  }
  std::sort(found.begin(), found.end());
  for (const auto& [path, value] : found) set_value(c, path, value);
}

/// Canonical INI text: every key, fixed order, round-trippable.
inline std::string to_ini(const RunConfig& c) {
  std::string out;
  std::string section;
  for (const auto& f : config_detail::fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

inline RunConfig from_ini_text(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  apply_ini(c, in, origin);
  validate(c);
  return c;
}

/// Defaults < config file < environment < explicit overrides, validated.
inline RunConfig load_run_config(const std::string& file, const std::vector<std::pair<std::string, std::string>>& overrides = {},
                                 char** env = environ) {
  RunConfig c;
  if (!file.empty()) apply_ini_file(c, file);
  apply_environment(c, env);
  for (const auto& [path, value] : overrides) set_value(c, path, value);
  validate(c);
  return c;
}

}  // namespace polyvits
