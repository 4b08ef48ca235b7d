#pragma once

#include <cstdio>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "polyvits/config/run_config.hpp"
#include "polyvits/context/features.hpp"
#include "polyvits/frontend/vocabulary.hpp"
#include "polyvits/io/serialize.hpp"
#include "polyvits/model/discriminator.hpp"
#include "polyvits/model/generator.hpp"
#include "polyvits/tensor/optimizer.hpp"

namespace polyvits::train {

inline constexpr const char* kCheckpointFormat = "polyvits-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::string vocabulary_hash(const PhonemeVocabulary& vocab) {
  std::string joined;
  for (const auto& s : vocab.symbols()) joined += s + '\x1f';
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(detail::fnv1a64(joined)));
  return buf;
}

inline nn::AdamWOptions adam_options(const TrainConfig& t) {
  return {t.learning_rate, t.beta1, t.beta2, t.eps, t.weight_decay};
}

/// Everything needed to continue training or to synthesize.
struct TrainingState {
  RunConfig cfg;
  PhonemeVocabulary vocab;
  std::vector<std::string> speakers;
  std::unique_ptr<model::Generator> generator;
  std::unique_ptr<model::Discriminator> discriminator;
  nn::AdamW opt_g;
  nn::AdamW opt_d;
  long iteration = 0;

  /// Freshly initialized model whose speaker table is `speaker_labels`.
  static TrainingState create(RunConfig cfg, PhonemeVocabulary vocab, std::vector<std::string> speaker_labels) {
    if (speaker_labels.empty()) fail(ErrorKind::kEmptyDataset, "no speakers to train");
    cfg.model.n_speakers = static_cast<int>(speaker_labels.size());
    validate(cfg);
    TrainingState s;
    const auto seed = static_cast<std::uint64_t>(cfg.train.seed);
    s.generator = std::make_unique<model::Generator>(cfg.model, cfg.spec_bins(), static_cast<int>(vocab.size()),
                                                     cfg.context.dim, seed);
    s.discriminator = std::make_unique<model::Discriminator>(cfg.model, seed + 1);
    s.opt_g = nn::AdamW(adam_options(cfg.train));
    s.opt_d = nn::AdamW(adam_options(cfg.train));
    s.cfg = std::move(cfg);
    s.vocab = std::move(vocab);
    s.speakers = std::move(speaker_labels);
    return s;
  }

  int speaker_id(const std::string& label) const { return lookup_speaker(speakers, label); }
};

/// Model-shaping keys that must agree between a checkpoint and a config
/// that wants to reuse it.
inline std::vector<std::string> incompatible_keys(const RunConfig& saved, const RunConfig& requested) {
  std::vector<std::string> diff;
  for (const auto& f : config_detail::fields()) {
    const std::string key = f.section + "." + f.key;
    const bool shaping = f.section == "model" || f.section == "context" ||
                         (f.section == "data" && f.key != "manifest" && f.key != "cache_dir");
    if (!shaping || key == "model.n_speakers") continue;
    if (get_value(saved, key) != get_value(requested, key)) diff.push_back(key);
  }
  return diff;
}

inline void check_compatible(const RunConfig& saved, const RunConfig& requested) {
  const auto diff = incompatible_keys(saved, requested);
  if (diff.empty()) return;
  std::string msg = "config differs from the checkpoint in:";
  for (const auto& k : diff) msg += " " + k + " (" + get_value(saved, k) + " vs " + get_value(requested, k) + ")";
  fail(ErrorKind::kConfigIncompatible, msg);
}

namespace checkpoint_detail {

inline io::Json params_to_json(const nn::ParameterSet& ps) {
  io::Json j = io::Json::object();
  for (const auto& [name, v] : ps.all()) j[name] = io::matrix_to_json(v.value());
  return j;
}

inline void params_from_json(nn::ParameterSet& ps, const io::Json& j, const std::string& what) {
  std::set<std::string> seen;
  for (const auto& [name, rec] : j.items()) {
    if (!ps.contains(name)) fail(ErrorKind::kSchema, what + ": unexpected parameter " + name);
    ag::Var p = ps.at(name);
    Matrix m = io::matrix_from_json(rec, what + ":" + name);
    if (m.rows() != p.rows() || m.cols() != p.cols()) fail(ErrorKind::kSchema, what + ": shape mismatch for " + name);
    p.mutable_value() = std::move(m);
    seen.insert(name);
  }
  if (seen.size() != ps.all().size()) fail(ErrorKind::kSchema, what + ": checkpoint is missing parameters");
}

inline io::Json optimizer_to_json(const nn::AdamW& opt) {
  io::Json state = io::Json::object();
  for (const auto& [name, s] : opt.state()) state[name] = {{"m", io::matrix_to_json(s.m)}, {"v", io::matrix_to_json(s.v)}};
  return {{"step", opt.step_count()}, {"state", state}};
}

inline void optimizer_from_json(nn::AdamW& opt, const io::Json& j, const std::string& what) {
  opt.set_step_count(j.at("step").get<long>());
  opt.state().clear();
  for (const auto& [name, rec] : j.at("state").items()) {
    opt.state()[name] = {io::matrix_from_json(rec.at("m"), what), io::matrix_from_json(rec.at("v"), what)};
  }
}

}  // namespace checkpoint_detail

inline std::string serialize_checkpoint(const TrainingState& s) {
  io::Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = to_ini(s.cfg);
  j["vocabulary"] = s.vocab.symbols();
  j["vocabulary_hash"] = vocabulary_hash(s.vocab);
  j["speakers"] = s.speakers;
  j["iteration"] = s.iteration;
  j["generator"] = checkpoint_detail::params_to_json(s.generator->params);
  j["discriminator"] = checkpoint_detail::params_to_json(s.discriminator->params);
  j["optimizer_g"] = checkpoint_detail::optimizer_to_json(s.opt_g);
  j["optimizer_d"] = checkpoint_detail::optimizer_to_json(s.opt_d);
  return io::to_cbor(j);
}

inline TrainingState deserialize_checkpoint(const std::string& bytes, const std::string& what) {
  const io::Json j = io::from_cbor(bytes, what);
  try {
    if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion) {
      fail(ErrorKind::kSchema, what + ": not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
    }
    const auto vocab = PhonemeVocabulary::from_symbols(j.at("vocabulary").get<std::vector<std::string>>());
    if (vocabulary_hash(vocab) != j.at("vocabulary_hash").get<std::string>()) {
      fail(ErrorKind::kSchema, what + ": vocabulary does not match its recorded hash");
    }
    TrainingState s = TrainingState::create(from_ini_text(j.at("config").get<std::string>(), what), vocab,
                                            j.at("speakers").get<std::vector<std::string>>());
    checkpoint_detail::params_from_json(s.generator->params, j.at("generator"), what);
    checkpoint_detail::params_from_json(s.discriminator->params, j.at("discriminator"), what);
    checkpoint_detail::optimizer_from_json(s.opt_g, j.at("optimizer_g"), what);
    checkpoint_detail::optimizer_from_json(s.opt_d, j.at("optimizer_d"), what);
    s.iteration = j.at("iteration").get<long>();
    return s;
  } catch (const io::Json::exception& e) {
    fail(ErrorKind::kSchema, what + ": malformed checkpoint (" + e.what() + ")");
  }
}

inline void save_checkpoint(const std::string& path, const TrainingState& s) {
  io::write_atomic(path, serialize_checkpoint(s));
}

inline TrainingState load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(io::read_bytes(path), path);
}

/// Loads and verifies that `requested` can reuse the checkpoint's weights
/// and, when given, that the vocabulary is the expected one.
inline TrainingState load_checkpoint(const std::string& path, const RunConfig& requested,
                                     const PhonemeVocabulary* expected_vocab = nullptr) {
  TrainingState s = load_checkpoint(path);
  check_compatible(s.cfg, requested);
  if (expected_vocab != nullptr && vocabulary_hash(*expected_vocab) != vocabulary_hash(s.vocab)) {
    fail(ErrorKind::kConfigIncompatible, path + ": checkpoint vocabulary differs from the expected vocabulary");
  }
  return s;
}

}  // namespace polyvits::train
