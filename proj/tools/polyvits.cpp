// polyvits: command-line entry point.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "polyvits/data/dataset.hpp"
#include "polyvits/data/synthetic.hpp"
#include "polyvits/model/synthesis.hpp"
#include "polyvits/train/trainer.hpp"
#include "polyvits/verify/suites.hpp"

namespace fs = std::filesystem;
using namespace polyvits;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 2;
constexpr int kExitUsage = 64;
constexpr int kExitInternal = 70;

struct Common {
  std::string config;
  std::optional<long> seed;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed (overrides train.seed)");
  cmd->add_option("--set", c.set, "override a config value, section.key=value")->take_all();
}

std::vector<std::pair<std::string, std::string>> overrides(const Common& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kUsage, "--set expects section.key=value, got '" + kv + "'");
    out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) out.emplace_back("train.seed", std::to_string(*c.seed));
  return out;
}

RunConfig load_config(const Common& c) { return load_run_config(c.config, overrides(c)); }

/// Applies --set/--seed on top of a config recovered from a checkpoint.
RunConfig apply_overrides(RunConfig cfg, const Common& c) {
  for (const auto& [k, v] : overrides(c)) set_value(cfg, k, v);
  validate(cfg);
  return cfg;
}

std::string resolve_manifest(const std::string& flag, const RunConfig& cfg) {
  const std::string path = flag.empty() ? cfg.data.manifest : flag;
  if (path.empty()) fail(ErrorKind::kUsage, "no manifest: pass --manifest or set data.manifest");
  return path;
}

std::string cache_dir_for(const RunConfig& cfg, const std::string& manifest_path) {
  if (!cfg.data.cache_dir.empty()) return cfg.data.cache_dir;
  return (fs::path(manifest_path).parent_path() / "cache").string();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = config_detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_report(const train::LossReport& r) { std::cout << r.to_json().dump() << std::endl; }

// ---- phonemize --------------------------------------------------------------

struct PhonemizeArgs {
  Common common;
  std::string text;
  std::string lang;
};

int cmd_phonemize(const PhonemizeArgs& a) {
  const RunConfig cfg = load_config(a.common);
  const auto frontend = TextFrontend::from_config(cfg.frontend);
  const auto tag = resolve_backend(a.lang);
  const auto seq = frontend.phonemize(a.text, tag);
  Json j;
  j["language"] = tag.code;
  j["backend"] = tag.backend_code;
  j["phonemes"] = seq.phonemes;
  Json spans = Json::array();
  for (const auto& s : seq.word_spans) spans.push_back({s.word_index, s.length});
  j["word_spans"] = spans;
  std::cout << j.dump() << std::endl;
  return kExitOk;
}

// ---- corpus -----------------------------------------------------------------

struct CorpusArgs {
  Common common;
  std::string out;
  int speakers = 14;
  int per_speaker = 4;
  std::string prefix = "spk";
  int voice_offset = 0;
  std::string languages;
};

int cmd_corpus(const CorpusArgs& a) {
  const RunConfig cfg = load_config(a.common);
  SyntheticCorpusOptions o;
  o.sample_rate = cfg.data.sample_rate;
  o.speakers = a.speakers;
  o.utterances_per_speaker = a.per_speaker;
  o.speaker_prefix = a.prefix;
  o.voice_offset = a.voice_offset;
  if (!a.languages.empty()) o.languages = split_list(a.languages);
  const auto path = generate_synthetic_corpus(a.out, static_cast<std::uint64_t>(cfg.train.seed), o);
  std::cout << "wrote " << path << std::endl;
  return kExitOk;
}

// ---- prepare ----------------------------------------------------------------

struct PrepareArgs {
  Common common;
  std::string manifest;
  bool resample = false;
};

int cmd_prepare(const PrepareArgs& a) {
  const RunConfig cfg = load_config(a.common);
  const std::string manifest_path = resolve_manifest(a.manifest, cfg);
  Manifest m = load_manifest(manifest_path);
  const auto frontend = TextFrontend::from_config(cfg.frontend);
  const std::string cache_root = cache_dir_for(cfg, manifest_path);
  const SpectrogramCache cache(cache_root, cfg);
  const Stft stft(cfg);

  Json errors = Json::array();
  std::vector<Utterance> rewritten;
  std::set<std::string> languages;
  bool any_resampled = false;
  for (auto u : m.utterances) {
    try {
      languages.insert(u.language);
      frontend.phonemize(u.text, resolve_backend(u.language));
      Audio audio = read_wav(u.audio_path);
      if (audio.sample_rate != cfg.data.sample_rate) {
        if (!a.resample) {
          fail(ErrorKind::kSampleRateMismatch, "audio is " + std::to_string(audio.sample_rate) + " Hz, config expects " +
                                                   std::to_string(cfg.data.sample_rate) + " Hz");
        }
        audio = resample(audio, cfg.data.sample_rate);
        const fs::path dst = fs::path(cache_root) / "audio" / (u.id + ".wav");
        fs::create_directories(dst.parent_path());
        write_wav(dst.string(), audio);
        u.audio = u.audio_path = fs::absolute(dst).string();
        any_resampled = true;
      }
      SpectrogramPair spec;
      if (!cache.load(u, spec)) cache.store(u, compute_spectrograms(audio, stft));
    } catch (const Error& e) {
      errors.push_back({{"id", u.id}, {"kind", std::string(to_string(e.kind()))}, {"message", e.what()}});
    }
    rewritten.push_back(std::move(u));
  }
  Json report;
  report["manifest"] = manifest_path;
  report["utterances"] = m.utterances.size();
  report["speakers"] = m.speakers.size();
  report["languages"] = std::vector<std::string>(languages.begin(), languages.end());
  report["cache"] = cache.root();
  if (any_resampled) {
    const std::string out_manifest = (fs::path(cache_root) / "manifest.jsonl").string();
    write_manifest(out_manifest, rewritten);
    report["resampled_manifest"] = out_manifest;
  }
  report["errors"] = errors.size();
  report["error_details"] = errors;
  std::cout << report.dump() << std::endl;
  if (!errors.empty()) fail(ErrorKind::kSchema, std::to_string(errors.size()) + " utterance(s) failed validation");
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string manifest;
  std::string out = "runs/train";
  std::optional<long> iterations;
  std::string resume;
};

std::vector<Example> load_examples(const std::vector<Utterance>& utts, const train::TrainingState& s,
                                   const TextFrontend& frontend, const std::string& manifest_path) {
  const SpectrogramCache cache(cache_dir_for(s.cfg, manifest_path), s.cfg);
  return prepare_examples(utts, s.cfg, s.vocab, frontend, s.speakers, &cache);
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.common);
  const std::string manifest_path = resolve_manifest(a.manifest, cfg);
  const Manifest m = load_manifest(manifest_path);
  const auto frontend = TextFrontend::from_config(cfg.frontend);
  train::TrainingState state = [&] {
    if (a.resume.empty()) return train::init_pretraining(cfg, m, frontend);
    auto s = train::load_checkpoint(a.resume, cfg);
    s.cfg = cfg;
    s.cfg.model.n_speakers = static_cast<int>(s.speakers.size());
    return s;
  }();
  const auto examples = load_examples(m.utterances, state, frontend, manifest_path);
  fs::create_directories(a.out);
  train::Trainer trainer(state, examples, {a.out, print_report});
  const long until = a.iterations.value_or(state.cfg.train.max_iterations);
  trainer.run(until);
  std::cerr << "saved " << trainer.checkpoint_path("latest") << std::endl;
  return kExitOk;
}

// ---- finetune ---------------------------------------------------------------

struct FinetuneArgs {
  Common common;
  std::string base;
  std::string manifest;
  std::string replay;
  std::string targets;
  std::string out = "runs/finetune";
  std::optional<long> iterations;
};

int cmd_finetune(const FinetuneArgs& a) {
  if (a.base.empty()) fail(ErrorKind::kUsage, "finetune requires --base-checkpoint");
  train::TrainingState state = train::load_checkpoint(a.base);
  const RunConfig requested = a.common.config.empty() ? apply_overrides(state.cfg, a.common) : load_config(a.common);
  const std::string manifest_path = resolve_manifest(a.manifest, requested);
  const Manifest fewshot = load_manifest(manifest_path);
  const auto added = train::prepare_finetune(state, requested, fewshot, split_list(a.targets));
  for (const auto& label : added) std::cerr << "added speaker " << label << std::endl;
  const auto frontend = TextFrontend::from_config(state.cfg.frontend);
  auto examples = load_examples(fewshot.utterances, state, frontend, manifest_path);
  if (!a.replay.empty()) {
    const Manifest replay = load_manifest(a.replay);
    auto more = load_examples(replay.utterances, state, frontend, a.replay);
    examples.insert(examples.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  fs::create_directories(a.out);
  train::Trainer trainer(state, examples, {a.out, print_report});
  trainer.run(a.iterations.value_or(state.cfg.train.max_iterations));
  std::cerr << "saved " << trainer.checkpoint_path("latest") << std::endl;
  return kExitOk;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string checkpoint;
  std::string text;
  std::string lang;
  std::string speaker;
  std::string out = "out.wav";
  std::optional<double> noise_scale;
  std::optional<double> noise_scale_duration;
  std::optional<double> length_scale;
};

int cmd_synth(const SynthArgs& a) {
  const train::TrainingState state = train::load_checkpoint(a.checkpoint);
  RunConfig cfg = apply_overrides(state.cfg, a.common);
  train::check_compatible(state.cfg, cfg);
  if (a.noise_scale) cfg.inference.noise_scale = *a.noise_scale;
  if (a.noise_scale_duration) cfg.inference.noise_scale_duration = *a.noise_scale_duration;
  if (a.length_scale) cfg.inference.length_scale = *a.length_scale;
  validate(cfg);
  const int spk = state.speaker_id(a.speaker);
  const auto tag = resolve_backend(a.lang);
  if (tag.backend_code != tag.code) std::cout << "phonemizer route: " << tag.code << " -> " << tag.backend_code << std::endl;
  const auto frontend = TextFrontend::from_config(cfg.frontend);
  const auto opts = model::SynthesisOptions::from_config(cfg.inference, static_cast<std::uint64_t>(cfg.train.seed));
  const auto result = model::synthesize(*state.generator, cfg, state.vocab, frontend, a.text, a.lang, spk, opts);
  write_wav(a.out, result.audio);
  long frames = 0;
  for (int d : result.durations) frames += d;
  Json j;
  j["out"] = a.out;
  j["sample_rate"] = result.audio.sample_rate;
  j["samples"] = result.audio.samples.size();
  j["frames"] = frames;
  j["backend"] = result.backend;
  std::cout << j.dump() << std::endl;
  return kExitOk;
}

// ---- verify -----------------------------------------------------------------

struct VerifyArgs {
  Common common;
  std::string suite = "all";
  bool quick = false;
};

int cmd_verify(const VerifyArgs& a) {
  const auto& names = verify::suite_names();
  if (a.suite != "all" && std::find(names.begin(), names.end(), a.suite) == names.end()) {
    fail(ErrorKind::kUsage, "unknown suite '" + a.suite + "'");
  }
  const auto results = verify::run_suite(a.suite, a.quick);
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s %s/%s: %s (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(), r.detail.c_str(),
                r.seconds);
    failed += r.passed ? 0 : 1;
  }
  std::printf("%zu properties, %d failed\n", results.size(), failed);
  return failed == 0 ? kExitOk : 1;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << Json{{"kind", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polyvits: multilingual multi-speaker text-to-speech"};
  app.require_subcommand(1);

  PhonemizeArgs phon;
  auto* c_phon = app.add_subcommand("phonemize", "print the phoneme sequence for a text");
  add_common(c_phon, phon.common);
  c_phon->add_option("--text", phon.text)->required();
  c_phon->add_option("--lang", phon.lang)->required();

  CorpusArgs corp;
  auto* c_corp = app.add_subcommand("corpus", "generate a synthetic multilingual corpus");
  add_common(c_corp, corp.common);
  c_corp->add_option("--out", corp.out)->required();
  c_corp->add_option("--speakers", corp.speakers);
  c_corp->add_option("--per-speaker", corp.per_speaker);
  c_corp->add_option("--prefix", corp.prefix);
  c_corp->add_option("--voice-offset", corp.voice_offset);
  c_corp->add_option("--languages", corp.languages, "comma list; default all supported");

  PrepareArgs prep;
  auto* c_prep = app.add_subcommand("prepare", "validate a manifest and fill the spectrogram cache");
  add_common(c_prep, prep.common);
  c_prep->add_option("--manifest", prep.manifest);
  c_prep->add_flag("--resample", prep.resample, "resample audio whose rate differs from the config");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "pretrain from a manifest");
  add_common(c_train, tr.common);
  c_train->add_option("--manifest", tr.manifest);
  c_train->add_option("--out", tr.out, "checkpoint directory");
  c_train->add_option("--iterations", tr.iterations);
  c_train->add_option("--resume", tr.resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "add speakers to a pretrained checkpoint");
  add_common(c_ft, ft.common);
  c_ft->add_option("--base-checkpoint", ft.base)->check(CLI::ExistingFile);
  c_ft->add_option("--manifest", ft.manifest, "few-shot manifest");
  c_ft->add_option("--replay-manifest", ft.replay, "base-speaker utterances mixed into fine-tuning");
  c_ft->add_option("--targets", ft.targets, "comma list of target speakers");
  c_ft->add_option("--out", ft.out, "checkpoint directory");
  c_ft->add_option("--iterations", ft.iterations);

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "synthesize a WAV from text");
  add_common(c_synth, sy.common);
  c_synth->add_option("--checkpoint", sy.checkpoint)->required()->check(CLI::ExistingFile);
  c_synth->add_option("--text", sy.text)->required();
  c_synth->add_option("--lang", sy.lang)->required();
  c_synth->add_option("--speaker", sy.speaker)->required();
  c_synth->add_option("--out", sy.out);
  c_synth->add_option("--noise-scale", sy.noise_scale);
  c_synth->add_option("--noise-scale-duration", sy.noise_scale_duration);
  c_synth->add_option("--length-scale", sy.length_scale);

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "run invariant suites: mas, flow, replication, padding or all");
  add_common(c_ver, ver.common);
  c_ver->add_option("suite", ver.suite);
  c_ver->add_flag("--quick", ver.quick);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*c_phon) return cmd_phonemize(phon);
    if (*c_corp) return cmd_corpus(corp);
    if (*c_prep) return cmd_prepare(prep);
    if (*c_train) return cmd_train(tr);
    if (*c_ft) return cmd_finetune(ft);
    if (*c_synth) return cmd_synth(sy);
    if (*c_ver) return cmd_verify(ver);
  } catch (const Error& e) {
    print_error(std::string(to_string(e.kind())), e.what());
    return e.kind() == ErrorKind::kUsage ? kExitUsage : kExitDomain;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}
