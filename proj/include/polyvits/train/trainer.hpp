#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "polyvits/align/batch.hpp"
#include "polyvits/data/dataset.hpp"
#include "polyvits/data/manifest.hpp"
#include "polyvits/train/checkpoint.hpp"
#include "polyvits/train/losses.hpp"

namespace polyvits::train {

/// Per-iteration random stream; depends only on (seed, iteration) so a
/// resumed run draws exactly what an uninterrupted one would.
inline std::mt19937_64 iteration_rng(long seed, long iteration) {
  std::seed_seq seq{static_cast<std::uint32_t>(static_cast<std::uint64_t>(seed) & 0xFFFFFFFFU),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(seed) >> 32),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(iteration) & 0xFFFFFFFFU),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(iteration) >> 32)};
  return std::mt19937_64(seq);
}

inline std::vector<std::string> parameter_names(const nn::ParameterSet& ps) {
  std::vector<std::string> names;
  for (const auto& [name, v] : ps.all()) names.push_back(name);
  return names;
}

struct RunOptions {
  /// Checkpoints go here when non-empty: `checkpoint_<N>.ckpt` every
  /// checkpoint_every iterations, plus `latest.ckpt`.
  std::string checkpoint_dir;
  std::function<void(const LossReport&)> on_report;
  std::shared_ptr<MasKernel> kernel = MasKernel::detect();
};

class Trainer {
 public:
  Trainer(TrainingState& state, const std::vector<Example>& examples, RunOptions options = {})
      : state_(state), examples_(examples), options_(std::move(options)), stft_(state.cfg) {
    if (examples_.empty()) fail(ErrorKind::kEmptyDataset, "no training examples");
    for (const auto& ex : examples_) {
      state_.generator->speaker(ex.spk_id);
      lengths_.push_back(ex.frames());
    }
    batches_per_epoch_ = static_cast<long>(current_batches(0).size());
    start_ = std::chrono::steady_clock::now();
  }

  const TrainingState& state() const { return state_; }

  /// One discriminator update followed by one generator update.
  LossReport step() {
    auto& cfg = state_.cfg;
    auto& g = *state_.generator;
    auto& d = *state_.discriminator;
    const long it = state_.iteration;
    const int k = cfg.train.grad_accumulation;
    const double lr = cfg.train.learning_rate * std::pow(cfg.train.lr_decay, static_cast<double>(it));
    auto rng = iteration_rng(cfg.train.seed, it);

    std::vector<Batch> batches;
    std::vector<GeneratorOutputs> outputs;
    for (int m = 0; m < k; ++m) {
      batches.push_back(batch_for(it * k + m));
      outputs.push_back(generator_forward(g, batches.back(), cfg, stft_, rng, options_.kernel));
    }

    LossReport report;
    report.iteration = it + 1;
    const double inv_k = 1.0 / k;

    const auto d_names = parameter_names(d.params);
    const auto d_snapshot = snapshot(d.params, state_.opt_d);
    d.params.zero_grad();
    for (const auto& out : outputs) {
      const Var loss = discriminator_loss(d, out);
      report.adversarial_d += loss.item() * inv_k;
      ag::backward(ag::scale(loss, inv_k));
    }
    if (!std::isfinite(report.adversarial_d)) abort_step("adversarial_d", nullptr);
    nn::clip_grad_norm(d.params, d_names, cfg.train.grad_clip);
    state_.opt_d.step(d.params, d_names, lr);

    const auto g_names = parameter_names(g.params);
    g.params.zero_grad();
    for (const auto& out : outputs) {
      const auto adv = generator_adversarial(d, out);
      const Var total = generator_total(out, adv, cfg.train.weights);
      report.mel += out.mel.item() * inv_k;
      report.kl += out.kl.item() * inv_k;
      report.duration += out.duration.item() * inv_k;
      report.adversarial_g += adv.adversarial.item() * inv_k;
      report.feature_matching += adv.feature_matching.item() * inv_k;
      report.total += total.item() * inv_k;
      ag::backward(ag::scale(total, inv_k));
    }
    if (const auto bad = report.non_finite_term(); !bad.empty()) abort_step(bad, &d_snapshot);
    nn::clip_grad_norm(g.params, g_names, cfg.train.grad_clip);
    state_.opt_g.step(g.params, g_names, lr);

    state_.iteration = it + 1;
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return report;
  }

  /// Trains until `state.iteration == until`, logging and checkpointing on
  /// the configured intervals.
  void run(long until) {
    const auto& t = state_.cfg.train;
    while (state_.iteration < until) {
      const LossReport r = step();
      if (options_.on_report && r.iteration % t.log_every == 0) options_.on_report(r);
      if (!options_.checkpoint_dir.empty() && r.iteration % t.checkpoint_every == 0) {
        save_checkpoint(checkpoint_path("checkpoint_" + std::to_string(r.iteration)), state_);
      }
    }
    if (!options_.checkpoint_dir.empty()) save_checkpoint(checkpoint_path("latest"), state_);
  }

  std::string checkpoint_path(const std::string& stem) const {
    return (std::filesystem::path(options_.checkpoint_dir) / (stem + ".ckpt")).string();
  }

  Batch batch_for(long micro_step) {
    const long epoch = micro_step / batches_per_epoch_;
    const auto& order = current_batches(epoch);
    return collate(examples_, order[static_cast<std::size_t>(micro_step % batches_per_epoch_)]);
  }

 private:
  struct Snapshot {
    std::map<std::string, Matrix> values;
    nn::AdamW optimizer;
  };

  static Snapshot snapshot(const nn::ParameterSet& ps, const nn::AdamW& opt) {
    Snapshot s{{}, opt};
    for (const auto& [name, v] : ps.all()) s.values[name] = v.value();
    return s;
  }

  [[noreturn]] void abort_step(const std::string& term, const Snapshot* d_snapshot) {
    if (d_snapshot != nullptr) {
      for (const auto& [name, value] : d_snapshot->values) state_.discriminator->params.at(name).mutable_value() = value;
      state_.opt_d = d_snapshot->optimizer;
    }
    std::string msg = "non-finite " + term + " loss at iteration " + std::to_string(state_.iteration + 1);
    if (!options_.checkpoint_dir.empty()) {
      const std::string path = checkpoint_path("last_good");
      save_checkpoint(path, state_);
      msg += "; last good state saved to " + path;
    }
    fail(ErrorKind::kNonFinite, msg);
  }

  const std::vector<std::vector<std::size_t>>& current_batches(long epoch) {
    if (epoch != cached_epoch_) {
      const auto& t = state_.cfg.train;
      cached_ = make_batches(lengths_, t.batch_size, static_cast<std::uint64_t>(t.seed + epoch), t.drop_last);
      cached_epoch_ = epoch;
    }
    return cached_;
  }

  TrainingState& state_;
  const std::vector<Example>& examples_;
  RunOptions options_;
  Stft stft_;
  std::vector<int> lengths_;
  long batches_per_epoch_ = 0;
  long cached_epoch_ = -1;
  std::vector<std::vector<std::size_t>> cached_;
  std::chrono::steady_clock::time_point start_;
};

/// Raises a coverage error unless every language in `required` (a comma
/// list of codes) has at least one utterance.
inline void check_coverage(const std::vector<Utterance>& utterances, const std::string& required) {
  if (utterances.empty()) fail(ErrorKind::kCoverage, "training corpus is empty");
  std::set<std::string> present;
  for (const auto& u : utterances) present.insert(u.language);
  std::stringstream ss(required);
  std::string code;
  std::vector<std::string> missing;
  while (std::getline(ss, code, ',')) {
    code = config_detail::trim(code);
    if (code.empty()) continue;
    resolve_backend(code);
    if (present.count(code) == 0) missing.push_back(code);
  }
  if (!missing.empty()) {
    std::string msg = "no training utterances for:";
    for (const auto& m : missing) msg += " " + m;
    fail(ErrorKind::kCoverage, msg);
  }
}

/// A fresh pretraining state for `manifest`: vocabulary from the corpus and
/// the backend inventory, one speaker row per manifest speaker.
inline TrainingState init_pretraining(const RunConfig& cfg, const Manifest& manifest, const TextFrontend& frontend) {
  check_coverage(manifest.utterances, cfg.train.require_languages);
  return TrainingState::create(cfg, build_corpus_vocabulary(manifest.utterances, frontend), manifest.speakers);
}

/// Adapts a pretrained state for few-shot training on `fewshot`. Declared
/// `targets` (default: manifest speakers unknown to the base) must each have
/// data; unknown targets get new speaker rows initialized to the mean row.
/// Returns the labels that were added.
inline std::vector<std::string> prepare_finetune(TrainingState& state, const RunConfig& requested,
                                                 const Manifest& fewshot, std::vector<std::string> targets = {}) {
  check_compatible(state.cfg, requested);
  if (targets.empty()) {
    for (const auto& label : fewshot.speakers) {
      if (std::find(state.speakers.begin(), state.speakers.end(), label) == state.speakers.end()) targets.push_back(label);
    }
  }
  if (targets.empty()) fail(ErrorKind::kMissingSpeakerData, "few-shot data names no target speakers");
  for (const auto& t : targets) {
    const bool has_data = std::any_of(fewshot.utterances.begin(), fewshot.utterances.end(),
                                      [&](const Utterance& u) { return u.speaker == t; });
    if (!has_data) fail(ErrorKind::kMissingSpeakerData, "target speaker '" + t + "' has no few-shot utterances");
  }
  std::vector<std::string> added;
  for (const auto& t : targets) {
    if (std::find(state.speakers.begin(), state.speakers.end(), t) == state.speakers.end() &&
        std::find(added.begin(), added.end(), t) == added.end()) {
      added.push_back(t);
    }
  }
  const int n_new = static_cast<int>(added.size());
  state.generator->extend_speakers(n_new);
  auto& moments = state.opt_g.state();
  if (auto it = moments.find("embed.speaker"); it != moments.end()) {
    for (Matrix* m : {&it->second.m, &it->second.v}) m->conservativeResizeLike(Matrix::Zero(m->rows() + n_new, m->cols()));
  }
  state.speakers.insert(state.speakers.end(), added.begin(), added.end());
  const int n_speakers = static_cast<int>(state.speakers.size());
  state.cfg = requested;
  state.cfg.model.n_speakers = n_speakers;
  state.iteration = 0;
  return added;
}

}  // namespace polyvits::train
