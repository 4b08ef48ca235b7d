#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "polyvits/align/batch.hpp"
#include "polyvits/audio/spectrogram.hpp"
#include "polyvits/config/run_config.hpp"
#include "polyvits/data/dataset.hpp"
#include "polyvits/model/discriminator.hpp"
#include "polyvits/model/generator.hpp"

namespace polyvits::train {

using ag::Var;

struct LossReport {
  long iteration = 0;
  double wall_time = 0.0;
  double total = 0.0;
  double mel = 0.0;
  double kl = 0.0;
  double duration = 0.0;
  double adversarial_g = 0.0;
  double adversarial_d = 0.0;
  double feature_matching = 0.0;

  /// Name of the first non-finite term, or empty.
  std::string non_finite_term() const {
    const std::pair<const char*, double> terms[] = {{"mel", mel},
                                                    {"kl", kl},
                                                    {"duration", duration},
                                                    {"adversarial_g", adversarial_g},
                                                    {"adversarial_d", adversarial_d},
                                                    {"feature_matching", feature_matching},
                                                    {"total", total}};
    for (const auto& [name, v] : terms) {
      if (!std::isfinite(v)) return name;
    }
    return {};
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["iteration"] = iteration;
    j["wall_time"] = wall_time;
    j["total"] = total;
    j["mel"] = mel;
    j["kl"] = kl;
    j["duration"] = duration;
    j["adversarial_g"] = adversarial_g;
    j["adversarial_d"] = adversarial_d;
    j["feature_matching"] = feature_matching;
    return j;
  }

  /// Equality of every term, ignoring wall time.
  bool same_terms(const LossReport& o) const {
    return iteration == o.iteration && total == o.total && mel == o.mel && kl == o.kl && duration == o.duration &&
           adversarial_g == o.adversarial_g && adversarial_d == o.adversarial_d &&
           feature_matching == o.feature_matching;
  }
};

inline double weighted_total(const LossReport& r, const LossWeights& w) {
  return w.mel * r.mel + w.kl * r.kl + w.duration * r.duration + w.adversarial * r.adversarial_g +
         w.feature_matching * r.feature_matching;
}

/// KL(N(mu_q, exp(logvar_q)) || N(mu_p, exp(logvar_p))) summed over valid
/// rows and channels, divided by the number of valid rows.
inline Var gaussian_kl(const Var& mu_q, const Var& logvar_q, const Var& mu_p, const Var& logvar_p, const Matrix& mask) {
  const Var diff = mu_q - mu_p;
  const Var log_ratio = logvar_q - logvar_p;
  const Var per = ag::scale(ag::add_scalar(ag::exp(log_ratio), -1.0) - log_ratio +
                                ag::square(diff) * ag::exp(ag::scale(logvar_p, -1.0)),
                            0.5);
  return ag::scale(ag::sum(nn::masked(per, ag::constant(mask))), 1.0 / mask.sum());
}

inline Var l1_mean(const Var& a, const Var& b) { return ag::mean(ag::abs(a - b)); }

/// Expected log-likelihood of each posterior frame under each phoneme's
/// prior: P x F, restricted to the valid block.
inline Matrix alignment_loglik(const Matrix& mu_p, const Matrix& logvar_p, const Matrix& mu_q, const Matrix& logvar_q,
                               int valid_p, int valid_f) {
  const Matrix mp = mu_p.topRows(valid_p);
  const Matrix inv_var = (-logvar_p.topRows(valid_p)).array().exp().matrix();
  const Matrix mq = mu_q.topRows(valid_f);
  const Matrix second = mq.cwiseProduct(mq) + logvar_q.topRows(valid_f).array().exp().matrix();
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const ColVector constant =
      (-0.5 * (log_2pi + logvar_p.topRows(valid_p).array()) - 0.5 * mp.array().square() * inv_var.array())
          .rowwise()
          .sum();
  Matrix ll = -0.5 * inv_var * second.transpose() + mp.cwiseProduct(inv_var) * mq.transpose();
  ll.colwise() += constant;
  return ll;
}

struct ItemOutputs {
  Var fake;          // decoded segment, seg * hop x 1
  Matrix real;       // matching ground-truth samples
  Var mel_fake;
  Matrix mel_real;
  AlignmentPath path;
};

struct GeneratorOutputs {
  std::vector<ItemOutputs> items;
  Var mel;       // batch means
  Var kl;
  Var duration;
};

/// Everything the generator contributes to one batch. `rng` drives the
/// posterior noise and segment choice; padding does not change its use.
inline GeneratorOutputs generator_forward(const model::Generator& g, const Batch& batch, const RunConfig& cfg,
                                          const Stft& stft, std::mt19937_64& rng,
                                          const std::shared_ptr<MasKernel>& kernel = MasKernel::detect()) {
  struct Pending {
    model::PriorStats prior;
    model::PosteriorStats post;
    Var flowed_mu;
    Matrix mask_p, mask_f;
  };
  const int hop = cfg.data.hop;
  const auto B = batch.size();
  std::vector<Pending> pending(B);
  std::vector<Matrix> logliks(B);
  for (std::size_t b = 0; b < B; ++b) {
    const Example& ex = *batch.items[b];
    Pending& p = pending[b];
    p.mask_p = batch.phoneme_mask(b);
    p.mask_f = batch.frame_mask(b);
    Matrix context;
    if (cfg.model.use_context) context = batch.padded_context(b);
    p.prior = g.encode_text(batch.padded_ids(b), cfg.model.use_context ? &context : nullptr, ex.lang_id, ex.spk_id,
                            p.mask_p);
    p.post = g.encode_posterior(batch.padded_linear(b), ex.spk_id, p.mask_f, &rng);
    p.flowed_mu = g.flow_forward(p.post.mu, p.mask_f, ex.spk_id);
    logliks[b] = alignment_loglik(p.prior.mu.value(), p.prior.logvar.value(), p.flowed_mu.value(),
                                  p.post.logvar.value(), batch.valid_p[b], batch.valid_f[b]);
  }
  const auto paths = mas_batch(BatchedLoglik::from_items(logliks, batch.valid_p, batch.valid_f), kernel);

  GeneratorOutputs out;
  std::vector<Var> mel_terms, kl_terms, dur_terms;
  for (std::size_t b = 0; b < B; ++b) {
    const Example& ex = *batch.items[b];
    Pending& p = pending[b];
    ItemOutputs item;
    item.path = paths[b];
    std::vector<int> owner(static_cast<std::size_t>(batch.max_f), -1);
    std::copy(item.path.assignment.begin(), item.path.assignment.end(), owner.begin());
    const Var mu_p = ag::gather_rows(p.prior.mu, owner);
    const Var logvar_p = ag::gather_rows(p.prior.logvar, owner);
    kl_terms.push_back(gaussian_kl(p.flowed_mu, p.post.logvar, mu_p, logvar_p, p.mask_f));
    dur_terms.push_back(model::DurationPredictor::nll(g.duration_stats(p.prior.hidden, p.mask_p, ex.lang_id, ex.spk_id),
                                                      item.path.durations, p.mask_p));

    const int valid_f = batch.valid_f[b];
    const int seg = std::min(cfg.data.segment_frames, valid_f);
    const int start = static_cast<int>(rng() % static_cast<std::uint64_t>(valid_f - seg + 1));
    item.fake = g.decode_waveform(ag::slice_rows(p.post.latent.z, start, seg), ex.spk_id);
    item.real = Eigen::Map<const ColVector>(ex.wave.data() + static_cast<std::ptrdiff_t>(start) * hop,
                                            static_cast<Eigen::Index>(seg) * hop);
    item.mel_fake = stft.log_mel(item.fake);
    {
      const ag::NoGradGuard no_grad;
      item.mel_real = stft.log_mel(ag::constant(item.real)).value();
    }
    mel_terms.push_back(l1_mean(item.mel_fake, ag::constant(item.mel_real)));
    out.items.push_back(std::move(item));
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  auto batch_mean = [&](const std::vector<Var>& terms) {
    Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
    return ag::scale(total, inv_b);
  };
  out.mel = batch_mean(mel_terms);
  out.kl = batch_mean(kl_terms);
  out.duration = batch_mean(dur_terms);
  return out;
}

/// LSGAN critic loss: real scores pushed to 1, fake to 0, summed over
/// scales and averaged over items. Fakes are detached.
inline Var discriminator_loss(const model::Discriminator& d, const GeneratorOutputs& gen) {
  std::vector<Var> terms;
  for (const auto& item : gen.items) {
    const auto real = d(ag::constant(item.real));
    const auto fake = d(ag::detach(item.fake));
    for (std::size_t s = 0; s < real.scores.size(); ++s) {
      terms.push_back(ag::mean(ag::square(ag::add_scalar(real.scores[s], -1.0))) + ag::mean(ag::square(fake.scores[s])));
    }
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
  return ag::scale(total, 1.0 / static_cast<double>(gen.items.size()));
}

struct AdversarialTerms {
  Var adversarial;
  Var feature_matching;
};

/// Generator side: fake scores pushed to 1, plus L1 between real and fake
/// discriminator feature maps.
inline AdversarialTerms generator_adversarial(const model::Discriminator& d, const GeneratorOutputs& gen) {
  std::vector<Var> adv, fm;
  for (const auto& item : gen.items) {
    model::DiscriminatorOutput real;
    {
      const ag::NoGradGuard no_grad;
      real = d(ag::constant(item.real));
    }
    const auto fake = d(item.fake);
    for (std::size_t s = 0; s < fake.scores.size(); ++s) {
      adv.push_back(ag::mean(ag::square(ag::add_scalar(fake.scores[s], -1.0))));
      for (std::size_t l = 0; l < fake.features[s].size(); ++l) {
        fm.push_back(l1_mean(fake.features[s][l], ag::constant(real.features[s][l].value())));
      }
    }
  }
  auto sum_scaled = [&](const std::vector<Var>& terms) {
    Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
    return ag::scale(total, 1.0 / static_cast<double>(gen.items.size()));
  };
  return {sum_scaled(adv), sum_scaled(fm)};
}

inline Var generator_total(const GeneratorOutputs& gen, const AdversarialTerms& adv, const LossWeights& w) {
  return ag::scale(gen.mel, w.mel) + ag::scale(gen.kl, w.kl) + ag::scale(gen.duration, w.duration) +
         ag::scale(adv.adversarial, w.adversarial) + ag::scale(adv.feature_matching, w.feature_matching);
}

/// Evaluates every term for one batch without touching parameters.
inline LossReport compute_losses(const model::Generator& g, const model::Discriminator& d, const Batch& batch,
                                 const RunConfig& cfg, const Stft& stft, std::mt19937_64& rng) {
  const ag::NoGradGuard no_grad;
  const auto gen = generator_forward(g, batch, cfg, stft, rng);
  const auto adv = generator_adversarial(d, gen);
  LossReport r;
  r.mel = gen.mel.item();
  r.kl = gen.kl.item();
  r.duration = gen.duration.item();
  r.adversarial_g = adv.adversarial.item();
  r.feature_matching = adv.feature_matching.item();
  r.adversarial_d = discriminator_loss(d, gen).item();
  r.total = generator_total(gen, adv, cfg.train.weights).item();
  return r;
}

}  // namespace polyvits::train
