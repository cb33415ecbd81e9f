#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "consist/model.hpp"
#include "consist/rng.hpp"
#include "consist/schedule.hpp"
#include "consist/tensor.hpp"

namespace consist {

struct LossWeights {
  double lambda_prior = 1.0;
  double lambda_cp = 0.5;
  double lambda_cs = 0.5;
  double sigma = 0.2;

  void validate() const {
    if (lambda_prior < 0 || lambda_cp < 0 || lambda_cs < 0 || sigma < 0)
      throw std::invalid_argument("LossWeights: weights and sigma must be non-negative");
  }
};

struct LossReport {
  double l_s = 0.0;
  double l_prior = 0.0;
  double l_cp = 0.0;
  double l_cs = 0.0;
  double total = 0.0;
  std::vector<int> timesteps;  // subject-batch t draws, then prior-batch
};

// One (eps, t) draw. Within a step the same draw feeds every loss touching
// that item, matching the shared-noise coupling of the subject consistency
// term.
struct NoiseDraw {
  Tensor eps;
  int t = 0;
};

inline std::vector<NoiseDraw> draw_noise(Rng& rng, std::size_t count, std::size_t dim,
                                         const NoiseSchedule& sched) {
  std::vector<NoiseDraw> out(count);
  for (auto& d : out) {
    d.t = rng.uniform_int(1, sched.T);
    d.eps = sample_gaussian(rng, {dim}, 0.0, 1.0);
  }
  return out;
}

// Multiplicative modulation z' = z (*) eps_m, eps_m ~ N(1, sigma^2 I).
// The modulation noise is a constant; z' stays differentiable w.r.t. z.
inline Tensor modulate(const Tensor& z, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("modulate: negative sigma");
  if (sigma == 0.0) return z;
  Tensor eps_m = sample_gaussian(rng, z.shape(), 1.0, sigma);
  return mul(z, eps_m);
}

// Ablation variant: z' = z + eps_a, eps_a ~ N(0, sigma^2 I).
inline Tensor modulate_additive(const Tensor& z, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("modulate_additive: negative sigma");
  if (sigma == 0.0) return z;
  Tensor eps_a = sample_gaussian(rng, z.shape(), 0.0, sigma);
  return add(z, eps_a);
}

namespace detail {

inline void check_batch(const std::vector<Tensor>& batch, const std::vector<NoiseDraw>& draws, const char* op) {
  if (batch.empty()) throw std::invalid_argument(std::string(op) + ": empty batch");
  if (draws.size() != batch.size())
    throw std::invalid_argument(std::string(op) + ": draw count does not match batch");
}

inline Tensor batch_mean(std::vector<Tensor> items) {
  Tensor acc = items[0];
  for (std::size_t i = 1; i < items.size(); ++i) acc = add(acc, items[i]);
  return scale(acc, 1.0 / static_cast<double>(items.size()));
}

}  // namespace detail

// Denoising loss: mean_i || eps_i - f(z_{t_i}, t_i, cond) ||^2 / dim.
// Used for both the subject term (subject latents, subject token) and the
// prior-preservation term (prior latents, class token); the formula is one
// and the same.
inline Tensor denoising_loss(const BaseParams& base, const LoraDelta* delta, const std::vector<Tensor>& batch,
                             const Tensor& cond_emb, const NoiseSchedule& sched,
                             const std::vector<NoiseDraw>& draws) {
  detail::check_batch(batch, draws, "denoising_loss");
  std::vector<Tensor> items;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    DiffusedLatent dl = forward_diffuse(batch[i], draws[i].t, draws[i].eps, sched);
    Tensor pred = predict_noise(base, delta, dl.z_t, dl.t, cond_emb);
    items.push_back(mse(draws[i].eps, pred));
  }
  return detail::batch_mean(std::move(items));
}

inline Tensor loss_s(const BaseParams& base, const LoraDelta* delta, const std::vector<Tensor>& subject_batch,
                     const Tensor& subject_cond, const NoiseSchedule& sched, const std::vector<NoiseDraw>& draws) {
  return denoising_loss(base, delta, subject_batch, subject_cond, sched, draws);
}

inline Tensor loss_prior(const BaseParams& base, const LoraDelta* delta, const std::vector<Tensor>& prior_batch,
                         const Tensor& class_cond, const NoiseSchedule& sched, const std::vector<NoiseDraw>& draws) {
  return denoising_loss(base, delta, prior_batch, class_cond, sched, draws);
}

// Prior consistency: match the fine-tuned prediction to the frozen
// reference prediction on diffused prior latents. Both passes of each item
// see the same (eps, t). The reference branch is detached.
inline Tensor loss_cp(const BaseParams& base, const LoraDelta& delta, const std::vector<Tensor>& prior_batch,
                      const Tensor& class_cond, const NoiseSchedule& sched, const std::vector<NoiseDraw>& draws) {
  detail::check_batch(prior_batch, draws, "loss_cp");
  std::vector<Tensor> items;
  for (std::size_t i = 0; i < prior_batch.size(); ++i) {
    DiffusedLatent dl = forward_diffuse(prior_batch[i], draws[i].t, draws[i].eps, sched);
    Tensor pred = predict_noise(base, &delta, dl.z_t, dl.t, class_cond);
    Tensor ref = predict_noise(base, nullptr, dl.z_t, dl.t, class_cond.detach()).detach();
    items.push_back(mse(pred, ref));
  }
  return detail::batch_mean(std::move(items));
}

// Subject consistency: predictions for the clean and the noise-modulated
// latent must agree. Per item there is one (eps, t) draw feeding both
// branches and one modulation draw. Gradient flows through both branches
// unless detach_clean is set.
inline Tensor loss_cs(const BaseParams& base, const LoraDelta& delta, const std::vector<Tensor>& subject_batch,
                      const Tensor& subject_cond, double sigma, const NoiseSchedule& sched,
                      const std::vector<NoiseDraw>& draws, Rng& rng, bool additive = false,
                      bool detach_clean = false) {
  if (sigma < 0.0) throw std::invalid_argument("loss_cs: negative sigma");
  detail::check_batch(subject_batch, draws, "loss_cs");
  std::vector<Tensor> items;
  for (std::size_t i = 0; i < subject_batch.size(); ++i) {
    const Tensor& z = subject_batch[i];
    Tensor z_mod = additive ? modulate_additive(z, sigma, rng) : modulate(z, sigma, rng);
    DiffusedLatent clean = forward_diffuse(z, draws[i].t, draws[i].eps, sched);
    DiffusedLatent modded = forward_diffuse(z_mod, draws[i].t, draws[i].eps, sched);
    Tensor pred_clean = predict_noise(base, &delta, clean.z_t, clean.t, subject_cond);
    if (detach_clean) pred_clean = pred_clean.detach();
    Tensor pred_mod = predict_noise(base, &delta, modded.z_t, modded.t, subject_cond);
    items.push_back(mse(pred_clean, pred_mod));
  }
  return detail::batch_mean(std::move(items));
}

// Weighted sum per the active configuration. Undefined (unused) parts
// contribute zero.
inline Tensor total_loss(const LossWeights& w, const Tensor& l_s, const Tensor* l_prior, const Tensor* l_cp,
                         const Tensor* l_cs, LossReport* report = nullptr) {
  w.validate();
  Tensor total = l_s;
  if (l_prior) total = add(total, scale(*l_prior, w.lambda_prior));
  if (l_cp) total = add(total, scale(*l_cp, w.lambda_cp));
  if (l_cs) total = add(total, scale(*l_cs, w.lambda_cs));
  if (report) {
    report->l_s = l_s.item();
    report->l_prior = l_prior ? l_prior->item() : 0.0;
    report->l_cp = l_cp ? l_cp->item() : 0.0;
    report->l_cs = l_cs ? l_cs->item() : 0.0;
    report->total = total.item();
  }
  return total;
}

}  // namespace consist
