#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "consist/adam.hpp"
#include "consist/codec.hpp"
#include "consist/corpus.hpp"
#include "consist/model.hpp"
#include "consist/objectives.hpp"
#include "consist/rng.hpp"
#include "consist/sampler.hpp"
#include "consist/schedule.hpp"

namespace consist {

enum class Mode { Dreambooth, Ours, OursPrior, CpOnly, CsOnly, AdditiveAblation };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Dreambooth: return "dreambooth";
    case Mode::Ours: return "ours";
    case Mode::OursPrior: return "ours+prior";
    case Mode::CpOnly: return "cp-only";
    case Mode::CsOnly: return "cs-only";
    case Mode::AdditiveAblation: return "additive-ablation";
  }
  throw std::invalid_argument("mode_name: unknown mode");
}

inline Mode parse_mode(const std::string& s) {
  if (s == "dreambooth") return Mode::Dreambooth;
  if (s == "ours") return Mode::Ours;
  if (s == "ours+prior") return Mode::OursPrior;
  if (s == "cp-only") return Mode::CpOnly;
  if (s == "cs-only") return Mode::CsOnly;
  if (s == "additive-ablation") return Mode::AdditiveAblation;
  throw std::invalid_argument("unknown mode: " + s);
}

// Which loss terms a mode activates.
struct ModeTerms {
  bool prior = false, cp = false, cs = false, additive = false;
};

inline ModeTerms mode_terms(Mode m) {
  switch (m) {
    case Mode::Dreambooth: return {true, false, false, false};
    case Mode::Ours: return {false, true, true, false};
    case Mode::OursPrior: return {true, true, true, false};
    case Mode::CpOnly: return {false, true, false, false};
    case Mode::CsOnly: return {false, false, true, false};
    case Mode::AdditiveAblation: return {false, true, true, true};
  }
  throw std::invalid_argument("mode_terms: unknown mode");
}

struct FinetuneConfig {
  double learning_rate = 5e-4;
  int steps = 2000;
  std::size_t lora_rank = 4;
  LossWeights weights;       // lambda_cp = lambda_cs = 0.5, sigma = 0.2, lambda_prior = 1
  int prior_count = 100;     // K_p
  int subject_count = 4;     // K
  std::uint64_t seed = 0;
  Mode mode = Mode::Ours;
  int subject_batch = 4;
  int prior_batch = 4;
  bool detach_clean_branch = false;
};

struct PretrainConfig {
  int steps = 4000;
  int batch = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  BaseParams base;
  ConditionTable cond;
  std::vector<double> final_losses;  // per-step training loss
};

// Phase 1: train the toy base denoiser on class-conditioned latents with
// the plain denoising objective, then freeze it.
inline PretrainResult pretrain_base(const std::vector<std::vector<double>>& class_latents,
                                    const NoiseSchedule& sched, const PretrainConfig& cfg) {
  if (class_latents.empty()) throw std::invalid_argument("pretrain_base: empty corpus");
  std::size_t dim = class_latents[0].size();
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(0);
  Rng step_rng = rng.fork(1);

  DenoiserDims dims;
  dims.latent = dim;
  PretrainResult res;
  res.base = BaseParams::init(dims, init_rng, true);
  res.cond = ConditionTable::init(dims.cond_dim, init_rng, true);

  std::vector<Tensor> leaves = res.base.params();
  leaves.push_back(res.cond.class_emb);
  Adam opt(leaves, cfg.learning_rate);

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> batch;
    for (int i = 0; i < cfg.batch; ++i) {
      std::size_t idx = static_cast<std::size_t>(step_rng.uniform_int(0, static_cast<int>(class_latents.size()) - 1));
      batch.push_back(Tensor::from({dim}, class_latents[idx], false));
    }
    auto draws = draw_noise(step_rng, batch.size(), dim, sched);
    Tensor cond = embed_condition(res.cond, {false});
    Tensor loss = denoising_loss(res.base, nullptr, batch, cond, sched, draws);
    if (!std::isfinite(loss.item()))
      throw std::runtime_error("pretrain_base: non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    backward(loss);
    opt.step();
    res.final_losses.push_back(loss.item());
  }

  res.base.freeze();
  res.cond.class_emb.set_requires_grad(false);
  res.cond.class_emb.zero_grad();
  return res;
}

// Phase 2: sample K_p prior latents from the frozen base under the class
// token and decode them. The API takes only BaseParams; priors can never
// come from a fine-tuned model.
inline std::vector<Image> generate_priors(const BaseParams& base, const ConditionTable& cond,
                                          const LatentCodec& codec, int k_p, const NoiseSchedule& sched,
                                          Rng& rng) {
  const std::vector<double>& class_emb = cond.class_emb.data();
  DenoiseFn fn = [&](const std::vector<double>& z_t, int t) {
    return predict_noise_raw(base, nullptr, z_t, t, class_emb);
  };
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(k_p));
  for (const auto& z : sample(fn, sched, rng, k_p, base.dims.latent)) out.push_back(codec.decode(z));
  return out;
}

struct FinetuneResult {
  LoraDelta delta;
  ConditionTable cond;  // shares the frozen class row, owns the tuned subject row
  std::vector<LossReport> log;
  long frozen_grad_violations = 0;
};

// Phase 3: LoRA fine-tuning under the mode's objective. Per step: one
// subject mini-batch (shared (eps,t) per item across L_s and L_cs) and one
// prior mini-batch with independent draws.
inline FinetuneResult finetune(const BaseParams& base, const ConditionTable& pretrained_cond,
                               const std::vector<std::vector<double>>& subject_latents,
                               const std::vector<std::vector<double>>& prior_latents,
                               const NoiseSchedule& sched, const FinetuneConfig& cfg) {
  if (subject_latents.empty()) throw std::invalid_argument("finetune: empty subject set");
  ModeTerms terms = mode_terms(cfg.mode);
  if ((terms.prior || terms.cp) && prior_latents.empty())
    throw std::invalid_argument("finetune: mode requires prior latents");
  cfg.weights.validate();

  std::size_t dim = base.dims.latent;
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(0);
  Rng step_rng = rng.fork(1);

  FinetuneResult res;
  res.delta = LoraDelta::init(base, cfg.lora_rank, 1.0, init_rng);
  res.cond.class_emb = pretrained_cond.class_emb;
  res.cond.subject_emb = Tensor::zeros({base.dims.cond_dim}, true);

  Adam opt(trainable_leaves(res.delta, res.cond), cfg.learning_rate);

  auto pick_batch = [&](const std::vector<std::vector<double>>& pool, int n) {
    std::vector<Tensor> batch;
    for (int i = 0; i < n; ++i) {
      std::size_t idx = static_cast<std::size_t>(step_rng.uniform_int(0, static_cast<int>(pool.size()) - 1));
      batch.push_back(Tensor::from({dim}, pool[idx], false));
    }
    return batch;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    LossReport report;

    std::vector<Tensor> subj = pick_batch(subject_latents, cfg.subject_batch);
    auto subj_draws = draw_noise(step_rng, subj.size(), dim, sched);
    for (const auto& d : subj_draws) report.timesteps.push_back(d.t);
    Tensor subj_cond = embed_condition(res.cond, {true});
    Tensor l_s = loss_s(base, &res.delta, subj, subj_cond, sched, subj_draws);

    Tensor l_cs_t, l_prior_t, l_cp_t;
    if (terms.cs)
      l_cs_t = loss_cs(base, res.delta, subj, subj_cond, cfg.weights.sigma, sched, subj_draws, step_rng,
                       terms.additive, cfg.detach_clean_branch);

    if (terms.prior || terms.cp) {
      std::vector<Tensor> prior = pick_batch(prior_latents, cfg.prior_batch);
      auto prior_draws = draw_noise(step_rng, prior.size(), dim, sched);
      for (const auto& d : prior_draws) report.timesteps.push_back(d.t);
      Tensor class_cond = embed_condition(res.cond, {false});
      if (terms.prior) l_prior_t = loss_prior(base, &res.delta, prior, class_cond, sched, prior_draws);
      if (terms.cp) l_cp_t = loss_cp(base, res.delta, prior, class_cond, sched, prior_draws);
    }

    Tensor total = total_loss(cfg.weights, l_s, terms.prior ? &l_prior_t : nullptr,
                              terms.cp ? &l_cp_t : nullptr, terms.cs ? &l_cs_t : nullptr, &report);
    if (!std::isfinite(report.total))
      throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(step));

    opt.zero_grad();
    backward(total);
    // Frozen-reference instrumentation: base weights must never see grads.
    for (const auto& p : const_cast<BaseParams&>(base).params())
      if (p.has_grad()) ++res.frozen_grad_violations;
    opt.step();
    res.log.push_back(std::move(report));
  }
  return res;
}

}  // namespace consist
