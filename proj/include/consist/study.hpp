#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "consist/codec.hpp"
#include "consist/corpus.hpp"
#include "consist/eval.hpp"
#include "consist/kv_config.hpp"
#include "consist/sampler.hpp"
#include "consist/trainer.hpp"

namespace consist {

// Sampling protocol: 10 prompt streams x 4 images per run.
struct SampleProtocol {
  int prompts = 10;
  int per_prompt = 4;
};

inline std::vector<Image> sample_subject_images(const BaseParams& base, const LoraDelta& delta,
                                                const ConditionTable& cond, const LatentCodec& codec,
                                                const NoiseSchedule& sched, std::uint64_t seed,
                                                const SampleProtocol& proto = {}) {
  std::vector<double> cond_emb(cond.class_emb.data());
  for (std::size_t i = 0; i < cond_emb.size(); ++i) cond_emb[i] += cond.subject_emb.data()[i];
  DenoiseFn fn = [&](const std::vector<double>& z_t, int t) {
    return predict_noise_raw(base, &delta, z_t, t, cond_emb);
  };
  std::vector<Image> out;
  Rng rng(seed);
  for (int p = 0; p < proto.prompts; ++p) {
    Rng prompt_rng = rng.fork(static_cast<std::uint64_t>(p));
    for (const auto& z : sample(fn, sched, prompt_rng, proto.per_prompt, base.dims.latent))
      out.push_back(codec.decode(z));
  }
  return out;
}

struct StudyRow {
  Mode mode = Mode::Ours;
  std::uint64_t subject = 0;
  std::uint64_t seed = 0;
  double sim_i = 0.0;  // image-image similarity, first embedder
  double sim_t = 0.0;  // prompt-image similarity
  double sim_d = 0.0;  // image-image similarity, second embedder
  double kl = 0.0;     // pooled latent KL vs priors
};

struct StudyConfig {
  std::vector<Mode> modes;
  std::vector<std::uint64_t> subject_seeds;
  std::vector<std::uint64_t> run_seeds;
  FinetuneConfig finetune;  // per-run seed/mode are overwritten
  SampleProtocol protocol;
  std::uint64_t embedder_seed_i = 101;
  std::uint64_t embedder_seed_d = 202;
};

// Shared, mode-independent artifacts: pretrained base, calibrated codec,
// prior cache. Built once per study so method comparisons are paired.
struct StudyContext {
  NoiseSchedule sched;
  LatentCodec codec;
  BaseParams base;
  ConditionTable cond;
  std::vector<Image> priors;
  std::vector<std::vector<double>> prior_latents;
};

inline StudyContext build_study_context(std::uint64_t seed, int class_size, int prior_count,
                                        const NoiseSchedule& sched, const PretrainConfig& pretrain_cfg,
                                        std::size_t latent_dim = 16, std::size_t side = 16) {
  StudyContext ctx{sched, LatentCodec(latent_dim, side * side * 3, seed ^ 0xc0dec), {}, {}, {}, {}};
  Rng rng(seed);
  Rng corpus_rng = rng.fork(10);
  std::vector<Image> class_corpus = make_class_corpus(static_cast<std::size_t>(class_size), corpus_rng, side);
  ctx.codec.calibrate(class_corpus);

  std::vector<std::vector<double>> class_latents;
  for (const auto& img : class_corpus) class_latents.push_back(ctx.codec.encode(img));

  PretrainConfig pc = pretrain_cfg;
  pc.seed = seed ^ 0xba5e;
  PretrainResult pr = pretrain_base(class_latents, sched, pc);
  ctx.base = pr.base;
  ctx.cond = pr.cond;

  Rng prior_rng = rng.fork(20);
  ctx.priors = generate_priors(ctx.base, ctx.cond, ctx.codec, prior_count, sched, prior_rng);
  for (const auto& img : ctx.priors) ctx.prior_latents.push_back(ctx.codec.encode(img));
  return ctx;
}

struct StudyRunArtifacts {
  FinetuneResult result;
  std::vector<Image> samples;
};

inline StudyRunArtifacts run_study_cell(const StudyContext& ctx, Mode mode, std::uint64_t subject_seed,
                                        std::uint64_t run_seed, const FinetuneConfig& base_cfg,
                                        const SampleProtocol& proto) {
  std::vector<Image> subject = make_subject_set(subject_seed, static_cast<std::size_t>(base_cfg.subject_count));
  std::vector<std::vector<double>> subject_latents;
  for (const auto& img : subject) subject_latents.push_back(ctx.codec.encode(img));

  FinetuneConfig cfg = base_cfg;
  cfg.mode = mode;
  cfg.seed = run_seed;
  StudyRunArtifacts art;
  art.result = finetune(ctx.base, ctx.cond, subject_latents, ctx.prior_latents, ctx.sched, cfg);
  art.samples = sample_subject_images(ctx.base, art.result.delta, art.result.cond, ctx.codec, ctx.sched,
                                      run_seed ^ 0x5a3e, proto);
  return art;
}

inline std::vector<StudyRow> run_study(const StudyContext& ctx, const StudyConfig& cfg) {
  Embedder emb_i(cfg.embedder_seed_i, ctx.codec.pixel_dim(), ctx.base.dims.cond_dim);
  Embedder emb_d(cfg.embedder_seed_d, ctx.codec.pixel_dim(), ctx.base.dims.cond_dim);

  std::vector<StudyRow> rows;
  for (Mode mode : cfg.modes) {
    for (std::uint64_t subject_seed : cfg.subject_seeds) {
      std::vector<Image> subject = make_subject_set(subject_seed,
                                                    static_cast<std::size_t>(cfg.finetune.subject_count));
      for (std::uint64_t run_seed : cfg.run_seeds) {
        StudyRunArtifacts art = run_study_cell(ctx, mode, subject_seed, run_seed, cfg.finetune, cfg.protocol);
        std::vector<double> subj_cond(art.result.cond.class_emb.data());
        for (std::size_t i = 0; i < subj_cond.size(); ++i) subj_cond[i] += art.result.cond.subject_emb.data()[i];

        StudyRow row;
        row.mode = mode;
        row.subject = subject_seed;
        row.seed = run_seed;
        row.sim_i = score_image_similarity(art.samples, subject, emb_i);
        row.sim_d = score_image_similarity(art.samples, subject, emb_d);
        row.sim_t = score_prompt_similarity(art.samples, subj_cond, emb_i);
        row.kl = latent_kl(art.samples, ctx.priors, ctx.codec);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

inline void write_study_csv(const std::vector<StudyRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_study_csv: cannot open " + path.string());
  f << "mode,subject,seed,sim_I,sim_T,sim_D,kl\n";
  for (const auto& r : rows)
    f << mode_name(r.mode) << "," << r.subject << "," << r.seed << "," << fmt_double(r.sim_i) << ","
      << fmt_double(r.sim_t) << "," << fmt_double(r.sim_d) << "," << fmt_double(r.kl) << "\n";
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> collect(const std::vector<StudyRow>& rows, Mode mode, double StudyRow::*field) {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.mode == mode) out.push_back(r.*field);
  return out;
}

}  // namespace consist
