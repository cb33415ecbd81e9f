// consist-diffuse: command-line laboratory for subject-driven fine-tuning of
// a toy latent diffusion model with prior/subject consistency regularizers.
//
// Pipeline: make-corpus -> pretrain -> gen-priors -> finetune -> sample ->
// evaluate, plus ablate for the lambda sweeps. Every command writes a
// manifest into its output directory and refuses to clobber an existing run
// unless --force is given. Identical seeds reproduce identical artifacts.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "consist/checkpoint.hpp"
#include "consist/csv.hpp"
#include "consist/kv_config.hpp"
#include "consist/study.hpp"

namespace fs = std::filesystem;
using namespace consist;

namespace {

constexpr const char* kVersion = "consist-diffuse 0.1.0";
constexpr std::size_t kSide = 16;
constexpr std::size_t kPixelDim = kSide * kSide * 3;
constexpr std::size_t kLatentDim = 16;

fs::path artifact_root() {
  if (const char* home = std::getenv("CONSIST_DIFFUSE_HOME")) return fs::path(home);
  return fs::path("consist-artifacts");
}

fs::path resolve_out(const std::string& out, const std::string& command) {
  if (!out.empty()) return fs::path(out);
  return artifact_root() / command;
}

// Refuse to reuse a directory that already holds a run, unless forced.
void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir / "manifest.txt") && !force)
    throw std::runtime_error("output directory already contains a run: " + dir.string() +
                             " (pass --force to overwrite)");
  fs::create_directories(dir);
}

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const std::string& config_snapshot, KvMap extra = {}) {
  KvMap kv;
  kv["command"] = command;
  kv["version"] = kVersion;
  kv["seed"] = std::to_string(seed);
  kv["timestamp"] = std::to_string(static_cast<long long>(std::time(nullptr)));
  for (auto& [k, v] : extra) kv[std::move(k)] = std::move(v);
  save_kv(kv, dir / "manifest.txt");
  std::ofstream cf(dir / "config.txt");
  cf << config_snapshot;
}

// Compact value for human-facing labels (cell directories, mode tags);
// fmt_double stays reserved for round-trip-exact log values.
std::string fmt_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string two_digits(int i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

std::string four_digits(int i) {
  std::string s = std::to_string(i);
  while (s.size() < 4) s = "0" + s;
  return s;
}

void write_image_set(const std::vector<Image>& imgs, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    write_ppm(imgs[i], dir / (stem + "_" + four_digits(static_cast<int>(i)) + ".ppm"));
}

std::vector<Image> read_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .ppm images in " + dir.string());
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_ppm(f));
  return out;
}

LatentCodec codec_from(const BaseCheckpoint& ckpt) {
  return LatentCodec::from_state(ckpt.codec_rows, ckpt.codec_scale);
}

NoiseSchedule sched_from(const BaseCheckpoint& ckpt) {
  return build_schedule(static_cast<int>(ckpt.sched_timesteps), ckpt.sched_beta_start, ckpt.sched_beta_end);
}

std::vector<std::vector<double>> encode_all(const std::vector<Image>& imgs, const LatentCodec& codec) {
  std::vector<std::vector<double>> out;
  out.reserve(imgs.size());
  for (const auto& img : imgs) out.push_back(codec.encode(img));
  return out;
}

// ---- per-command state ----------------------------------------------------

struct CommonOpts {
  std::uint64_t seed = 1;
  std::string out;
  bool force = false;
  int threads = 1;
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--seed", c.seed, "Master RNG seed")->capture_default_str();
  sub->add_option("--out", c.out, "Output directory (default: $CONSIST_DIFFUSE_HOME/<command>)");
  sub->add_flag("--force", c.force, "Overwrite an existing run directory");
  sub->add_option("--threads", c.threads, "Worker threads for grid commands")->capture_default_str();
  sub->set_config("--config", "", "Flat key=value config file; flags override file values");
}

struct EvalReportRow {
  std::string mode = "unknown";
  std::uint64_t subject = 0;
  std::uint64_t seed = 0;
  double sim_i = 0, sim_t = 0, sim_d = 0, kl = 0;
};

EvalReportRow evaluate_images(const std::vector<Image>& generated, const std::vector<Image>& subject,
                              const std::vector<Image>& priors, const LatentCodec& codec,
                              const std::vector<double>& token) {
  Embedder emb_i(101, codec.pixel_dim(), token.size());
  Embedder emb_d(202, codec.pixel_dim(), token.size());
  EvalReportRow row;
  row.sim_i = score_image_similarity(generated, subject, emb_i);
  row.sim_d = score_image_similarity(generated, subject, emb_d);
  row.sim_t = score_prompt_similarity(generated, token, emb_i);
  row.kl = latent_kl(generated, priors, codec);
  return row;
}

void write_report_csv(const std::vector<EvalReportRow>& rows, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f << "mode,subject,seed,sim_I,sim_T,sim_D,kl\n";
  for (const auto& r : rows)
    f << r.mode << "," << r.subject << "," << r.seed << "," << fmt_double(r.sim_i) << ","
      << fmt_double(r.sim_t) << "," << fmt_double(r.sim_d) << "," << fmt_double(r.kl) << "\n";
}

std::vector<double> merged_token(const BaseCheckpoint& base, const DeltaCheckpoint* delta) {
  std::vector<double> tok = base.cond.class_emb.data();
  if (delta)
    for (std::size_t i = 0; i < tok.size(); ++i) tok[i] += delta->subject_emb.data()[i];
  return tok;
}

// ---- finetune core shared by cmd_finetune and cmd_ablate -------------------

struct FinetuneInputs {
  BaseCheckpoint base;
  LatentCodec codec;
  NoiseSchedule sched;
  std::vector<Image> subject;
  std::vector<Image> priors;
  std::vector<std::vector<double>> subject_latents;
  std::vector<std::vector<double>> prior_latents;
};

FinetuneInputs load_finetune_inputs(const std::string& base_path, const std::string& subject_dir,
                                    const std::string& priors_dir) {
  FinetuneInputs in{load_base(base_path), LatentCodec::from_state({{1.0}}, {1.0}), build_schedule(1, 0.5, 0.5),
                    {}, {}, {}, {}};
  in.codec = codec_from(in.base);
  in.sched = sched_from(in.base);
  in.subject = read_image_dir(subject_dir);
  in.priors = read_image_dir(priors_dir);
  in.subject_latents = encode_all(in.subject, in.codec);
  in.prior_latents = encode_all(in.priors, in.codec);
  return in;
}

void run_finetune_cell(const FinetuneInputs& in, const FinetuneConfig& cfg, const fs::path& dir) {
  FinetuneResult res = finetune(in.base.base, in.base.cond, in.subject_latents, in.prior_latents,
                                in.sched, cfg);
  save_delta({res.delta, res.cond.subject_emb}, dir / "delta.ckpt");
  write_training_log(res.log, dir / "train_log.csv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"consist-diffuse: toy latent-diffusion fine-tuning with consistency regularization"};
  app.require_subcommand(1);

  // ---- make-corpus ----
  auto* mc = app.add_subcommand("make-corpus", "Generate the synthetic class corpus and subject sets");
  CommonOpts mc_c;
  int mc_class_size = 512, mc_subjects = 3, mc_k = 4;
  add_common(mc, mc_c);
  mc->add_option("--class-size", mc_class_size, "Number of class images")->capture_default_str();
  mc->add_option("--subjects", mc_subjects, "Number of subject identities")->capture_default_str();
  mc->add_option("--k", mc_k, "Images per subject")->capture_default_str();

  // ---- pretrain ----
  auto* pt = app.add_subcommand("pretrain", "Pretrain the base denoiser on the class corpus");
  CommonOpts pt_c;
  std::string pt_corpus;
  int pt_steps = 20000, pt_batch = 16, pt_timesteps = 200;
  double pt_lr = 1e-3, pt_beta_start = 5e-4, pt_beta_end = 0.1;
  add_common(pt, pt_c);
  pt->add_option("--corpus", pt_corpus, "Corpus directory from make-corpus")->required();
  pt->add_option("--steps", pt_steps, "Training steps")->capture_default_str();
  pt->add_option("--batch", pt_batch, "Batch size")->capture_default_str();
  pt->add_option("--lr", pt_lr, "Learning rate")->capture_default_str();
  pt->add_option("--timesteps", pt_timesteps, "Diffusion timesteps T")->capture_default_str();
  pt->add_option("--beta-start", pt_beta_start, "Schedule beta at t=1")->capture_default_str();
  pt->add_option("--beta-end", pt_beta_end, "Schedule beta at t=T")->capture_default_str();

  // ---- gen-priors ----
  auto* gp = app.add_subcommand("gen-priors", "Sample prior images from the frozen base");
  CommonOpts gp_c;
  std::string gp_base;
  int gp_count = 100;
  add_common(gp, gp_c);
  gp->add_option("--base", gp_base, "Base checkpoint from pretrain")->required();
  gp->add_option("--count", gp_count, "Number of prior images K_p")->capture_default_str();

  // ---- finetune ----
  auto* ft = app.add_subcommand("finetune", "Fine-tune LoRA adapters on a subject");
  CommonOpts ft_c;
  std::string ft_base, ft_subject, ft_priors, ft_mode = "ours";
  FinetuneConfig ft_cfg;
  bool ft_detach = false;
  add_common(ft, ft_c);
  ft->add_option("--base", ft_base, "Base checkpoint")->required();
  ft->add_option("--subject", ft_subject, "Directory with the subject's images")->required();
  ft->add_option("--priors", ft_priors, "Directory with prior images (shared cache across modes)")->required();
  ft->add_option("--mode", ft_mode,
                 "dreambooth | ours | ours+prior | cp-only | cs-only | additive-ablation")
      ->capture_default_str();
  ft->add_option("--steps", ft_cfg.steps, "Fine-tuning steps")->capture_default_str();
  ft->add_option("--lr", ft_cfg.learning_rate, "Learning rate")->capture_default_str();
  ft->add_option("--rank", ft_cfg.lora_rank, "LoRA rank")->capture_default_str();
  ft->add_option("--lambda-prior", ft_cfg.weights.lambda_prior, "Weight of L_prior")->capture_default_str();
  ft->add_option("--lambda-cp", ft_cfg.weights.lambda_cp, "Weight of L_cp")->capture_default_str();
  ft->add_option("--lambda-cs", ft_cfg.weights.lambda_cs, "Weight of L_cs")->capture_default_str();
  ft->add_option("--sigma", ft_cfg.weights.sigma, "Multiplicative modulation std")->capture_default_str();
  ft->add_option("--subject-batch", ft_cfg.subject_batch, "Subject items per step")->capture_default_str();
  ft->add_option("--prior-batch", ft_cfg.prior_batch, "Prior items per step")->capture_default_str();
  ft->add_flag("--detach-clean", ft_detach, "Stop gradients through the clean consistency branch");

  // ---- sample ----
  auto* sm = app.add_subcommand("sample", "Generate subject images from a fine-tuned run");
  CommonOpts sm_c;
  std::string sm_base, sm_delta;
  SampleProtocol sm_proto;
  add_common(sm, sm_c);
  sm->add_option("--base", sm_base, "Base checkpoint")->required();
  sm->add_option("--delta", sm_delta, "Delta checkpoint from finetune")->required();
  sm->add_option("--prompts", sm_proto.prompts, "Prompt streams")->capture_default_str();
  sm->add_option("--per-prompt", sm_proto.per_prompt, "Images per prompt")->capture_default_str();

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "Score generated images against subject and priors");
  CommonOpts ev_c;
  std::string ev_generated, ev_subject, ev_priors, ev_base, ev_delta, ev_mode = "unknown";
  std::uint64_t ev_subject_id = 0, ev_run_seed = 0;
  add_common(ev, ev_c);
  ev->add_option("--generated", ev_generated, "Directory of generated images")->required();
  ev->add_option("--subject", ev_subject, "Directory of real subject images")->required();
  ev->add_option("--priors", ev_priors, "Directory of prior images")->required();
  ev->add_option("--base", ev_base, "Base checkpoint (codec + class token)")->required();
  ev->add_option("--delta", ev_delta, "Delta checkpoint (subject token); optional");
  ev->add_option("--mode", ev_mode, "Mode label for the report row")->capture_default_str();
  ev->add_option("--subject-id", ev_subject_id, "Subject label for the report row")->capture_default_str();
  ev->add_option("--run-seed", ev_run_seed, "Run-seed label for the report row")->capture_default_str();

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "Sweep the lambda_cp / lambda_cs grids");
  CommonOpts ab_c;
  std::string ab_base, ab_subject, ab_priors, ab_axis = "both";
  FinetuneConfig ab_cfg;
  SampleProtocol ab_proto;
  add_common(ab, ab_c);
  ab->add_option("--base", ab_base, "Base checkpoint")->required();
  ab->add_option("--subject", ab_subject, "Directory with the subject's images")->required();
  ab->add_option("--priors", ab_priors, "Directory with prior images")->required();
  ab->add_option("--axis", ab_axis, "cp | cs | both")->capture_default_str();
  ab->add_option("--steps", ab_cfg.steps, "Fine-tuning steps per cell")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (mc->parsed()) {
      fs::path dir = resolve_out(mc_c.out, "corpus");
      prepare_out(dir, mc_c.force);
      Rng rng(mc_c.seed);
      write_image_set(make_class_corpus(static_cast<std::size_t>(mc_class_size), rng, kSide),
                      dir / "class", "class");
      KvMap extra;
      extra["class_size"] = std::to_string(mc_class_size);
      extra["subjects"] = std::to_string(mc_subjects);
      extra["k"] = std::to_string(mc_k);
      for (int i = 0; i < mc_subjects; ++i) {
        std::uint64_t subject_seed = mc_c.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1));
        write_image_set(make_subject_set(subject_seed, static_cast<std::size_t>(mc_k), kSide),
                        dir / "subjects" / ("subject_" + two_digits(i)), "img");
        extra["subject_seed_" + two_digits(i)] = std::to_string(subject_seed);
      }
      write_manifest(dir, "make-corpus", mc_c.seed, mc->config_to_str(true, false), std::move(extra));
      std::cout << "corpus written to " << dir << "\n";
    } else if (pt->parsed()) {
      fs::path dir = resolve_out(pt_c.out, "pretrain");
      prepare_out(dir, pt_c.force);
      std::vector<Image> corpus = read_image_dir(fs::path(pt_corpus) / "class");
      NoiseSchedule sched = build_schedule(pt_timesteps, pt_beta_start, pt_beta_end);
      LatentCodec codec(kLatentDim, kPixelDim, pt_c.seed ^ 0xc0dec);
      codec.calibrate(corpus);
      PretrainConfig cfg;
      cfg.steps = pt_steps;
      cfg.batch = pt_batch;
      cfg.learning_rate = pt_lr;
      cfg.seed = pt_c.seed ^ 0xba5e;
      PretrainResult res = pretrain_base(encode_all(corpus, codec), sched, cfg);
      BaseCheckpoint ckpt{res.base, res.cond, codec.rows(), codec.scale(), pt_c.seed ^ 0xc0dec,
                          static_cast<std::uint64_t>(pt_timesteps), pt_beta_start, pt_beta_end};
      save_base(ckpt, dir / "base.ckpt");
      std::ofstream log(dir / "pretrain_log.csv");
      log << "step,loss\n";
      for (std::size_t i = 0; i < res.final_losses.size(); ++i)
        log << i << "," << fmt_double(res.final_losses[i]) << "\n";
      write_manifest(dir, "pretrain", pt_c.seed, pt->config_to_str(true, false));
      std::cout << "base checkpoint written to " << (dir / "base.ckpt") << "\n";
    } else if (gp->parsed()) {
      fs::path dir = resolve_out(gp_c.out, "priors");
      prepare_out(dir, gp_c.force);
      BaseCheckpoint base = load_base(gp_base);
      LatentCodec codec = codec_from(base);
      Rng rng(gp_c.seed);
      write_image_set(generate_priors(base.base, base.cond, codec, gp_count, sched_from(base), rng),
                      dir, "prior");
      write_manifest(dir, "gen-priors", gp_c.seed, gp->config_to_str(true, false));
      std::cout << gp_count << " prior images written to " << dir << "\n";
    } else if (ft->parsed()) {
      fs::path dir = resolve_out(ft_c.out, "finetune");
      prepare_out(dir, ft_c.force);
      FinetuneInputs in = load_finetune_inputs(ft_base, ft_subject, ft_priors);
      ft_cfg.mode = parse_mode(ft_mode);
      ft_cfg.seed = ft_c.seed;
      ft_cfg.detach_clean_branch = ft_detach;
      run_finetune_cell(in, ft_cfg, dir);
      write_manifest(dir, "finetune", ft_c.seed, ft->config_to_str(true, false));
      std::cout << "delta checkpoint written to " << (dir / "delta.ckpt") << "\n";
    } else if (sm->parsed()) {
      fs::path dir = resolve_out(sm_c.out, "samples");
      prepare_out(dir, sm_c.force);
      BaseCheckpoint base = load_base(sm_base);
      DeltaCheckpoint delta = load_delta(sm_delta);
      ConditionTable cond{base.cond.class_emb, delta.subject_emb};
      std::vector<Image> samples = sample_subject_images(base.base, delta.delta, cond, codec_from(base),
                                                         sched_from(base), sm_c.seed, sm_proto);
      write_image_set(samples, dir / "samples", "sample");
      write_manifest(dir, "sample", sm_c.seed, sm->config_to_str(true, false));
      std::cout << samples.size() << " samples written to " << (dir / "samples") << "\n";
    } else if (ev->parsed()) {
      fs::path dir = resolve_out(ev_c.out, "eval");
      prepare_out(dir, ev_c.force);
      BaseCheckpoint base = load_base(ev_base);
      DeltaCheckpoint delta;
      bool have_delta = !ev_delta.empty();
      if (have_delta) delta = load_delta(ev_delta);
      LatentCodec codec = codec_from(base);
      std::vector<Image> generated = read_image_dir(ev_generated);
      std::vector<Image> subject = read_image_dir(ev_subject);
      std::vector<Image> priors = read_image_dir(ev_priors);
      EvalReportRow row = evaluate_images(generated, subject, priors, codec,
                                          merged_token(base, have_delta ? &delta : nullptr));
      row.mode = ev_mode;
      row.subject = ev_subject_id;
      row.seed = ev_run_seed;
      write_report_csv({row}, dir / "report.csv");
      HistogramSpec hspec;
      write_histogram(pooled_histogram(encode_all(generated, codec), hspec), hspec.lo, hspec.hi,
                      dir / "hist_generated.txt");
      write_histogram(pooled_histogram(encode_all(priors, codec), hspec), hspec.lo, hspec.hi,
                      dir / "hist_priors.txt");
      write_manifest(dir, "evaluate", ev_c.seed, ev->config_to_str(true, false));
      std::cout << "report written to " << (dir / "report.csv") << "\n";
    } else if (ab->parsed()) {
      fs::path dir = resolve_out(ab_c.out, "ablate");
      prepare_out(dir, ab_c.force);
      FinetuneInputs in = load_finetune_inputs(ab_base, ab_subject, ab_priors);

      struct Cell {
        std::string axis;
        double lambda;
        fs::path dir;
        FinetuneConfig cfg;
      };
      std::vector<Cell> cells;
      auto add_cells = [&](const std::string& axis, const std::vector<double>& grid) {
        for (double lam : grid) {
          Cell c{axis, lam, dir / (axis + "_" + fmt_label(lam)), ab_cfg};
          c.cfg.mode = Mode::Ours;
          c.cfg.seed = ab_c.seed;
          if (axis == "cp")
            c.cfg.weights.lambda_cp = lam;
          else
            c.cfg.weights.lambda_cs = lam;
          cells.push_back(std::move(c));
        }
      };
      if (ab_axis == "cp" || ab_axis == "both") add_cells("cp", {0.0, 0.2, 0.5, 1.0});
      if (ab_axis == "cs" || ab_axis == "both") add_cells("cs", {0.0, 0.2, 0.5, 0.8});
      if (cells.empty()) throw std::runtime_error("ablate: unknown axis " + ab_axis);

      auto run_cell = [&](const Cell& c) {
        fs::create_directories(c.dir);
        run_finetune_cell(in, c.cfg, c.dir);
        DeltaCheckpoint delta = load_delta(c.dir / "delta.ckpt");
        ConditionTable cond{in.base.cond.class_emb, delta.subject_emb};
        std::vector<Image> samples = sample_subject_images(in.base.base, delta.delta, cond, in.codec,
                                                           in.sched, ab_c.seed ^ 0x5a3e, ab_proto);
        write_image_set(samples, c.dir / "samples", "sample");
      };
      int workers = std::max(1, ab_c.threads);
      for (std::size_t begin = 0; begin < cells.size(); begin += static_cast<std::size_t>(workers)) {
        std::vector<std::thread> pool;
        for (std::size_t i = begin; i < std::min(cells.size(), begin + static_cast<std::size_t>(workers)); ++i)
          pool.emplace_back(run_cell, std::cref(cells[i]));
        for (auto& t : pool) t.join();
      }

      std::vector<EvalReportRow> rows;
      for (const auto& c : cells) {
        std::vector<Image> samples = read_image_dir(c.dir / "samples");
        DeltaCheckpoint delta = load_delta(c.dir / "delta.ckpt");
        EvalReportRow row = evaluate_images(samples, in.subject, in.priors, in.codec,
                                            merged_token(in.base, &delta));
        row.mode = c.axis + "=" + fmt_label(c.lambda);
        row.seed = ab_c.seed;
        rows.push_back(row);
      }
      write_report_csv(rows, dir / "ablate.csv");
      write_manifest(dir, "ablate", ab_c.seed, ab->config_to_str(true, false));
      std::cout << "ablation summary written to " << (dir / "ablate.csv") << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
