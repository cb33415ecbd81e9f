// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Runs standalone (no test framework) so the output is the report.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "consist/checkpoint.hpp"
#include "consist/csv.hpp"
#include "consist/study.hpp"
#include "fd_check.hpp"

using namespace consist;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int idx, const char* name, bool pass, const std::string& detail) {
  std::printf("%s  %2d. %s: %s\n", pass ? "PASS" : "FAIL", idx, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

// Width-8 network with randomized adapters and subject row; every loss's
// gradient path is generic.
struct TinyFix {
  DenoiserDims dims;
  BaseParams base;
  ConditionTable cond;
  LoraDelta delta;

  explicit TinyFix(std::uint64_t seed, bool randomize = true) {
    dims.latent = 6;
    dims.time_dim = 4;
    dims.cond_dim = 4;
    dims.hidden = 8;
    Rng rng(seed);
    base = BaseParams::init(dims, rng, false);
    cond = ConditionTable::init(dims.cond_dim, rng, false);
    delta = LoraDelta::init(base, 2, 1.0, rng);
    if (randomize) {
      for (auto& layer : delta.layers) {
        for (double& v : layer.a.mutable_data()) v = 0.3 * rng.normal();
        for (double& v : layer.b.mutable_data()) v = 0.3 * rng.normal();
      }
      for (double& v : cond.subject_emb.mutable_data()) v = 0.1 * rng.normal();
    }
    cond.subject_emb.set_requires_grad(true);
  }
};

void criterion_1() {
  auto t0 = std::chrono::steady_clock::now();
  NoiseSchedule sched = build_schedule(20, 1e-3, 0.1);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    TinyFix f(static_cast<std::uint64_t>(trial) + 1);
    Rng data_rng(static_cast<std::uint64_t>(trial) * 7 + 101);
    std::vector<Tensor> batch = {sample_gaussian(data_rng, {6}, 0, 1), sample_gaussian(data_rng, {6}, 0, 1)};
    auto draws = draw_noise(data_rng, batch.size(), 6, sched);
    std::vector<Tensor> leaves = trainable_leaves(f.delta, f.cond);

    auto subj_cond = [&]() { return embed_condition(f.cond, {true}); };
    auto class_cond = [&]() { return embed_condition(f.cond, {false}); };
    std::uint64_t mod_seed = static_cast<std::uint64_t>(trial) * 13 + 5;

    std::function<Tensor()> builders[] = {
        [&]() { return loss_s(f.base, &f.delta, batch, subj_cond(), sched, draws); },
        [&]() { return loss_prior(f.base, &f.delta, batch, class_cond(), sched, draws); },
        [&]() { return loss_cp(f.base, f.delta, batch, class_cond(), sched, draws); },
        [&]() {
          Rng mod_rng(mod_seed);  // fresh per rebuild: modulation is a fixed constant
          return loss_cs(f.base, f.delta, batch, subj_cond(), 0.2, sched, draws, mod_rng);
        },
    };
    for (auto& b : builders) worst = std::max(worst, consist::testing::check_gradients(b, leaves));
  }
  double el = seconds_since(t0);
  report(1, "gradient oracle (4 losses x 20 trials vs central differences)", worst < 1e-4 && el < 30.0,
         "max rel err " + fmt(worst) + " (limit 1e-4), " + fmt(el) + " s (limit 30 s)");
}

void criterion_2() {
  NoiseSchedule sched = build_schedule(20, 1e-3, 0.1);
  Rng data_rng(200);
  std::vector<Tensor> batch = {sample_gaussian(data_rng, {6}, 0, 1), sample_gaussian(data_rng, {6}, 0, 1)};
  auto draws = draw_noise(data_rng, batch.size(), 6, sched);

  // subject consistency at sigma = 0 vanishes bitwise
  TinyFix f(201);
  Rng mod_rng(202);
  Tensor subj_cond = embed_condition(f.cond, {true});
  bool cs_zero = loss_cs(f.base, f.delta, batch, subj_cond, 0.0, sched, draws, mod_rng).item() == 0.0;

  // prior consistency at adapter zero-init: zero value, zero gradient
  TinyFix z(203, false);
  Tensor class_cond = embed_condition(z.cond, {false});
  Tensor lcp = loss_cp(z.base, z.delta, batch, class_cond, sched, draws);
  bool cp_zero = lcp.item() == 0.0;
  backward(lcp);
  double gnorm = 0.0;
  for (const auto& leaf : trainable_leaves(z.delta, z.cond))
    if (leaf.has_grad())
      for (double g : leaf.grad()) gnorm += g * g;
  gnorm = std::sqrt(gnorm);

  // zero lambdas reduce the weighted total to the denoising term exactly
  LossWeights w;
  w.lambda_cp = 0.0;
  w.lambda_cs = 0.0;
  Rng mod_rng2(204);
  Tensor ls = loss_s(f.base, &f.delta, batch, subj_cond, sched, draws);
  Tensor lcp2 = loss_cp(f.base, f.delta, batch, embed_condition(f.cond, {false}), sched, draws);
  Tensor lcs2 = loss_cs(f.base, f.delta, batch, subj_cond, 0.2, sched, draws, mod_rng2);
  bool reduces = total_loss(w, ls, nullptr, &lcp2, &lcs2).item() == ls.item();

  report(2, "degenerate-case exactness", cs_zero && cp_zero && gnorm < 1e-12 && reduces,
         std::string("cs(sigma=0) zero: ") + (cs_zero ? "yes" : "no") + ", cp zero-init value zero: " +
             (cp_zero ? "yes" : "no") + ", cp grad norm " + fmt(gnorm) + " (limit 1e-12), lambda=0 reduction exact: " +
             (reduces ? "yes" : "no"));
}

void criterion_3() {
  NoiseSchedule sched = build_schedule(200, 5e-4, 0.1);
  Rng rng(300);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Tensor zt = sample_gaussian(rng, {16}, 0, 1);
    Tensor zp = modulate(zt, 0.2, rng);
    int t = rng.uniform_int(1, sched.T);
    Tensor eps = sample_gaussian(rng, {16}, 0, 1);
    Tensor a = forward_diffuse(zt, t, eps, sched).z_t;
    Tensor b = forward_diffuse(zp, t, eps, sched).z_t;
    for (std::size_t k = 0; k < 16; ++k) {
      double lhs = a.data()[k] - b.data()[k];
      double rhs = sched.alpha_at(t) * (zt.data()[k] - zp.data()[k]);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  report(3, "shared-noise coupling identity over 100 items", worst < 1e-12,
         "max |z_t - z'_t - alpha_t (z - z*eps_m)| = " + fmt(worst) + " (limit 1e-12)");
}

void criterion_4() {
  NoiseSchedule sched = build_schedule(200, 5e-4, 0.1);
  Rng crng(401);
  std::vector<Image> corpus = make_class_corpus(128, crng);
  LatentCodec codec(16, 16 * 16 * 3, 402);
  codec.calibrate(corpus);
  std::vector<std::vector<double>> class_latents;
  for (const auto& img : corpus) class_latents.push_back(codec.encode(img));

  PretrainConfig pc;
  pc.steps = 600;
  pc.batch = 8;
  pc.seed = 403;
  PretrainResult pr = pretrain_base(class_latents, sched, pc);

  std::vector<std::vector<double>> snap;
  for (const auto& p : pr.base.params()) snap.push_back(p.data());
  std::vector<double> class_row = pr.cond.class_emb.data();

  Rng prior_rng(404);
  std::vector<std::vector<double>> prior_latents;
  for (const auto& img : generate_priors(pr.base, pr.cond, codec, 32, sched, prior_rng))
    prior_latents.push_back(codec.encode(img));
  std::vector<std::vector<double>> subject_latents;
  for (const auto& img : make_subject_set(7, 4)) subject_latents.push_back(codec.encode(img));

  FinetuneConfig fc;
  fc.mode = Mode::OursPrior;  // activates every loss term
  fc.steps = 2000;
  fc.seed = 405;
  FinetuneResult res = finetune(pr.base, pr.cond, subject_latents, prior_latents, sched, fc);

  bool bits_ok = pr.cond.class_emb.data() == class_row;
  std::size_t i = 0;
  for (const auto& p : pr.base.params()) bits_ok = bits_ok && p.data() == snap[i++];

  report(4, "frozen-reference invariants over a full 2000-step fine-tune",
         bits_ok && res.frozen_grad_violations == 0,
         std::string("base bit-identical: ") + (bits_ok ? "yes" : "no") + ", instrumented grad violations " +
             std::to_string(res.frozen_grad_violations) + " (limit 0)");
}

void criterion_5() {
  DenoiserDims dims;
  Rng rng(500);
  BaseParams base = BaseParams::init(dims, rng, false);
  ConditionTable cond = ConditionTable::init(dims.cond_dim, rng, false);
  LoraDelta delta = LoraDelta::init(base, 4, 1.0, rng);
  for (auto& layer : delta.layers) {
    for (double& v : layer.a.mutable_data()) v = 0.2 * rng.normal();
    for (double& v : layer.b.mutable_data()) v = 0.2 * rng.normal();
  }
  BaseParams merged = merge_delta(base, delta);

  double worst = 0.0;
  Tensor cemb = embed_condition(cond, {false});
  for (int trial = 0; trial < 100; ++trial) {
    Tensor zt = sample_gaussian(rng, {dims.latent}, 0, 1);
    int t = 1 + trial % 50;
    Tensor a = predict_noise(base, &delta, zt, t, cemb);
    Tensor b = predict_noise(merged, nullptr, zt, t, cemb);
    for (std::size_t k = 0; k < dims.latent; ++k) worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]));
  }

  // effective update rank: every column of B*A must lie in span(B)
  double rank_resid = 0.0;
  for (const auto& layer : delta.layers) {
    std::size_t out = layer.b.shape()[0], r = layer.b.shape()[1], in = layer.a.shape()[1];
    std::vector<std::vector<double>> q;
    for (std::size_t k = 0; k < r; ++k) {
      std::vector<double> col(out);
      for (std::size_t o = 0; o < out; ++o) col[o] = layer.b.data()[o * r + k];
      for (const auto& prev : q) {
        double d = 0;
        for (std::size_t o = 0; o < out; ++o) d += col[o] * prev[o];
        for (std::size_t o = 0; o < out; ++o) col[o] -= d * prev[o];
      }
      double n = 0;
      for (double v : col) n += v * v;
      n = std::sqrt(n);
      if (n > 1e-12) {
        for (double& v : col) v /= n;
        q.push_back(col);
      }
    }
    for (std::size_t j = 0; j < in; ++j) {
      std::vector<double> dw(out, 0.0);
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t k = 0; k < r; ++k) dw[o] += layer.b.data()[o * r + k] * layer.a.data()[k * in + j];
      for (const auto& basis : q) {
        double d = 0;
        for (std::size_t o = 0; o < out; ++o) d += dw[o] * basis[o];
        for (std::size_t o = 0; o < out; ++o) dw[o] -= d * basis[o];
      }
      double resid = 0;
      for (double v : dw) resid += v * v;
      rank_resid = std::max(rank_resid, std::sqrt(resid));
    }
  }

  report(5, "adapter merge equivalence and rank bound", worst < 1e-10 && rank_resid < 1e-10 && delta.rank <= 4,
         "max merged-vs-unmerged gap " + fmt(worst) + " (limit 1e-10), rank-" + std::to_string(delta.rank) +
             " subspace residual " + fmt(rank_resid) + " (limit 1e-10)");
}

void criterion_6() {
  double vp_worst = 0.0;
  for (const NoiseSchedule& sched : {build_schedule(200, 5e-4, 0.1), build_schedule(200, 1e-4, 2e-2)})
    for (int t = 1; t <= sched.T; ++t) {
      double a = sched.alpha_at(t), b = sched.beta_at(t);
      vp_worst = std::max(vp_worst, std::abs(a * a + b * b - 1.0));
    }

  NoiseSchedule sched = build_schedule(200, 5e-4, 0.1);
  Rng rng(600);
  double var_worst = 0.0;
  for (int t : {1, 100, 200}) {
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      double zt = sched.alpha_at(t) * rng.normal() + sched.beta_at(t) * rng.normal();
      sum += zt;
      sumsq += zt * zt;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    var_worst = std::max(var_worst, std::abs(var - 1.0));
  }
  report(6, "variance-preserving schedule marginals", vp_worst < 1e-12 && var_worst < 0.05,
         "max |alpha^2+beta^2-1| = " + fmt(vp_worst) + " (limit 1e-12), max |Var(z_t)-1| = " + fmt(var_worst) +
             " over 1e5 samples (limit 0.05)");
}

struct StudyOutcome {
  double kl_db, kl_ours, kl_cp;
  double sim_db, sim_ours, sim_cp, sim_add;
  double elapsed;
};

StudyOutcome run_directional_study() {
  auto t0 = std::chrono::steady_clock::now();
  NoiseSchedule sched = build_schedule(200, 5e-4, 0.1);
  PretrainConfig pc;
  pc.steps = 20000;
  pc.batch = 16;
  StudyContext ctx = build_study_context(1, 256, 100, sched, pc);

  StudyConfig sc;
  sc.modes = {Mode::Dreambooth, Mode::Ours, Mode::CpOnly, Mode::AdditiveAblation};
  sc.subject_seeds = {7, 8, 9};
  sc.run_seeds = {11, 12, 13, 14, 15};
  sc.finetune.steps = 6000;
  std::vector<StudyRow> rows = run_study(ctx, sc);
  write_study_csv(rows, fs::temp_directory_path() / "consist_acceptance_study.csv");

  StudyOutcome o{};
  o.kl_db = median(collect(rows, Mode::Dreambooth, &StudyRow::kl));
  o.kl_ours = median(collect(rows, Mode::Ours, &StudyRow::kl));
  o.kl_cp = median(collect(rows, Mode::CpOnly, &StudyRow::kl));
  o.sim_db = median(collect(rows, Mode::Dreambooth, &StudyRow::sim_i));
  o.sim_ours = median(collect(rows, Mode::Ours, &StudyRow::sim_i));
  o.sim_cp = median(collect(rows, Mode::CpOnly, &StudyRow::sim_i));
  o.sim_add = median(collect(rows, Mode::AdditiveAblation, &StudyRow::sim_i));
  o.elapsed = seconds_since(t0);
  return o;
}

void criterion_10() {
  NoiseSchedule sched = build_schedule(50, 1e-3, 2e-2);
  Rng crng(1001);
  std::vector<Image> corpus = make_class_corpus(64, crng);
  LatentCodec codec(16, 16 * 16 * 3, 1002);
  codec.calibrate(corpus);
  std::vector<std::vector<double>> class_latents;
  for (const auto& img : corpus) class_latents.push_back(codec.encode(img));
  std::vector<std::vector<double>> subject_latents;
  for (const auto& img : make_subject_set(8, 4)) subject_latents.push_back(codec.encode(img));

  fs::path dir = fs::temp_directory_path() / "consist_acceptance_det";
  fs::create_directories(dir);

  bool all_equal = true;
  std::string first_base, first_delta, first_flog;
  for (int rep = 0; rep < 2; ++rep) {
    PretrainConfig pc;
    pc.steps = 200;
    pc.batch = 8;
    pc.seed = 1003;
    PretrainResult pr = pretrain_base(class_latents, sched, pc);
    BaseCheckpoint bc{pr.base, pr.cond, {}, codec.scale(), 1002, 50, 1e-3, 2e-2};
    save_base(bc, dir / "base.ckpt");

    FinetuneConfig fc;
    fc.mode = Mode::Ours;
    fc.steps = 300;
    fc.seed = 1004;
    FinetuneResult res = finetune(pr.base, pr.cond, subject_latents, class_latents, sched, fc);
    DeltaCheckpoint dc{res.delta, res.cond.subject_emb};
    save_delta(dc, dir / "delta.ckpt");
    write_training_log(res.log, dir / "train_log.csv");

    std::string base_bytes = slurp(dir / "base.ckpt");
    std::string delta_bytes = slurp(dir / "delta.ckpt");
    std::string flog_bytes = slurp(dir / "train_log.csv");
    if (rep == 0) {
      first_base = base_bytes;
      first_delta = delta_bytes;
      first_flog = flog_bytes;
    } else {
      all_equal = base_bytes == first_base && delta_bytes == first_delta && flog_bytes == first_flog;
    }
  }
  fs::remove_all(dir);
  report(10, "bit-identical checkpoints and CSV logs on re-run", all_equal,
         all_equal ? "base.ckpt, delta.ckpt, train_log.csv identical across reruns"
                   : "artifact bytes differ between reruns");
}

void criterion_11() {
  std::vector<double> p(4, 0.25);
  std::vector<double> q = {0.4, 0.2, 0.2, 0.2};
  const double oracle = 0.04985675617422344;  // 0.25 ln(.25/.4) + 0.75 ln(.25/.2)
  double got = kl_divergence(p, q);
  double self = kl_divergence(p, p);
  report(11, "KL arithmetic oracle", std::abs(got - oracle) < 1e-9 && self <= 1e-9,
         "|KL - oracle| = " + fmt(std::abs(got - oracle)) + " (limit 1e-9), KL(p||p) = " + fmt(self) +
             " (limit 1e-9)");
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();

  StudyOutcome o = run_directional_study();
  report(7, "diversity orderings: KL(ours) < KL(dreambooth), KL(cp-only) > KL(ours)",
         o.kl_ours < o.kl_db && o.kl_cp > o.kl_ours && o.elapsed < 1800.0,
         "medians: ours " + fmt(o.kl_ours) + ", dreambooth " + fmt(o.kl_db) + ", cp-only " + fmt(o.kl_cp) +
             "; grid " + fmt(o.elapsed) + " s (limit 1800 s)");
  report(8, "fidelity ordering: sim(cp-only) > sim(dreambooth)", o.sim_cp > o.sim_db,
         "medians: cp-only " + fmt(o.sim_cp) + ", dreambooth " + fmt(o.sim_db));
  report(9, "ablation ordering: sim(additive) < sim(ours)", o.sim_add < o.sim_ours,
         "medians: additive " + fmt(o.sim_add) + ", ours " + fmt(o.sim_ours));

  criterion_10();
  criterion_11();

  std::printf("%s: %d of 11 criteria failed\n", g_failures == 0 ? "ACCEPTED" : "REJECTED", g_failures);
  return g_failures == 0 ? 0 : 1;
}
