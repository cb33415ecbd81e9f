#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "consist/tensor.hpp"

namespace consist {

// Variance-preserving schedule: alpha[t]^2 + beta[t]^2 = 1 for every t,
// alpha non-increasing. Indexing is 1-based in the API, t in {1..T}.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;      // alpha[t-1] = sqrt(prod_{s<=t} (1 - b_s))
  std::vector<double> beta;       // beta[t-1]  = sqrt(1 - alpha^2)
  std::vector<double> step_beta;  // b_t, linearly spaced

  double alpha_at(int t) const { check_t(t); return alpha[static_cast<std::size_t>(t - 1)]; }
  double beta_at(int t) const { check_t(t); return beta[static_cast<std::size_t>(t - 1)]; }
  double step_beta_at(int t) const { check_t(t); return step_beta[static_cast<std::size_t>(t - 1)]; }

  void check_t(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("NoiseSchedule: t=" + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
  }
};

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha.resize(static_cast<std::size_t>(T));
  s.beta.resize(static_cast<std::size_t>(T));
  s.step_beta.resize(static_cast<std::size_t>(T));
  double cum = 1.0;
  for (int t = 0; t < T; ++t) {
    double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / static_cast<double>(T - 1);
    s.step_beta[static_cast<std::size_t>(t)] = b;
    cum *= 1.0 - b;
    double a = std::sqrt(cum);
    s.alpha[static_cast<std::size_t>(t)] = a;
    s.beta[static_cast<std::size_t>(t)] = std::sqrt(1.0 - a * a);
  }
  return s;
}

struct DiffusedLatent {
  Tensor z_t;
  int t = 0;
  Tensor eps;  // the exact noise tensor used, shared with callers on purpose
};

// z_t = alpha_t * z + beta_t * eps. Differentiable w.r.t. z; eps is a
// constant input (sampled, never trainable).
inline DiffusedLatent forward_diffuse(const Tensor& z, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_t(t);
  if (z.shape() != eps.shape())
    throw std::invalid_argument("forward_diffuse: z " + shape_str(z.shape()) + " vs eps " + shape_str(eps.shape()));
  DiffusedLatent out;
  out.t = t;
  out.eps = eps;
  out.z_t = add(scale(z, sched.alpha_at(t)), scale(eps, sched.beta_at(t)));
  return out;
}

}  // namespace consist
