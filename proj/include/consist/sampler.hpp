#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "consist/rng.hpp"
#include "consist/schedule.hpp"
#include "consist/tensor.hpp"

namespace consist {

using DenoiseFn = std::function<std::vector<double>(const std::vector<double>& z_t, int t)>;

// Ancestral DDPM reverse process from epsilon predictions, fixed posterior
// variance. Works on raw vectors; no graph is built during sampling.
inline std::vector<double> sample_one(const DenoiseFn& model, const NoiseSchedule& sched, Rng& rng,
                                      std::size_t dim) {
  std::vector<double> z(dim);
  for (double& v : z) v = rng.normal();
  for (int t = sched.T; t >= 1; --t) {
    std::vector<double> eps_hat = model(z, t);
    double b = sched.step_beta_at(t);
    double beta_t = sched.beta_at(t);
    double inv_sqrt = 1.0 / std::sqrt(1.0 - b);
    double coef = b / beta_t;
    double abar_t = sched.alpha_at(t) * sched.alpha_at(t);
    double abar_prev = t > 1 ? sched.alpha_at(t - 1) * sched.alpha_at(t - 1) : 1.0;
    double post_var = b * (1.0 - abar_prev) / (1.0 - abar_t);
    double post_std = t > 1 ? std::sqrt(post_var) : 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double m = inv_sqrt * (z[i] - coef * eps_hat[i]);
      z[i] = m + (t > 1 ? post_std * rng.normal() : 0.0);
    }
  }
  return z;
}

inline std::vector<std::vector<double>> sample(const DenoiseFn& model, const NoiseSchedule& sched, Rng& rng,
                                               int n, std::size_t dim) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(sample_one(model, sched, rng, dim));
  return out;
}

}  // namespace consist
