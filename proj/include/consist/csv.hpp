#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "consist/kv_config.hpp"
#include "consist/objectives.hpp"

namespace consist {

// Training-log CSV: step, t values (semicolon-joined), then the loss parts.
inline void write_training_log(const std::vector<LossReport>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_training_log: cannot open " + path.string());
  f << "step,t_values,l_s,l_prior,l_cp,l_cs,total\n";
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    f << i << ",";
    for (std::size_t j = 0; j < r.timesteps.size(); ++j) {
      if (j) f << ";";
      f << r.timesteps[j];
    }
    f << "," << fmt_double(r.l_s) << "," << fmt_double(r.l_prior) << "," << fmt_double(r.l_cp) << ","
      << fmt_double(r.l_cs) << "," << fmt_double(r.total) << "\n";
  }
}

// Histogram dump: two columns, bin center and density.
inline void write_histogram(const std::vector<double>& density, double lo, double hi,
                            const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_histogram: cannot open " + path.string());
  double width = (hi - lo) / static_cast<double>(density.size());
  for (std::size_t i = 0; i < density.size(); ++i)
    f << fmt_double(lo + (i + 0.5) * width) << " " << fmt_double(density[i]) << "\n";
}

}  // namespace consist
