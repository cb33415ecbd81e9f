#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "consist/tensor.hpp"

namespace consist {

// Adam with bias correction, standard defaults.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> leaves, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : leaves_(std::move(leaves)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& t : leaves_) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  // Applies one update from the gradients currently held by the leaves.
  // Leaves without a populated gradient are treated as zero-gradient.
  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < leaves_.size(); ++k) {
      Tensor& leaf = leaves_[k];
      if (!leaf.has_grad()) continue;
      const auto& g = leaf.grad();
      if (g.size() != leaf.size()) throw std::invalid_argument("Adam: gradient size mismatch");
      auto& data = leaf.mutable_data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
        double mhat = m_[k][i] / bc1;
        double vhat = v_[k][i] / bc2;
        data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& t : leaves_) t.zero_grad();
  }

  const std::vector<Tensor>& leaves() const { return leaves_; }

 private:
  std::vector<Tensor> leaves_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace consist
