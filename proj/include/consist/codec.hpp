#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "consist/image.hpp"
#include "consist/rng.hpp"

namespace consist {

// Frozen linear autoencoder stand-in: an orthonormal projection from
// centered pixels to a low-dimensional latent, with a per-dimension scale
// calibrated so corpus latents have unit variance. Construction seeds a
// random orthonormal basis; calibrate() rotates it onto the corpus's top
// principal directions so reconstructions stay close. Lossy by design
// (latent_dim << pixel_dim) but exactly invertible on its own range.
class LatentCodec {
 public:
  LatentCodec(std::size_t latent_dim, std::size_t pixel_dim, std::uint64_t seed)
      : latent_dim_(latent_dim), pixel_dim_(pixel_dim), rows_(latent_dim, std::vector<double>(pixel_dim)),
        scale_(latent_dim, 1.0) {
    Rng rng(seed);
    // Gaussian rows, then modified Gram-Schmidt.
    for (auto& row : rows_)
      for (double& v : row) v = rng.normal();
    orthonormalize(rows_);
  }

  // Rebuild a codec from previously fitted state (e.g. a checkpoint).
  static LatentCodec from_state(std::vector<std::vector<double>> rows, std::vector<double> scale) {
    if (rows.empty() || rows[0].empty() || rows.size() != scale.size())
      throw std::invalid_argument("LatentCodec::from_state: inconsistent state");
    LatentCodec codec(rows.size(), rows[0].size(), 0);
    for (const auto& row : rows)
      if (row.size() != codec.pixel_dim_)
        throw std::invalid_argument("LatentCodec::from_state: ragged rows");
    codec.rows_ = std::move(rows);
    codec.scale_ = std::move(scale);
    return codec;
  }

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t pixel_dim() const { return pixel_dim_; }
  const std::vector<double>& scale() const { return scale_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  // Fit the basis to the corpus and set the per-dimension scale so corpus
  // latents come out with unit variance. The basis is rotated onto the top
  // principal directions of the 0.5-centered pixel second moment by
  // orthogonal iteration from the seeded start; the fixed iteration count
  // keeps results deterministic for a given (seed, corpus) pair.
  void calibrate(const std::vector<Image>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("LatentCodec::calibrate: empty corpus");
    std::vector<std::vector<double>> x;
    x.reserve(corpus.size());
    for (const auto& img : corpus) {
      if (img.pixel_dim() != pixel_dim_)
        throw std::invalid_argument("LatentCodec::calibrate: image pixel count mismatch");
      std::vector<double> c(pixel_dim_);
      for (std::size_t k = 0; k < pixel_dim_; ++k) c[k] = img.pixels[k] - 0.5;
      x.push_back(std::move(c));
    }

    constexpr int kIters = 60;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    for (int it = 0; it < kIters; ++it) {
      // w[d] = C * rows_[d] with C = (1/n) sum_i x_i x_i^T, without forming C.
      std::vector<std::vector<double>> w(latent_dim_, std::vector<double>(pixel_dim_, 0.0));
      for (const auto& xi : x) {
        for (std::size_t d = 0; d < latent_dim_; ++d) {
          double coef = dot(rows_[d], xi) * inv_n;
          for (std::size_t k = 0; k < pixel_dim_; ++k) w[d][k] += coef * xi[k];
        }
      }
      // Rank-deficient corpora (fewer images than latent dims) collapse the
      // trailing iterated rows; those keep their previous direction so the
      // basis stays full-rank and seed-deterministic.
      orthonormalize(w, &rows_);
      rows_ = std::move(w);
    }

    std::vector<std::vector<double>> raw;
    raw.reserve(corpus.size());
    for (const auto& img : corpus) raw.push_back(project(img));
    for (std::size_t d = 0; d < latent_dim_; ++d) {
      double m = 0.0;
      for (const auto& z : raw) m += z[d];
      m /= static_cast<double>(raw.size());
      double var = 0.0;
      for (const auto& z : raw) var += (z[d] - m) * (z[d] - m);
      var /= static_cast<double>(raw.size());
      scale_[d] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
  }

  std::vector<double> encode(const Image& img) const {
    img.validate();
    std::vector<double> z = project(img);
    for (std::size_t d = 0; d < latent_dim_; ++d) z[d] *= scale_[d];
    return z;
  }

  Image decode(const std::vector<double>& z) const {
    if (z.size() != latent_dim_) throw std::invalid_argument("LatentCodec::decode: wrong latent dimension");
    for (double v : z)
      if (!std::isfinite(v)) throw std::invalid_argument("LatentCodec::decode: non-finite latent");
    std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(pixel_dim_ / 3.0)));
    Image img(side, side);
    for (std::size_t k = 0; k < pixel_dim_; ++k) {
      double v = 0.5;
      for (std::size_t d = 0; d < latent_dim_; ++d) v += rows_[d][k] * (z[d] / scale_[d]);
      img.pixels[k] = std::min(1.0, std::max(0.0, v));
    }
    return img;
  }

 private:
  std::vector<double> project(const Image& img) const {
    if (img.pixel_dim() != pixel_dim_) throw std::invalid_argument("LatentCodec: image pixel count mismatch");
    std::vector<double> z(latent_dim_, 0.0);
    for (std::size_t d = 0; d < latent_dim_; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < pixel_dim_; ++k) s += rows_[d][k] * (img.pixels[k] - 0.5);
      z[d] = s;
    }
    return z;
  }

  // Modified Gram-Schmidt over rows, in place. A row that collapses is
  // replaced by its counterpart from `fallback` (when given) before giving up.
  static void orthonormalize(std::vector<std::vector<double>>& rows,
                             const std::vector<std::vector<double>>* fallback = nullptr) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int attempt = 0; attempt < 2; ++attempt) {
        for (std::size_t j = 0; j < i; ++j) {
          double d = dot(rows[i], rows[j]);
          for (std::size_t k = 0; k < rows[i].size(); ++k) rows[i][k] -= d * rows[j][k];
        }
        double n = std::sqrt(dot(rows[i], rows[i]));
        if (n >= 1e-12) {
          for (double& v : rows[i]) v /= n;
          break;
        }
        if (attempt == 1 || !fallback) throw std::runtime_error("LatentCodec: degenerate projection row");
        rows[i] = (*fallback)[i];
      }
    }
  }

  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  std::size_t latent_dim_;
  std::size_t pixel_dim_;
  std::vector<std::vector<double>> rows_;
  std::vector<double> scale_;
};

}  // namespace consist
