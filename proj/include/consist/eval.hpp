#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "consist/codec.hpp"
#include "consist/image.hpp"
#include "consist/rng.hpp"

namespace consist {

// Frozen random-projection feature extractor standing in for a pretrained
// image/text encoder. Two embedder seeds emulate having two independent
// scorers. Absolute values are not comparable to any pretrained encoder;
// only orderings between methods are meaningful.
class Embedder {
 public:
  Embedder(std::uint64_t seed, std::size_t pixel_dim, std::size_t cond_dim, std::size_t feat_dim = 32)
      : feat_dim_(feat_dim), pixel_dim_(pixel_dim), cond_dim_(cond_dim) {
    Rng rng(seed);
    img_proj_.assign(feat_dim * pixel_dim, 0.0);
    for (double& v : img_proj_) v = rng.normal() / std::sqrt(static_cast<double>(pixel_dim));
    tok_proj_.assign(feat_dim * cond_dim, 0.0);
    for (double& v : tok_proj_) v = rng.normal() / std::sqrt(static_cast<double>(cond_dim));
  }

  std::size_t feat_dim() const { return feat_dim_; }

  std::vector<double> embed_image(const Image& img) const {
    if (img.pixel_dim() != pixel_dim_) throw std::invalid_argument("Embedder: image size mismatch");
    std::vector<double> f(feat_dim_, 0.0);
    for (std::size_t d = 0; d < feat_dim_; ++d)
      for (std::size_t k = 0; k < pixel_dim_; ++k) f[d] += img_proj_[d * pixel_dim_ + k] * (img.pixels[k] - 0.5);
    normalize(f);
    return f;
  }

  std::vector<double> embed_token(const std::vector<double>& cond_emb) const {
    if (cond_emb.size() != cond_dim_) throw std::invalid_argument("Embedder: token embedding size mismatch");
    std::vector<double> f(feat_dim_, 0.0);
    for (std::size_t d = 0; d < feat_dim_; ++d)
      for (std::size_t k = 0; k < cond_dim_; ++k) f[d] += tok_proj_[d * cond_dim_ + k] * cond_emb[k];
    normalize(f);
    return f;
  }

 private:
  static void normalize(std::vector<double>& f) {
    double n = 0.0;
    for (double v : f) n += v * v;
    n = std::sqrt(n);
    if (n < 1e-300) n = 1.0;
    for (double& v : f) v /= n;
  }

  std::size_t feat_dim_, pixel_dim_, cond_dim_;
  std::vector<double> img_proj_, tok_proj_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double den = std::sqrt(na) * std::sqrt(nb);
  return den > 0.0 ? d / den : 0.0;
}

// Mean pairwise cosine similarity between the embeddings of two image sets.
inline double score_image_similarity(const std::vector<Image>& generated, const std::vector<Image>& reference,
                                     const Embedder& emb) {
  if (generated.empty() || reference.empty())
    throw std::invalid_argument("score_image_similarity: empty image set");
  std::vector<std::vector<double>> gf, rf;
  for (const auto& g : generated) gf.push_back(emb.embed_image(g));
  for (const auto& r : reference) rf.push_back(emb.embed_image(r));
  double s = 0.0;
  for (const auto& g : gf)
    for (const auto& r : rf) s += cosine(g, r);
  return s / static_cast<double>(gf.size() * rf.size());
}

// Mean cosine similarity between a prompt-token feature and image features.
inline double score_prompt_similarity(const std::vector<Image>& generated, const std::vector<double>& cond_emb,
                                      const Embedder& emb) {
  if (generated.empty()) throw std::invalid_argument("score_prompt_similarity: empty image set");
  std::vector<double> tf = emb.embed_token(cond_emb);
  double s = 0.0;
  for (const auto& g : generated) s += cosine(tf, emb.embed_image(g));
  return s / static_cast<double>(generated.size());
}

struct HistogramSpec {
  std::size_t bins = 64;
  double lo = -4.0;
  double hi = 4.0;
  double smoothing = 1e-8;  // added to empty bins before normalization
};

// Pooled-scalar histogram over all latent entries, clamped to [lo, hi],
// smoothed and normalized to a density.
inline std::vector<double> pooled_histogram(const std::vector<std::vector<double>>& latents,
                                            const HistogramSpec& spec) {
  if (latents.empty()) throw std::invalid_argument("pooled_histogram: empty latent set");
  std::vector<double> h(spec.bins, 0.0);
  double width = (spec.hi - spec.lo) / static_cast<double>(spec.bins);
  for (const auto& z : latents)
    for (double v : z) {
      double c = std::min(spec.hi, std::max(spec.lo, v));
      std::size_t b = std::min(spec.bins - 1, static_cast<std::size_t>((c - spec.lo) / width));
      h[b] += 1.0;
    }
  double total = 0.0;
  for (double& v : h) {
    v += spec.smoothing;
    total += v;
  }
  for (double& v : h) v /= total;
  return h;
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

// KL between the pooled latent-value distributions of generated and prior
// images, both re-encoded through the frozen codec.
inline double latent_kl(const std::vector<Image>& generated, const std::vector<Image>& priors,
                        const LatentCodec& codec, const HistogramSpec& spec = {}) {
  if (generated.empty() || priors.empty()) throw std::invalid_argument("latent_kl: empty image set");
  auto enc = [&](const std::vector<Image>& imgs) {
    std::vector<std::vector<double>> zs;
    for (const auto& img : imgs) zs.push_back(codec.encode(img));
    return zs;
  };
  std::vector<double> p = pooled_histogram(enc(generated), spec);
  std::vector<double> q = pooled_histogram(enc(priors), spec);
  return kl_divergence(p, q);
}

}  // namespace consist
