#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "consist/rng.hpp"
#include "consist/tensor.hpp"

namespace consist {

struct DenoiserDims {
  std::size_t latent = 16;
  std::size_t time_dim = 8;
  std::size_t cond_dim = 8;
  std::size_t hidden = 128;

  std::size_t input_dim() const { return latent + time_dim + cond_dim; }
};

// Sinusoidal features of the timestep; injective over {1..T} because the
// slowest frequency stays well inside one period.
inline Tensor time_embedding(int t, std::size_t dim) {
  std::vector<double> v(dim);
  std::size_t pairs = dim / 2;
  for (std::size_t k = 0; k < pairs; ++k) {
    double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(pairs));
    v[2 * k] = std::sin(t * freq * 1e-3 * 6.283185307179586);
    v[2 * k + 1] = std::cos(t * freq * 1e-3 * 6.283185307179586);
  }
  return Tensor::from({dim}, std::move(v), false);
}

// MLP denoiser trunk: input (z_t ++ time ++ cond) -> hidden -> hidden -> latent,
// tanh nonlinearity. Weight layout: w [out, in], applied as w * x + b.
struct BaseParams {
  DenoiserDims dims;
  Tensor w1, b1, w2, b2, w3, b3;

  static BaseParams init(const DenoiserDims& dims, Rng& rng, bool trainable) {
    BaseParams p;
    p.dims = dims;
    auto make = [&](std::size_t out, std::size_t in) {
      std::vector<double> v(out * in);
      double s = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& x : v) x = s * rng.normal();
      return Tensor::from({out, in}, std::move(v), trainable);
    };
    p.w1 = make(dims.hidden, dims.input_dim());
    p.b1 = Tensor::zeros({dims.hidden}, trainable);
    p.w2 = make(dims.hidden, dims.hidden);
    p.b2 = Tensor::zeros({dims.hidden}, trainable);
    p.w3 = make(dims.latent, dims.hidden);
    p.b3 = Tensor::zeros({dims.latent}, trainable);
    return p;
  }

  std::vector<Tensor> params() { return {w1, b1, w2, b2, w3, b3}; }
  std::vector<Tensor> weight_matrices() { return {w1, w2, w3}; }
  std::vector<Tensor> weight_matrices() const { return {w1, w2, w3}; }

  void freeze() {
    for (auto& t : params()) {
      t.set_requires_grad(false);
      t.zero_grad();  // drop stale training grads so frozen-use checks stay clean
    }
  }
};

// Token table: one frozen class row plus the trainable subject row. The
// subject prompt embeds as class + subject so the subject token refines,
// not replaces, the class concept.
struct ConditionTable {
  Tensor class_emb;    // trainable only during pretraining
  Tensor subject_emb;  // the new-token row, trainable during fine-tuning

  static ConditionTable init(std::size_t cond_dim, Rng& rng, bool trainable_class) {
    ConditionTable c;
    std::vector<double> v(cond_dim);
    for (double& x : v) x = 0.1 * rng.normal();
    c.class_emb = Tensor::from({cond_dim}, std::move(v), trainable_class);
    c.subject_emb = Tensor::zeros({cond_dim}, false);
    return c;
  }
};

struct ConditionToken {
  bool with_subject = false;  // false: generic class prompt; true: [V]+class
};

inline Tensor embed_condition(const ConditionTable& table, ConditionToken tok) {
  if (!tok.with_subject) return table.class_emb;
  return add(table.class_emb, table.subject_emb);
}

// Low-rank delta for one weight matrix: effective update scaling * b * a.
struct LoraLayer {
  Tensor a;  // [rank, in]
  Tensor b;  // [out, rank]
};

struct LoraDelta {
  std::vector<LoraLayer> layers;  // one per trunk weight matrix, in order
  std::size_t rank = 4;
  double scaling = 1.0;

  // b starts at zero so the delta is exactly inert at initialization;
  // a starts from a small Gaussian.
  static LoraDelta init(const BaseParams& base, std::size_t rank, double scaling, Rng& rng) {
    LoraDelta d;
    d.rank = rank;
    d.scaling = scaling;
    for (const auto& w : base.weight_matrices()) {
      std::size_t out = w.shape()[0], in = w.shape()[1];
      std::vector<double> av(rank * in);
      double s = 0.01 / std::sqrt(static_cast<double>(in));
      for (double& x : av) x = s * rng.normal();
      LoraLayer layer;
      layer.a = Tensor::from({rank, in}, std::move(av), true);
      layer.b = Tensor::zeros({out, rank}, true);
      d.layers.push_back(std::move(layer));
    }
    return d;
  }
};

namespace detail {

inline Tensor lora_matvec(const Tensor& w, const LoraLayer* layer, double scaling, const Tensor& x) {
  Tensor y = matmul(w, x);
  if (layer) y = add(y, scale(matmul(layer->b, matmul(layer->a, x)), scaling));
  return y;
}

}  // namespace detail

// f(z_t, t, cond): epsilon prediction. With delta == nullptr this is the
// frozen reference f_ref. Gradients can only flow into the delta and the
// condition embedding; base weights are frozen by their requires_grad flag.
inline Tensor predict_noise(const BaseParams& params, const LoraDelta* delta, const Tensor& z_t, int t,
                            const Tensor& cond_emb) {
  if (z_t.shape() != Shape{params.dims.latent})
    throw std::invalid_argument("predict_noise: z_t shape " + shape_str(z_t.shape()) + ", expected [" +
                                std::to_string(params.dims.latent) + "]");
  if (cond_emb.shape() != Shape{params.dims.cond_dim})
    throw std::invalid_argument("predict_noise: cond shape " + shape_str(cond_emb.shape()));
  if (delta && delta->layers.size() != 3)
    throw std::invalid_argument("predict_noise: delta layer count mismatch");

  Tensor x = concat(concat(z_t, time_embedding(t, params.dims.time_dim)), cond_emb);
  Tensor h1 = tanh_t(add(detail::lora_matvec(params.w1, delta ? &delta->layers[0] : nullptr,
                                             delta ? delta->scaling : 0.0, x),
                         params.b1));
  Tensor h2 = tanh_t(add(detail::lora_matvec(params.w2, delta ? &delta->layers[1] : nullptr,
                                             delta ? delta->scaling : 0.0, h1),
                         params.b2));
  return add(detail::lora_matvec(params.w3, delta ? &delta->layers[2] : nullptr,
                                 delta ? delta->scaling : 0.0, h2),
             params.b3);
}

// Raw-vector forward pass for sampling; no graph nodes.
inline std::vector<double> predict_noise_raw(const BaseParams& params, const LoraDelta* delta,
                                             const std::vector<double>& z_t, int t,
                                             const std::vector<double>& cond_emb) {
  const auto& dims = params.dims;
  std::vector<double> x;
  x.reserve(dims.input_dim());
  x.insert(x.end(), z_t.begin(), z_t.end());
  Tensor te = time_embedding(t, dims.time_dim);
  x.insert(x.end(), te.data().begin(), te.data().end());
  x.insert(x.end(), cond_emb.begin(), cond_emb.end());

  auto apply = [&](const Tensor& w, const Tensor& b, const LoraLayer* layer,
                   const std::vector<double>& in, bool act) {
    std::size_t out_n = w.shape()[0], in_n = w.shape()[1];
    std::vector<double> y(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double s = b.data()[i];
      for (std::size_t j = 0; j < in_n; ++j) s += w.data()[i * in_n + j] * in[j];
      y[i] = s;
    }
    if (layer) {
      std::size_t r = layer->a.shape()[0];
      std::vector<double> ax(r, 0.0);
      for (std::size_t k = 0; k < r; ++k)
        for (std::size_t j = 0; j < in_n; ++j) ax[k] += layer->a.data()[k * in_n + j] * in[j];
      for (std::size_t i = 0; i < out_n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < r; ++k) s += layer->b.data()[i * r + k] * ax[k];
        y[i] += delta->scaling * s;
      }
    }
    if (act)
      for (double& v : y) v = std::tanh(v);
    return y;
  };

  std::vector<double> h1 = apply(params.w1, params.b1, delta ? &delta->layers[0] : nullptr, x, true);
  std::vector<double> h2 = apply(params.w2, params.b2, delta ? &delta->layers[1] : nullptr, h1, true);
  return apply(params.w3, params.b3, delta ? &delta->layers[2] : nullptr, h2, false);
}

// W' = W + scaling * B * A, everything else copied. The merged model with
// no delta matches the unmerged (base, delta) forward pass.
inline BaseParams merge_delta(const BaseParams& base, const LoraDelta& delta) {
  if (delta.layers.size() != 3) throw std::invalid_argument("merge_delta: delta layer count mismatch");
  BaseParams merged = base;
  auto merge_one = [&](const Tensor& w, const LoraLayer& layer) {
    std::size_t out = w.shape()[0], in = w.shape()[1];
    std::size_t r = layer.a.shape()[0];
    if (layer.a.shape()[1] != in || layer.b.shape()[0] != out || layer.b.shape()[1] != r)
      throw std::invalid_argument("merge_delta: shape mismatch for weight " + shape_str(w.shape()));
    std::vector<double> v(w.data());
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t k = 0; k < r; ++k) {
        double bk = delta.scaling * layer.b.data()[i * r + k];
        for (std::size_t j = 0; j < in; ++j) v[i * in + j] += bk * layer.a.data()[k * in + j];
      }
    return Tensor::from({out, in}, std::move(v), false);
  };
  merged.w1 = merge_one(base.w1, delta.layers[0]);
  merged.w2 = merge_one(base.w2, delta.layers[1]);
  merged.w3 = merge_one(base.w3, delta.layers[2]);
  merged.b1 = base.b1.detach();
  merged.b2 = base.b2.detach();
  merged.b3 = base.b3.detach();
  return merged;
}

// Exactly the LoRA factors plus the subject-token row. Base weights are
// never trainable during fine-tuning.
inline std::vector<Tensor> trainable_leaves(LoraDelta& delta, ConditionTable& cond) {
  std::vector<Tensor> out;
  for (auto& layer : delta.layers) {
    out.push_back(layer.a);
    out.push_back(layer.b);
  }
  out.push_back(cond.subject_emb);
  return out;
}

}  // namespace consist
