#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "consist/rng.hpp"

namespace consist {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pushes this node's grad to parents

  void accumulate(const std::vector<double>& g) {
    if (!requires_grad) return;
    if (grad.empty()) grad.assign(value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

}  // namespace detail

// Dense float64 tensor participating in a reverse-mode autodiff graph.
// Value semantics on the handle; the node is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match data length " +
                                  std::to_string(data.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& mutable_data() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (node_->grad.empty())
      throw std::runtime_error("Tensor: gradient not populated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  double item() const {
    if (size() != 1) throw std::runtime_error("Tensor::item: not a scalar, shape " + shape_str(shape()));
    return node_->value[0];
  }

  double at(std::size_t i) const { return node_->value[i]; }

  // Same values, no graph edge, never differentiable.
  Tensor detach() const {
    return Tensor::from(node_->shape, node_->value, false);
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backprop);
};

inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) {
    rg = rg || p.requires_grad();
    n->parents.push_back(p.node_ptr());
  }
  n->requires_grad = rg;
  if (rg) n->backprop = std::move(backprop);
  return Tensor(std::move(n));
}

namespace detail {

enum class Broadcast { None, AScalar, BScalar, BRow, ARow };

// Supported elementwise pairings: equal shapes, scalar against anything,
// and [m,n] against [n] (bias-style row broadcast).
inline Broadcast classify_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::None;
  if (shape_numel(b) == 1) return Broadcast::BScalar;
  if (shape_numel(a) == 1) return Broadcast::AScalar;
  if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return Broadcast::BRow;
  if (b.size() == 2 && a.size() == 1 && b[1] == a[0]) return Broadcast::ARow;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline std::vector<double> reduce_to_row(const std::vector<double>& g, std::size_t rows, std::size_t cols) {
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += g[r * cols + c];
  return out;
}

inline double reduce_sum(const std::vector<double>& g) {
  double s = 0.0;
  for (double v : g) s += v;
  return s;
}

template <class Fwd, class DA, class DB>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  Broadcast bc = classify_broadcast(a.shape(), b.shape(), name);
  const Shape& out_shape = (bc == Broadcast::AScalar || bc == Broadcast::ARow) ? b.shape() : a.shape();
  std::size_t n = shape_numel(out_shape);
  std::size_t cols = (bc == Broadcast::BRow) ? b.size() : (bc == Broadcast::ARow ? a.size() : 0);

  auto a_idx = [bc, cols](std::size_t i) {
    switch (bc) {
      case Broadcast::AScalar: return std::size_t{0};
      case Broadcast::ARow: return i % cols;
      default: return i;
    }
  };
  auto b_idx = [bc, cols](std::size_t i) {
    switch (bc) {
      case Broadcast::BScalar: return std::size_t{0};
      case Broadcast::BRow: return i % cols;
      default: return i;
    }
  };

  std::vector<double> out(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_idx(i)], bv[b_idx(i)]);

  return make_op(out_shape, std::move(out), {a, b},
                 [bc, cols, a_idx, b_idx, da, db](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   std::size_t n = self.value.size();
                   if (pa.requires_grad) {
                     std::vector<double> ga(pa.value.size(), 0.0);
                     for (std::size_t i = 0; i < n; ++i)
                       ga[a_idx(i)] += self.grad[i] * da(pa.value[a_idx(i)], pb.value[b_idx(i)]);
                     pa.accumulate(ga);
                   }
                   if (pb.requires_grad) {
                     std::vector<double> gb(pb.value.size(), 0.0);
                     for (std::size_t i = 0; i < n; ++i)
                       gb[b_idx(i)] += self.grad[i] * db(pa.value[a_idx(i)], pb.value[b_idx(i)]);
                     pb.accumulate(gb);
                   }
                   (void)bc;
                   (void)cols;
                 });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  return make_op(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    std::vector<double> g(self.grad);
    for (double& v : g) v *= c;
    p.accumulate(g);
  });
}

// matmul: [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("matmul: lhs must be 2-D, got " + shape_str(a.shape()));
  std::size_t m = a.shape()[0], k = a.shape()[1];
  bool vec = b.shape().size() == 1;
  std::size_t kb = vec ? b.shape()[0] : b.shape()[0];
  std::size_t n = vec ? 1 : b.shape()[1];
  if (b.shape().size() > 2 || kb != k)
    throw std::invalid_argument("matmul: inner dims mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));

  std::vector<double> out(m * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double apv = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += apv * bv[p * n + j];
    }

  Shape out_shape = vec ? Shape{m} : Shape{m, n};
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [m, k, n](detail::Node& self) {
                   detail::Node& pa = *self.parents[0];
                   detail::Node& pb = *self.parents[1];
                   const auto& g = self.grad;
                   if (pa.requires_grad) {
                     std::vector<double> ga(m * k, 0.0);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         double gij = g[i * n + j];
                         for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * pb.value[p * n + j];
                       }
                     pa.accumulate(ga);
                   }
                   if (pb.requires_grad) {
                     std::vector<double> gb(k * n, 0.0);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         double aip = pa.value[i * k + p];
                         for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                       }
                     pb.accumulate(gb);
                   }
                 });
}

inline Tensor sum(const Tensor& a) {
  double s = detail::reduce_sum(a.data());
  return make_op({1}, {s}, {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.accumulate(std::vector<double>(p.value.size(), self.grad[0]));
  });
}

inline Tensor mean(const Tensor& a) {
  std::size_t n = a.size();
  double s = detail::reduce_sum(a.data()) / static_cast<double>(n);
  return make_op({1}, {s}, {a}, [n](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.accumulate(std::vector<double>(p.value.size(), self.grad[0] / static_cast<double>(n)));
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= v;
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * p.value[i] * self.grad[i];
    p.accumulate(g);
  });
}

inline Tensor tanh_t(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = std::tanh(v);
  return make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (1.0 - self.value[i] * self.value[i]) * self.grad[i];
    p.accumulate(g);
  });
}

// Concatenate 1-D tensors.
inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || b.shape().size() != 1)
    throw std::invalid_argument("concat: expects 1-D tensors, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  std::size_t na = a.size(), nb = b.size();
  std::vector<double> out;
  out.reserve(na + nb);
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return make_op({na + nb}, std::move(out), {a, b}, [na, nb](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.requires_grad)
      pa.accumulate(std::vector<double>(self.grad.begin(), self.grad.begin() + static_cast<long>(na)));
    if (pb.requires_grad)
      pb.accumulate(std::vector<double>(self.grad.begin() + static_cast<long>(na), self.grad.end()));
    (void)nb;
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  return make_op(std::move(shape), std::vector<double>(a.data()), {a}, [](detail::Node& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

// Select rows of a 2-D tensor (or elements of a 1-D tensor).
inline Tensor index_select(const Tensor& a, const std::vector<std::size_t>& idx) {
  std::size_t rows = a.shape()[0];
  std::size_t cols = a.shape().size() == 2 ? a.shape()[1] : 1;
  for (std::size_t i : idx)
    if (i >= rows) throw std::invalid_argument("index_select: index " + std::to_string(i) + " out of range");
  std::vector<double> out(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a.data()[idx[r] * cols + c];
  Shape shape = a.shape().size() == 2 ? Shape{idx.size(), cols} : Shape{idx.size()};
  return make_op(std::move(shape), std::move(out), {a}, [idx, cols](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    std::vector<double> g(p.value.size(), 0.0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) g[idx[r] * cols + c] += self.grad[r * cols + c];
    p.accumulate(g);
  });
}

// Mean over all elements of (a - b)^2; the reduction used by every loss.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(square(sub(a, b)));
}

inline Tensor sample_gaussian(Rng& rng, Shape shape, double mean_v, double std_v) {
  if (std_v < 0.0) throw std::invalid_argument("sample_gaussian: negative std");
  std::vector<double> out(shape_numel(shape));
  for (double& v : out) v = mean_v + std_v * rng.normal();
  return Tensor::from(std::move(shape), std::move(out), false);
}

// Reverse-mode sweep from a scalar loss. Repeated calls accumulate.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Topological order by iterative DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      detail::Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->accumulate({1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace consist
