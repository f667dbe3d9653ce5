//
// Project ChemCL - Copyright 2026 ChemCL Developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef CHEMCL_TENSOR_HPP_
#define CHEMCL_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "chemcl/error.hpp"

namespace chemcl {

namespace detail {

inline std::string shape_str(const std::vector<int> &s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// One node of the computation record. A tensor produced by an op holds its
/// parents and a closure that pushes the node's gradient into them; leaf
/// tensors (constants, parameters) have neither.
struct TapeNode {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily, kept on trainable leaves
  bool requires_grad = false;
  bool trainable = false;
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void(TapeNode &)> backprop;

  std::size_t size() const { return values.size(); }

  void accumulate(std::span<const double> g) {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  // Long op chains would otherwise recurse through shared_ptr destructors.
  ~TapeNode() {
    std::vector<std::shared_ptr<TapeNode>> stack(std::move(parents));
    while (!stack.empty()) {
      std::shared_ptr<TapeNode> n = std::move(stack.back());
      stack.pop_back();
      if (n && n.use_count() == 1) {
        for (auto &p : n->parents) stack.push_back(std::move(p));
        n->parents.clear();
      }
    }
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

/// Scope guard that suspends recording; used on inference paths.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense real tensor of rank 0..2, row-major, 64-bit values. Copies share
/// storage (handle semantics); ops return fresh nodes. When any input
/// requires gradients and recording is enabled, the op is appended to the
/// computation record consumed by backward().
class Tensor {
 public:
  Tensor() : node_(nullptr) {}

  static Tensor scalar(double v) {
    auto n = std::make_shared<detail::TapeNode>();
    n->shape = {};
    n->values = {v};
    return Tensor(std::move(n));
  }

  static Tensor zeros(std::vector<int> shape) {
    return full(std::move(shape), 0.0);
  }

  static Tensor full(std::vector<int> shape, double v) {
    auto n = std::make_shared<detail::TapeNode>();
    std::size_t sz = 1;
    for (int d : shape) sz *= static_cast<std::size_t>(d);
    n->shape = std::move(shape);
    n->values.assign(sz, v);
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<int> shape, std::vector<double> values) {
    std::size_t sz = 1;
    for (int d : shape) sz *= static_cast<std::size_t>(d);
    if (sz != values.size())
      throw Error(errc::shape_mismatch,
                  "from: " + std::to_string(values.size()) +
                      " values for shape " + detail::shape_str(shape));
    auto n = std::make_shared<detail::TapeNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    return Tensor(std::move(n));
  }

  /// Trainable leaf.
  static Tensor parameter(std::vector<int> shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->trainable = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int> &shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  std::vector<double> &mutable_values() { return node_->values; }

  double value() const {
    if (size() != 1)
      throw Error(errc::non_scalar_loss,
                  "value(): tensor has " + std::to_string(size()) +
                      " elements");
    return node_->values[0];
  }

  double at(std::size_t i) const { return node_->values[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->values[r * static_cast<std::size_t>(node_->shape[1]) + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool trainable() const { return node_->trainable; }
  bool has_grad() const { return node_->grad.size() == node_->values.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  detail::TapeNode *node() const { return node_.get(); }
  const std::shared_ptr<detail::TapeNode> &node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::TapeNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TapeNode> node_;
};

namespace detail {

inline bool same_shape(const Tensor &a, const Tensor &b) {
  return a.shape() == b.shape();
}

inline void require_same_shape(const Tensor &a, const Tensor &b,
                               const char *op) {
  if (!same_shape(a, b))
    throw Error(errc::shape_mismatch, std::string(op) + ": " +
                                          shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
}

/// Builds the result node, wiring parents and the backprop closure only when
/// recording applies.
inline Tensor make_op(std::vector<int> shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(TapeNode &)> backprop) {
  auto n = std::make_shared<TapeNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool record = grad_enabled();
  bool any_grad = false;
  for (const Tensor &t : inputs) any_grad = any_grad || t.requires_grad();
  if (record && any_grad) {
    n->requires_grad = true;
    for (Tensor &t : inputs) n->parents.push_back(t.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor &a, const Tensor &b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto *an = a.node();
  auto *bn = b.node();
  return detail::make_op(a.shape(), std::move(out), {a, b},
                         [an, bn](detail::TapeNode &n) {
                           if (an->requires_grad) an->accumulate(n.grad);
                           if (bn->requires_grad) bn->accumulate(n.grad);
                         });
}

inline Tensor negate(const Tensor &a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -a.at(i);
  auto *an = a.node();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = -n.grad[i];
                           an->accumulate(g);
                         });
}

inline Tensor sub(const Tensor &a, const Tensor &b) {
  return add(a, negate(b));
}

/// Multiply by a compile-time constant; the constant takes no gradient.
inline Tensor scale(const Tensor &a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.at(i);
  auto *an = a.node();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an, c](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = c * n.grad[i];
                           an->accumulate(g);
                         });
}

/// Elementwise product. Also accepts a rank-0 first operand broadcast over
/// the second, which is how per-edge attention scalars weight messages.
inline Tensor hadamard(const Tensor &a, const Tensor &b) {
  if (a.rank() == 0 && b.rank() != 0) {
    double s = a.at(0);
    std::vector<double> out(b.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * b.at(i);
    auto *an = a.node();
    auto *bn = b.node();
    return detail::make_op(
        b.shape(), std::move(out), {a, b}, [an, bn, s](detail::TapeNode &n) {
          if (an->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n.grad.size(); ++i)
              acc += n.grad[i] * bn->values[i];
            an->accumulate(std::vector<double>{acc});
          }
          if (bn->requires_grad) {
            std::vector<double> g(n.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = s * n.grad[i];
            bn->accumulate(g);
          }
        });
  }
  detail::require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto *an = a.node();
  auto *bn = b.node();
  return detail::make_op(
      a.shape(), std::move(out), {a, b}, [an, bn](detail::TapeNode &n) {
        if (an->requires_grad) {
          std::vector<double> g(n.grad.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = n.grad[i] * bn->values[i];
          an->accumulate(g);
        }
        if (bn->requires_grad) {
          std::vector<double> g(n.grad.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = n.grad[i] * an->values[i];
          bn->accumulate(g);
        }
      });
}

/// matmul covers (m,k)x(k,n) -> (m,n), (m,k)x(k) -> (m) and (k)x(k) -> scalar.
inline Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() == 1 && b.rank() == 1) {
    if (a.shape()[0] != b.shape()[0])
      throw Error(errc::shape_mismatch,
                  "matmul(dot): " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i) * b.at(i);
    auto *an = a.node();
    auto *bn = b.node();
    return detail::make_op(
        {}, {acc}, {a, b}, [an, bn](detail::TapeNode &n) {
          double g = n.grad[0];
          if (an->requires_grad) {
            std::vector<double> ga(an->values.size());
            for (std::size_t i = 0; i < ga.size(); ++i)
              ga[i] = g * bn->values[i];
            an->accumulate(ga);
          }
          if (bn->requires_grad) {
            std::vector<double> gb(bn->values.size());
            for (std::size_t i = 0; i < gb.size(); ++i)
              gb[i] = g * an->values[i];
            bn->accumulate(gb);
          }
        });
  }
  if (a.rank() == 2 && b.rank() == 1) {
    int m = a.shape()[0], k = a.shape()[1];
    if (k != b.shape()[0])
      throw Error(errc::shape_mismatch,
                  "matmul: " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < k; ++j)
        acc += a.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
               b.at(static_cast<std::size_t>(j));
      out[static_cast<std::size_t>(i)] = acc;
    }
    auto *an = a.node();
    auto *bn = b.node();
    return detail::make_op(
        {m}, std::move(out), {a, b}, [an, bn, m, k](detail::TapeNode &n) {
          if (an->requires_grad) {
            std::vector<double> ga(an->values.size(), 0.0);
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < k; ++j)
                ga[static_cast<std::size_t>(i * k + j)] =
                    n.grad[static_cast<std::size_t>(i)] *
                    bn->values[static_cast<std::size_t>(j)];
            an->accumulate(ga);
          }
          if (bn->requires_grad) {
            std::vector<double> gb(bn->values.size(), 0.0);
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < k; ++j)
                gb[static_cast<std::size_t>(j)] +=
                    n.grad[static_cast<std::size_t>(i)] *
                    an->values[static_cast<std::size_t>(i * k + j)];
            bn->accumulate(gb);
          }
        });
  }
  if (a.rank() == 2 && b.rank() == 2) {
    int m = a.shape()[0], k = a.shape()[1];
    int k2 = b.shape()[0], n_cols = b.shape()[1];
    if (k != k2)
      throw Error(errc::shape_mismatch,
                  "matmul: " + detail::shape_str(a.shape()) + " vs " +
                      detail::shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) *
                                static_cast<std::size_t>(n_cols),
                            0.0);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double av = a.at(static_cast<std::size_t>(i), static_cast<std::size_t>(p));
        for (int j = 0; j < n_cols; ++j)
          out[static_cast<std::size_t>(i * n_cols + j)] +=
              av * b.at(static_cast<std::size_t>(p), static_cast<std::size_t>(j));
      }
    auto *an = a.node();
    auto *bn = b.node();
    return detail::make_op(
        {m, n_cols}, std::move(out), {a, b},
        [an, bn, m, k, n_cols](detail::TapeNode &n) {
          if (an->requires_grad) {
            std::vector<double> ga(an->values.size(), 0.0);
            for (int i = 0; i < m; ++i)
              for (int p = 0; p < k; ++p) {
                double acc = 0.0;
                for (int j = 0; j < n_cols; ++j)
                  acc += n.grad[static_cast<std::size_t>(i * n_cols + j)] *
                         bn->values[static_cast<std::size_t>(p * n_cols + j)];
                ga[static_cast<std::size_t>(i * k + p)] = acc;
              }
            an->accumulate(ga);
          }
          if (bn->requires_grad) {
            std::vector<double> gb(bn->values.size(), 0.0);
            for (int p = 0; p < k; ++p)
              for (int j = 0; j < n_cols; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i)
                  acc += an->values[static_cast<std::size_t>(i * k + p)] *
                         n.grad[static_cast<std::size_t>(i * n_cols + j)];
                gb[static_cast<std::size_t>(p * n_cols + j)] = acc;
              }
            bn->accumulate(gb);
          }
        });
  }
  throw Error(errc::shape_mismatch,
              "matmul: unsupported ranks " + detail::shape_str(a.shape()) +
                  " vs " + detail::shape_str(b.shape()));
}

inline Tensor transpose(const Tensor &a) {
  if (a.rank() != 2)
    throw Error(errc::shape_mismatch,
                "transpose: rank-2 required, got " +
                    detail::shape_str(a.shape()));
  int m = a.shape()[0], k = a.shape()[1];
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(j * m + i)] =
          a.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  auto *an = a.node();
  return detail::make_op(
      {k, m}, std::move(out), {a}, [an, m, k](detail::TapeNode &n) {
        std::vector<double> g(an->values.size());
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j)
            g[static_cast<std::size_t>(i * k + j)] =
                n.grad[static_cast<std::size_t>(j * m + i)];
        an->accumulate(g);
      });
}

/// Metadata-only shape change; values pass through.
inline Tensor reshape(const Tensor &a, std::vector<int> shape) {
  std::size_t sz = 1;
  for (int d : shape) sz *= static_cast<std::size_t>(d);
  if (sz != a.size())
    throw Error(errc::shape_mismatch,
                "reshape: " + detail::shape_str(a.shape()) + " to " +
                    detail::shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  auto *an = a.node();
  return detail::make_op(std::move(shape), std::move(out), {a},
                         [an](detail::TapeNode &n) { an->accumulate(n.grad); });
}

/// Concatenates rank-0/rank-1 tensors into one rank-1 tensor.
inline Tensor concat(const std::vector<Tensor> &parts) {
  if (parts.empty()) throw Error(errc::shape_mismatch, "concat: empty input");
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const Tensor &t : parts) {
    if (t.rank() > 1)
      throw Error(errc::shape_mismatch,
                  "concat: rank-0/1 parts required, got " +
                      detail::shape_str(t.shape()));
    offsets.push_back(out.size());
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  std::vector<detail::TapeNode *> nodes;
  for (const Tensor &t : parts) nodes.push_back(t.node());
  int total = static_cast<int>(out.size());
  return detail::make_op(
      {total}, std::move(out), parts,
      [nodes, offsets](detail::TapeNode &n) {
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          if (!nodes[p]->requires_grad) continue;
          std::vector<double> g(nodes[p]->values.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = n.grad[offsets[p] + i];
          nodes[p]->accumulate(g);
        }
      });
}

namespace detail {

inline void softmax_slice(const double *x, double *p, std::size_t n,
                          std::size_t stride) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i * stride] = std::exp(x[i * stride] - mx);
    z += p[i * stride];
  }
  for (std::size_t i = 0; i < n; ++i) p[i * stride] /= z;
}

}  // namespace detail

/// Softmax along `axis`. Rank-1 tensors use axis 0; rank-2 tensors reduce
/// down columns (axis 0) or across rows (axis 1).
inline Tensor softmax_over(const Tensor &a, int axis = 0) {
  if (a.rank() == 0)
    throw Error(errc::shape_mismatch, "softmax_over: scalar input");
  if (axis < 0 || axis >= a.rank())
    throw Error(errc::shape_mismatch, "softmax_over: bad axis");
  std::vector<double> out(a.size());
  std::size_t nslices, n, stride, slice_stride;
  if (a.rank() == 1) {
    nslices = 1;
    n = a.size();
    stride = 1;
    slice_stride = 0;
  } else {
    std::size_t rows = static_cast<std::size_t>(a.shape()[0]);
    std::size_t cols = static_cast<std::size_t>(a.shape()[1]);
    if (axis == 0) {
      nslices = cols;
      n = rows;
      stride = cols;
      slice_stride = 1;
    } else {
      nslices = rows;
      n = cols;
      stride = 1;
      slice_stride = cols;
    }
  }
  const double *src = a.values().data();
  for (std::size_t s = 0; s < nslices; ++s)
    detail::softmax_slice(src + s * slice_stride, out.data() + s * slice_stride,
                          n, stride);
  auto *an = a.node();
  std::vector<double> saved = out;
  return detail::make_op(
      a.shape(), std::move(out), {a},
      [an, saved, nslices, n, stride, slice_stride](detail::TapeNode &node) {
        std::vector<double> g(an->values.size());
        for (std::size_t s = 0; s < nslices; ++s) {
          const double *p = saved.data() + s * slice_stride;
          const double *go = node.grad.data() + s * slice_stride;
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            dot += go[i * stride] * p[i * stride];
          double *gi = g.data() + s * slice_stride;
          for (std::size_t i = 0; i < n; ++i)
            gi[i * stride] = p[i * stride] * (go[i * stride] - dot);
        }
        an->accumulate(g);
      });
}

inline Tensor leaky_relu(const Tensor &a, double slope = 0.2) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.at(i);
    out[i] = x >= 0.0 ? x : slope * x;
  }
  auto *an = a.node();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an, slope](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = n.grad[i] *
                                    (an->values[i] >= 0.0 ? 1.0 : slope);
                           an->accumulate(g);
                         });
}

inline Tensor relu(const Tensor &a) { return leaky_relu(a, 0.0); }

/// |x| as relu(x) + relu(-x); differentiable a.e., subgradient 1 at 0.
inline Tensor abs(const Tensor &a) { return add(relu(a), relu(negate(a))); }

inline Tensor sigmoid(const Tensor &a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a.at(i)));
  auto *an = a.node();
  std::vector<double> saved = out;
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an, saved](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = n.grad[i] * saved[i] * (1.0 - saved[i]);
                           an->accumulate(g);
                         });
}

inline Tensor tanh(const Tensor &a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  auto *an = a.node();
  std::vector<double> saved = out;
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an, saved](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = n.grad[i] * (1.0 - saved[i] * saved[i]);
                           an->accumulate(g);
                         });
}

inline Tensor exp(const Tensor &a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
  auto *an = a.node();
  std::vector<double> saved = out;
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an, saved](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = n.grad[i] * saved[i];
                           an->accumulate(g);
                         });
}

inline Tensor log(const Tensor &a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.at(i);
    if (x <= 0.0)
      throw Error(errc::domain_error, "log: non-positive input " +
                                          std::to_string(x));
    out[i] = std::log(x);
  }
  auto *an = a.node();
  return detail::make_op(a.shape(), std::move(out), {a},
                         [an](detail::TapeNode &n) {
                           std::vector<double> g(n.grad.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] = n.grad[i] / an->values[i];
                           an->accumulate(g);
                         });
}

inline Tensor sum(const Tensor &a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  auto *an = a.node();
  return detail::make_op({}, {acc}, {a}, [an](detail::TapeNode &n) {
    std::vector<double> g(an->values.size(), n.grad[0]);
    an->accumulate(g);
  });
}

inline Tensor mean(const Tensor &a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  double inv = 1.0 / static_cast<double>(a.size());
  auto *an = a.node();
  return detail::make_op({}, {acc * inv}, {a}, [an, inv](detail::TapeNode &n) {
    std::vector<double> g(an->values.size(), n.grad[0] * inv);
    an->accumulate(g);
  });
}

/// Full max reduction; the gradient routes to the first maximal element.
inline Tensor max(const Tensor &a) {
  if (a.size() == 0) throw Error(errc::empty_set, "max: empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a.at(i) > a.at(arg)) arg = i;
  auto *an = a.node();
  return detail::make_op({}, {a.at(arg)}, {a}, [an, arg](detail::TapeNode &n) {
    std::vector<double> g(an->values.size(), 0.0);
    g[arg] = n.grad[0];
    an->accumulate(g);
  });
}

/// Columnwise max of a rank-2 tensor (reduces over rows). Ties route to the
/// first maximal row.
inline Tensor max_over_rows(const Tensor &a) {
  if (a.rank() != 2)
    throw Error(errc::shape_mismatch, "max_over_rows: rank-2 required");
  std::size_t rows = static_cast<std::size_t>(a.shape()[0]);
  std::size_t cols = static_cast<std::size_t>(a.shape()[1]);
  if (rows == 0) throw Error(errc::empty_set, "max_over_rows: no rows");
  std::vector<double> out(cols);
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = a.at(0, j);
    for (std::size_t i = 1; i < rows; ++i)
      if (a.at(i, j) > out[j]) {
        out[j] = a.at(i, j);
        arg[j] = i;
      }
  }
  auto *an = a.node();
  return detail::make_op(
      {static_cast<int>(cols)}, std::move(out), {a},
      [an, arg, cols](detail::TapeNode &n) {
        std::vector<double> g(an->values.size(), 0.0);
        for (std::size_t j = 0; j < cols; ++j)
          g[arg[j] * cols + j] = n.grad[j];
        an->accumulate(g);
      });
}

/// Cosine similarity of two rank-1 tensors. Throws on a zero vector.
inline Tensor cosine_similarity(const Tensor &a, const Tensor &b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
    throw Error(errc::shape_mismatch,
                "cosine_similarity: " + detail::shape_str(a.shape()) +
                    " vs " + detail::shape_str(b.shape()));
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a.at(i) * b.at(i);
    na2 += a.at(i) * a.at(i);
    nb2 += b.at(i) * b.at(i);
  }
  if (na2 == 0.0 || nb2 == 0.0)
    throw Error(errc::domain_error, "cosine_similarity: zero vector");
  double na = std::sqrt(na2), nb = std::sqrt(nb2);
  double c = dot / (na * nb);
  auto *an = a.node();
  auto *bn = b.node();
  return detail::make_op(
      {}, {c}, {a, b}, [an, bn, na, nb, c](detail::TapeNode &n) {
        double g = n.grad[0];
        if (an->requires_grad) {
          std::vector<double> ga(an->values.size());
          for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = g * (bn->values[i] / (na * nb) -
                         c * an->values[i] / (na * na));
          an->accumulate(ga);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(bn->values.size());
          for (std::size_t i = 0; i < gb.size(); ++i)
            gb[i] = g * (an->values[i] / (na * nb) -
                         c * bn->values[i] / (nb * nb));
          bn->accumulate(gb);
        }
      });
}

/// Numerically stable softmax over a list of scalar tensors, returning the
/// probabilities as scalar tensors so they can weight per-edge messages
/// without an indexing op. The constant shift keeps gradients exact.
inline std::vector<Tensor> softmax_scalars(const std::vector<Tensor> &logits) {
  if (logits.empty())
    throw Error(errc::empty_neighborhood, "softmax_scalars: no logits");
  double mx = logits[0].value();
  for (const Tensor &l : logits) mx = std::max(mx, l.value());
  Tensor shift = Tensor::scalar(-mx);
  std::vector<Tensor> shifted;
  shifted.reserve(logits.size());
  for (const Tensor &l : logits) shifted.push_back(exp(add(l, shift)));
  Tensor z = shifted[0];
  for (std::size_t i = 1; i < shifted.size(); ++i) z = add(z, shifted[i]);
  Tensor neg_log_z = negate(log(z));
  std::vector<Tensor> probs;
  probs.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    probs.push_back(exp(add(add(logits[i], shift), neg_log_z)));
  return probs;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

/// Runs reverse-mode differentiation from a scalar loss, accumulating
/// gradients of every trainable ancestor, then clears the record. Calling
/// backward a second time on the same loss raises detached_loss.
inline void backward(const Tensor &loss) {
  if (!loss.defined() || loss.size() != 1)
    throw Error(errc::non_scalar_loss, "backward: loss must be scalar");
  detail::TapeNode *root = loss.node();
  if (!root->backprop && !root->trainable)
    throw Error(errc::detached_loss,
                "backward: loss is not on the computation record");

  // Iterative post-order DFS over the recorded subgraph.
  std::vector<detail::TapeNode *> order;
  std::unordered_set<detail::TapeNode *> visited;
  struct Frame {
    detail::TapeNode *node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame &f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::TapeNode *p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Intermediates start clean; leaves keep accumulating across calls.
  for (detail::TapeNode *n : order)
    if (!n->trainable) n->grad.assign(n->values.size(), 0.0);
  root->grad.assign(1, 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TapeNode *n = *it;
    if (n->backprop) n->backprop(*n);
  }

  // Clear the record: drop closures, edges and intermediate grads.
  for (detail::TapeNode *n : order) {
    n->backprop = nullptr;
    n->parents.clear();
    if (!n->trainable) {
      n->grad.clear();
      n->requires_grad = false;
    }
  }
}

}  // namespace chemcl

#endif  // CHEMCL_TENSOR_HPP_
