#pragma once

// Dense row-major tensors with reverse-mode autodiff.
//
// Scalar type is a template parameter: the pipeline instantiates float,
// gradient-check builds instantiate double (central finite differences are
// unreliable at f32). Graphs are single-writer: a graph and its tensors stay
// on one thread between forward and backward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "qag/error.hpp"

namespace qag {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Boolean attention mask: allow[r * cols + c] != 0 means position c is
// attendable from query r. Masked entries contribute exactly zero weight.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> allow;

  bool empty() const { return allow.empty(); }
  bool at(int r, int c) const { return allow[static_cast<std::size_t>(r) * cols + c] != 0; }
};

// Disables graph recording in scope (inference / evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(active_ref()) { active_ref() = true; }
  ~NoGradGuard() { active_ref() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active() { return active_ref(); }

 private:
  static bool& active_ref() {
    thread_local bool active = false;
    return active;
  }
  bool prev_;
};

namespace detail {

inline std::uint64_t next_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same size as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  std::uint64_t seq = next_seq();

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

template <typename S>
class TensorT {
 public:
  using Node = detail::Node<S>;

  TensorT() = default;

  static TensorT leaf(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("leaf: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    for (S v : data)
      if (!std::isfinite(v)) throw NumericError("leaf: non-finite value");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> d(shape_numel(shape), S(0));
    return leaf(std::move(shape), std::move(d), requires_grad);
  }

  static TensorT scalar(S v) { return leaf({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<S>& data() const { return node_->value; }
  std::vector<S>& data() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  // Copy of the values with no graph attachment.
  TensorT detach() const { return leaf(node_->shape, node_->value, false); }

  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> node_ptr() const { return node_; }

  explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
void check_finite(const std::vector<S>& v, const char* op) {
  for (S x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in forward pass");
}

// Builds the result node. Records inputs and the backward closure only when
// some input requires grad and no NoGradGuard is active.
template <typename S>
TensorT<S> make_op(const char* op, Shape shape, std::vector<S> value,
                   std::vector<TensorT<S>> inputs, std::function<void(Node<S>&)> backward) {
  if (shape_numel(shape) != value.size())
    throw ShapeError(std::string(op) + ": result shape/data mismatch");
  check_finite(value, op);
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in.requires_grad();
  if (rg && !NoGradGuard::active()) {
    n->requires_grad = true;
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward_fn = std::move(backward);
  }
  return TensorT<S>(std::move(n));
}

template <typename S>
using EigenMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C (m x n) += or = A (m x k) * B (k x n), with optional transposes on views.
template <typename S>
void gemm(const S* a, int ar, int ac, bool ta, const S* b, int br, int bc, bool tb, S* c,
          bool accumulate) {
  ConstEigenMap<S> ma(a, ar, ac);
  ConstEigenMap<S> mb(b, br, bc);
  int m = ta ? ac : ar;
  int n = tb ? br : bc;
  EigenMap<S> mc(c, m, n);
  if (!ta && !tb) {
    if (accumulate) mc.noalias() += ma * mb; else mc.noalias() = ma * mb;
  } else if (!ta && tb) {
    if (accumulate) mc.noalias() += ma * mb.transpose(); else mc.noalias() = ma * mb.transpose();
  } else if (ta && !tb) {
    if (accumulate) mc.noalias() += ma.transpose() * mb; else mc.noalias() = ma.transpose() * mb;
  } else {
    if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
    else mc.noalias() = ma.transpose() * mb.transpose();
  }
}

template <typename S>
void require_2d(const TensorT<S>& t, const char* op) {
  if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<S> out(static_cast<std::size_t>(m) * n);
  detail::gemm(a.data().data(), m, k, false, b.data().data(), k, n, false, out.data(), false);
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<S>(
      "matmul", {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node<S>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          detail::gemm(self.grad.data(), m, n, false, bn->value.data(), k, n, true,
                       an->grad.data(), true);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::gemm(an->value.data(), m, k, true, self.grad.data(), m, n, false,
                       bn->grad.data(), true);
        }
      });
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& x) {
  detail::require_2d(x, "transpose");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<S> out(x.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = x.data()[static_cast<std::size_t>(i) * c + j];
  auto* xn = x.node();
  return detail::make_op<S>("transpose", {c, r}, std::move(out), {x}, [xn, r, c](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i)
        xn->grad[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
  });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<S>("add", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<S>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
}

// Row-broadcast bias add: x is [T x N], bias is [N]. The only broadcasting
// the library supports.
template <typename S>
TensorT<S> add_bias(const TensorT<S>& x, const TensorT<S>& bias) {
  detail::require_2d(x, "add_bias");
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  const int t = x.dim(0), n = x.dim(1);
  std::vector<S> out(x.numel());
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = x.data()[static_cast<std::size_t>(i) * n + j] + bias.data()[j];
  auto* xn = x.node();
  auto* bn = bias.node();
  return detail::make_op<S>("add_bias", x.shape(), std::move(out), {x, bias}, [xn, bn, t, n](detail::Node<S>& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < n; ++j) bn->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto* an = a.node();
  auto* bn = b.node();
  return detail::make_op<S>("mul", a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<S>& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& x, S c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  auto* xn = x.node();
  return detail::make_op<S>("scale", x.shape(), std::move(out), {x}, [xn, c](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * c;
  });
}

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  auto* xn = x.node();
  return detail::make_op<S>("sum", {1}, {acc}, {x}, [xn](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[0];
  });
}

// GELU (exact erf form); smooth everywhere, which keeps finite-difference
// checks clean.
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
  static const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  static const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    S v = x.data()[i];
    out[i] = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
  }
  auto* xn = x.node();
  return detail::make_op<S>("gelu", x.shape(), std::move(out), {x}, [xn](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      S v = xn->value[i];
      S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
      S pdf = std::exp(S(-0.5) * v * v) * inv_sqrt2pi;
      xn->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) detail::require_2d(p, "concat");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  const int other = axis == 0 ? 1 : 0;
  const int fixed = parts[0].dim(other);
  int total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != fixed)
      throw ShapeError("concat: shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<S> out(shape_numel(out_shape));
  const int out_cols = out_shape[1];
  int offset = 0;
  for (const auto& p : parts) {
    const int pr = p.dim(0), pc = p.dim(1);
    for (int i = 0; i < pr; ++i)
      for (int j = 0; j < pc; ++j) {
        int oi = axis == 0 ? offset + i : i;
        int oj = axis == 0 ? j : offset + j;
        out[static_cast<std::size_t>(oi) * out_cols + oj] = p.data()[static_cast<std::size_t>(i) * pc + j];
      }
    offset += p.dim(axis);
  }
  std::vector<detail::Node<S>*> nodes;
  std::vector<Shape> shapes;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    shapes.push_back(p.shape());
  }
  return detail::make_op<S>("concat", out_shape, std::move(out), parts,
                            [nodes, shapes, axis, out_cols](detail::Node<S>& self) {
                              int offset = 0;
                              for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                                auto* n = nodes[pi];
                                const int pr = shapes[pi][0], pc = shapes[pi][1];
                                if (n->requires_grad) {
                                  n->ensure_grad();
                                  for (int i = 0; i < pr; ++i)
                                    for (int j = 0; j < pc; ++j) {
                                      int oi = axis == 0 ? offset + i : i;
                                      int oj = axis == 0 ? j : offset + j;
                                      n->grad[static_cast<std::size_t>(i) * pc + j] +=
                                          self.grad[static_cast<std::size_t>(oi) * out_cols + oj];
                                    }
                                }
                                offset += shapes[pi][axis == 0 ? 0 : 1];
                              }
                            });
}

template <typename S>
TensorT<S> slice_rows(const TensorT<S>& x, int begin, int end) {
  detail::require_2d(x, "slice_rows");
  const int r = x.dim(0), c = x.dim(1);
  if (begin < 0 || end > r || begin > end) throw IndexError("slice_rows: range out of bounds");
  const int nr = end - begin;
  std::vector<S> out(static_cast<std::size_t>(nr) * c);
  std::copy(x.data().begin() + static_cast<std::size_t>(begin) * c,
            x.data().begin() + static_cast<std::size_t>(end) * c, out.begin());
  auto* xn = x.node();
  return detail::make_op<S>("slice_rows", {nr, c}, std::move(out), {x}, [xn, begin, c, nr](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < static_cast<std::size_t>(nr) * c; ++i)
      xn->grad[static_cast<std::size_t>(begin) * c + i] += self.grad[i];
  });
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& x, int begin, int end) {
  detail::require_2d(x, "slice_cols");
  const int r = x.dim(0), c = x.dim(1);
  if (begin < 0 || end > c || begin > end) throw IndexError("slice_cols: range out of bounds");
  const int nc = end - begin;
  std::vector<S> out(static_cast<std::size_t>(r) * nc);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < nc; ++j)
      out[static_cast<std::size_t>(i) * nc + j] = x.data()[static_cast<std::size_t>(i) * c + begin + j];
  auto* xn = x.node();
  return detail::make_op<S>("slice_cols", {r, nc}, std::move(out), {x}, [xn, begin, r, c, nc](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < nc; ++j)
        xn->grad[static_cast<std::size_t>(i) * c + begin + j] += self.grad[static_cast<std::size_t>(i) * nc + j];
  });
}

namespace detail {

// Shared softmax forward/backward over [outer, n, inner] slices.
template <typename S>
struct SoftmaxDims {
  std::size_t outer = 1, inner = 1;
  int n = 0;
};

template <typename S>
SoftmaxDims<S> softmax_dims(const TensorT<S>& x, int axis, const char* op) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim()) throw ContractError(std::string(op) + ": axis out of range");
  SoftmaxDims<S> d;
  for (int i = 0; i < axis; ++i) d.outer *= static_cast<std::size_t>(x.dim(i));
  d.n = x.dim(axis);
  for (int i = axis + 1; i < x.ndim(); ++i) d.inner *= static_cast<std::size_t>(x.dim(i));
  return d;
}

}  // namespace detail

// Softmax along `axis` with max-subtraction. Each slice sums to 1.
template <typename S>
TensorT<S> softmax(const TensorT<S>& x, int axis = -1) {
  auto d = detail::softmax_dims(x, axis, "softmax");
  std::vector<S> out(x.numel());
  for (std::size_t o = 0; o < d.outer; ++o)
    for (std::size_t in = 0; in < d.inner; ++in) {
      const std::size_t base = o * d.n * d.inner + in;
      S mx = x.data()[base];
      for (int k = 1; k < d.n; ++k) mx = std::max(mx, x.data()[base + k * d.inner]);
      S denom = 0;
      for (int k = 0; k < d.n; ++k) {
        S e = std::exp(x.data()[base + k * d.inner] - mx);
        out[base + k * d.inner] = e;
        denom += e;
      }
      for (int k = 0; k < d.n; ++k) out[base + k * d.inner] /= denom;
    }
  auto* xn = x.node();
  return detail::make_op<S>("softmax", x.shape(), std::move(out), {x}, [xn, d](detail::Node<S>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t o = 0; o < d.outer; ++o)
      for (std::size_t in = 0; in < d.inner; ++in) {
        const std::size_t base = o * d.n * d.inner + in;
        S dot = 0;
        for (int k = 0; k < d.n; ++k) dot += self.grad[base + k * d.inner] * self.value[base + k * d.inner];
        for (int k = 0; k < d.n; ++k) {
          const std::size_t idx = base + k * d.inner;
          xn->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

// Row softmax over a 2-d tensor where only mask-allowed columns participate.
// Disallowed entries get exactly 0 (and receive no gradient), so outputs are
// bit-invariant to whatever values sit behind the mask.
template <typename S>
TensorT<S> softmax_masked(const TensorT<S>& x, const Mask& mask) {
  detail::require_2d(x, "softmax_masked");
  const int r = x.dim(0), c = x.dim(1);
  if (mask.rows != r || mask.cols != c)
    throw ShapeError("softmax_masked: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                     " does not match " + shape_str(x.shape()));
  std::vector<S> out(x.numel(), S(0));
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * c;
    bool any = false;
    S mx = 0;
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) {
        mx = any ? std::max(mx, x.data()[base + j]) : x.data()[base + j];
        any = true;
      }
    if (!any) throw ContractError("softmax_masked: fully masked row " + std::to_string(i));
    S denom = 0;
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) {
        S e = std::exp(x.data()[base + j] - mx);
        out[base + j] = e;
        denom += e;
      }
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) out[base + j] /= denom;
  }
  auto* xn = x.node();
  Mask m = mask;
  return detail::make_op<S>("softmax_masked", x.shape(), std::move(out), {x},
                            [xn, m, r, c](detail::Node<S>& self) {
                              if (!xn->requires_grad) return;
                              xn->ensure_grad();
                              for (int i = 0; i < r; ++i) {
                                const std::size_t base = static_cast<std::size_t>(i) * c;
                                S dot = 0;
                                for (int j = 0; j < c; ++j)
                                  if (m.at(i, j)) dot += self.grad[base + j] * self.value[base + j];
                                for (int j = 0; j < c; ++j)
                                  if (m.at(i, j))
                                    xn->grad[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
                              }
                            });
}

// Per-row layer norm over the last axis of a 2-d tensor.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5)) {
  detail::require_2d(x, "layer_norm");
  const int r = x.dim(0), c = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(c) + "]");
  std::vector<S> out(x.numel());
  std::vector<S> xhat(x.numel());
  std::vector<S> inv_std(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * c;
    S mean = 0;
    for (int j = 0; j < c; ++j) mean += x.data()[base + j];
    mean /= S(c);
    S var = 0;
    for (int j = 0; j < c; ++j) {
      S d = x.data()[base + j] - mean;
      var += d * d;
    }
    var /= S(c);
    S istd = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = istd;
    for (int j = 0; j < c; ++j) {
      S xh = (x.data()[base + j] - mean) * istd;
      xhat[base + j] = xh;
      out[base + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  auto* xn = x.node();
  auto* gn = gamma.node();
  auto* bn = beta.node();
  auto xhat_s = std::make_shared<std::vector<S>>(std::move(xhat));
  auto istd_s = std::make_shared<std::vector<S>>(std::move(inv_std));
  return detail::make_op<S>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, xhat_s, istd_s, r, c](detail::Node<S>& self) {
        const auto& xh = *xhat_s;
        const auto& istd = *istd_s;
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) bn->grad[j] += self.grad[static_cast<std::size_t>(i) * c + j];
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * c + j;
              gn->grad[j] += self.grad[idx] * xh[idx];
            }
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int i = 0; i < r; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * c;
            S mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (int j = 0; j < c; ++j) {
              S dxh = self.grad[base + j] * gn->value[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[base + j];
            }
            mean_dxhat /= S(c);
            mean_dxhat_xhat /= S(c);
            for (int j = 0; j < c; ++j) {
              S dxh = self.grad[base + j] * gn->value[j];
              xn->grad[base + j] += istd[static_cast<std::size_t>(i)] *
                                    (dxh - mean_dxhat - xh[base + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

// Gathers rows of an embedding table: out[t, :] = table[ids[t], :].
template <typename S>
TensorT<S> embed_lookup(const TensorT<S>& table, const std::vector<int>& ids) {
  detail::require_2d(table, "embed_lookup");
  const int v = table.dim(0), d = table.dim(1);
  const int t = static_cast<int>(ids.size());
  std::vector<S> out(static_cast<std::size_t>(t) * d);
  for (int i = 0; i < t; ++i) {
    if (ids[static_cast<std::size_t>(i)] < 0 || ids[static_cast<std::size_t>(i)] >= v)
      throw IndexError("embed_lookup: id " + std::to_string(ids[static_cast<std::size_t>(i)]) +
                       " out of range [0," + std::to_string(v) + ")");
    std::copy(table.data().begin() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
              table.data().begin() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)] + 1) * d,
              out.begin() + static_cast<std::size_t>(i) * d);
  }
  auto* tn = table.node();
  auto ids_copy = ids;
  return detail::make_op<S>("embed_lookup", {t, d}, std::move(out), {table},
                            [tn, ids_copy, d](detail::Node<S>& self) {
                              if (!tn->requires_grad) return;
                              tn->ensure_grad();
                              for (std::size_t i = 0; i < ids_copy.size(); ++i)
                                for (int j = 0; j < d; ++j)
                                  tn->grad[static_cast<std::size_t>(ids_copy[i]) * d + j] +=
                                      self.grad[i * d + j];
                            });
}

// Mean negative log likelihood over the non-ignored positions (1/T
// normalization). targets[t] == ignore_id marks a position to skip; a fully
// ignored batch yields a zero loss.
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& targets, int ignore_id = -1) {
  detail::require_2d(logits, "cross_entropy");
  const int t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != t)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t) + " rows");
  int n_valid = 0;
  S total = 0;
  std::vector<S> log_probs(logits.numel());
  for (int i = 0; i < t; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * v;
    const int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt == ignore_id) continue;
    if (tgt < 0 || tgt >= v)
      throw IndexError("cross_entropy: target id " + std::to_string(tgt) + " out of range [0," +
                       std::to_string(v) + ")");
    S mx = logits.data()[base];
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.data()[base + j]);
    S denom = 0;
    for (int j = 0; j < v; ++j) denom += std::exp(logits.data()[base + j] - mx);
    S lse = mx + std::log(denom);
    for (int j = 0; j < v; ++j) log_probs[base + j] = logits.data()[base + j] - lse;
    total += -log_probs[base + tgt];
    ++n_valid;
  }
  S loss = n_valid > 0 ? total / S(n_valid) : S(0);
  auto* ln = logits.node();
  auto lp = std::make_shared<std::vector<S>>(std::move(log_probs));
  auto tg = targets;
  return detail::make_op<S>(
      "cross_entropy", {1}, {loss}, {logits}, [ln, lp, tg, ignore_id, t, v, n_valid](detail::Node<S>& self) {
        if (!ln->requires_grad || n_valid == 0) return;
        ln->ensure_grad();
        const S g = self.grad[0] / S(n_valid);
        for (int i = 0; i < t; ++i) {
          const int tgt = tg[static_cast<std::size_t>(i)];
          if (tgt == ignore_id) continue;
          const std::size_t base = static_cast<std::size_t>(i) * v;
          for (int j = 0; j < v; ++j) {
            S p = std::exp((*lp)[base + j]);
            ln->grad[base + j] += g * (p - (j == tgt ? S(1) : S(0)));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-mode tape over the nodes reachable from one root. Creation order is
// already topological (inputs are constructed before the ops that consume
// them), so the reverse sweep is reverse-topological.
template <typename S>
class GraphT {
 public:
  explicit GraphT(const TensorT<S>& root) {
    std::vector<detail::Node<S>*> stack{root.node()};
    std::unordered_set<detail::Node<S>*> seen{root.node()};
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      order_.push_back(n);
      for (auto& in : n->inputs)
        if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
    std::sort(order_.begin(), order_.end(),
              [](const detail::Node<S>* a, const detail::Node<S>* b) { return a->seq > b->seq; });
  }

  // Seeds the root with grad 1 and propagates. Each node's backward closure
  // runs exactly once.
  void backward() {
    if (order_.empty()) return;
    auto* root = order_.front();
    if (root->value.size() != 1) throw ContractError("backward: loss must be a scalar tensor");
    root->ensure_grad();
    root->grad[0] = S(1);
    visit_count_ = 0;
    for (auto* n : order_) {
      if (n->backward_fn) n->backward_fn(*n);
      ++visit_count_;
    }
  }

  std::size_t size() const { return order_.size(); }
  std::size_t visit_count() const { return visit_count_; }

 private:
  std::vector<detail::Node<S>*> order_;
  std::size_t visit_count_ = 0;
};

// Populates grad = d(loss)/d(leaf) for every requires_grad leaf reachable
// from loss. Grads accumulate across calls until zero_grad.
template <typename S>
std::size_t backward(const TensorT<S>& loss) {
  if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar tensor");
  if (!loss.requires_grad()) return 0;
  GraphT<S> graph(loss);
  graph.backward();
  return graph.visit_count();
}

using Tensor = TensorT<float>;

}  // namespace qag
