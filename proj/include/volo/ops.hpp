// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <type_traits>
#include <span>
#include <vector>

#include "volo/autodiff.hpp"
#include "volo/tensor.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its first argument. Only matmul, bmm and linear report multiply-adds.
namespace volo::ops {

namespace detail {

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// true when `suffix` equals the trailing extents of `full`
inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.begin(), suffix.end(),
                    full.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// (outer, len, inner) decomposition around one axis
struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t ax) {
  AxisSplit r{1, s[ax], 1};
  for (std::size_t i = 0; i < ax; ++i) r.outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------- products

/// 2-D product a[m x k] * b[k x n].
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = a.tape();
  Tensor<T> out = volo::matmul(a.value(), b.value(), &tape.counter());
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  return tape.record(std::move(out), {a, b},
                     [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                       if (a.requires_grad())
                         kernel::gemm_nt(m, n, k, g.ptr(), b.value().ptr(),
                                         t.grad_buffer(a).ptr(), true);
                       if (b.requires_grad())
                         kernel::gemm_tn(k, m, n, a.value().ptr(), g.ptr(),
                                         t.grad_buffer(b).ptr(), true);
                     });
}

/// Batched product a[..., m, k] * b[..., k, n] with identical leading extents.
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = a.tape();
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t r = as.size();
  if (r < 2 || bs.size() != r || as[r - 1] != bs[r - 2] ||
      !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    throw ShapeError("bmm dimension mismatch", as, bs);
  }
  const std::size_t m = as[r - 2], k = as[r - 1], n = bs[r - 1];
  const std::size_t batch = numel(Shape(as.begin(), as.end() - 2));
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const T* ap = a.value().ptr();
  const T* bp = b.value().ptr();
  for (std::size_t i = 0; i < batch; ++i) {
    kernel::gemm_nn(m, k, n, ap + i * m * k, bp + i * k * n,
                    out.ptr() + i * m * n, false);
  }
  tape.counter().add(static_cast<std::uint64_t>(batch) * m * k * n);
  return tape.record(
      std::move(out), {a, b},
      [a, b, m, k, n, batch](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const T* av = a.value().ptr();
        const T* bv = b.value().ptr();
        if (a.requires_grad()) {
          T* da = t.grad_buffer(a).ptr();
          for (std::size_t i = 0; i < batch; ++i)
            kernel::gemm_nt(m, n, k, g.ptr() + i * m * n, bv + i * k * n,
                            da + i * m * k, true);
        }
        if (b.requires_grad()) {
          T* db = t.grad_buffer(b).ptr();
          for (std::size_t i = 0; i < batch; ++i)
            kernel::gemm_tn(k, m, n, av + i * m * k, g.ptr() + i * m * n,
                            db + i * k * n, true);
        }
      });
}

/// Affine map over the last axis: x[..., cin] * w[cin, cout] + b[cout].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w,
              std::optional<std::type_identity_t<Var<T>>> b = std::nullopt) {
  Tape<T>& tape = x.tape();
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw ShapeError("linear input/weight mismatch", xs, ws);
  }
  const std::size_t cin = ws[0], cout = ws[1];
  if (b && (b->value().rank() != 1 || b->extent(0) != cout)) {
    throw ShapeError("linear bias mismatch", ws, b->shape());
  }
  const std::size_t tokens = x.value().size() / cin;
  Shape out_shape = xs;
  out_shape.back() = cout;
  Tensor<T> out(out_shape);
  kernel::gemm_nn(tokens, cin, cout, x.value().ptr(), w.value().ptr(), out.ptr(),
                  false);
  if (b) {
    const T* bp = b->value().ptr();
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t j = 0; j < cout; ++j) out[t * cout + j] += bp[j];
  }
  tape.counter().add(static_cast<std::uint64_t>(tokens) * cin * cout);

  auto backward = [x, w, b, tokens, cin, cout](Tape<T>& t, const Tensor<T>& g,
                                               const Tensor<T>&) {
    if (x.requires_grad())
      kernel::gemm_nt(tokens, cout, cin, g.ptr(), w.value().ptr(),
                      t.grad_buffer(x).ptr(), true);
    if (w.requires_grad())
      kernel::gemm_tn(cin, tokens, cout, x.value().ptr(), g.ptr(),
                      t.grad_buffer(w).ptr(), true);
    if (b && b->requires_grad()) {
      T* db = t.grad_buffer(*b).ptr();
      for (std::size_t i = 0; i < tokens; ++i)
        for (std::size_t j = 0; j < cout; ++j) db[j] += g[i * cout + j];
    }
  };
  if (b) return tape.record(std::move(out), {x, w, *b}, std::move(backward));
  return tape.record(std::move(out), {x, w}, std::move(backward));
}

// ------------------------------------------------------------ elementwise

/// a + b, where b either matches a or matches a's trailing extents.
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (!detail::is_suffix(as, bs)) throw ShapeError("add shape mismatch", as, bs);
  Tensor<T> out = a.value();
  const std::size_t inner = b.value().size();
  const T* bp = b.value().ptr();
  if (inner > 0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i % inner];
  }
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, inner](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        if (a.requires_grad()) detail::add_into(t.grad_buffer(a), g);
        if (b.requires_grad()) {
          Tensor<T>& db = t.grad_buffer(b);
          for (std::size_t i = 0; i < g.size(); ++i) db[i % inner] += g[i];
        }
      });
}

/// Elementwise product of equally shaped tensors.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul shape mismatch", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(
      std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        if (a.requires_grad()) {
          Tensor<T>& da = t.grad_buffer(a);
          for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.value()[i];
        }
        if (b.requires_grad()) {
          Tensor<T>& db = t.grad_buffer(b);
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.value()[i];
        }
      });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x},
                         [x, factor](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                           Tensor<T>& dx = t.grad_buffer(x);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             dx[i] += factor * g[i];
                         });
}

/// Multiplies every slice x[i, ...] by the constant factor[i].
template <class T>
Var<T> scale_leading(const Var<T>& x, const Tensor<T>& factor) {
  const auto& xs = x.shape();
  if (xs.empty() || factor.rank() != 1 || factor.extent(0) != xs[0]) {
    throw ShapeError("scale_leading mismatch", xs, factor.shape());
  }
  const std::size_t inner = x.value().size() / xs[0];
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i / inner];
  return x.tape().record(
      std::move(out), {x}, [x, factor, inner](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor[i / inner] * g[i];
      });
}

/// Gaussian error linear unit, exact erf form.
template <class T>
Var<T> gelu(const Var<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return x.tape().record(
      std::move(out), {x}, [x, inv_sqrt2](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        Tensor<T>& dx = t.grad_buffer(x);
        const auto& xv = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T v = xv[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
          dx[i] += g[i] * (cdf + v * pdf);
        }
      });
}

// ------------------------------------------------------------ reductions

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.tape().record(Tensor<T>::scalar(acc), {x},
                         [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                           for (auto& v : t.grad_buffer(x).data()) v += g[0];
                         });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

/// exp(x - max) / sum(exp(x - max)) along `axis` (negative counts from the end).
template <class T>
Var<T> softmax(const Var<T>& x, int axis = -1) {
  const auto& xs = x.shape();
  const auto [outer, len, inner] =
      detail::split_axis(xs, detail::normalize_axis(axis, xs.size()));

  Tensor<T> out(xs);
  const T* in = x.value().ptr();
  T* o = out.ptr();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * len * inner + c;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      T denom{0};
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(in[base + j * inner] - mx);
        o[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < len; ++j) o[base + j * inner] /= denom;
    }
  }
  return x.tape().record(
      std::move(out), {x},
      [x, outer, len, inner](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        Tensor<T>& dx = t.grad_buffer(x);
        for (std::size_t a = 0; a < outer; ++a) {
          for (std::size_t c = 0; c < inner; ++c) {
            const std::size_t base = a * len * inner + c;
            T dot{0};
            for (std::size_t j = 0; j < len; ++j)
              dot += g[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t i = base + j * inner;
              dx[i] += y[i] * (g[i] - dot);
            }
          }
        }
      });
}

/// Standardizes each last-axis row, then applies gamma and beta.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
  const auto& xs = x.shape();
  if (xs.empty() || gamma.value().rank() != 1 || gamma.extent(0) != xs.back() ||
      beta.shape() != gamma.shape()) {
    throw ShapeError("layer_norm parameter mismatch", xs, gamma.shape());
  }
  const std::size_t c = xs.back();
  const std::size_t rows = x.value().size() / c;
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  std::vector<T> inv_std(rows);
  const T* in = x.value().ptr();
  const T* gp = gamma.value().ptr();
  const T* bp = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in + r * c;
    T mu{0};
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = h * gp[j] + bp[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const T* gp = gamma.value().ptr();
        if (x.requires_grad()) {
          Tensor<T>& dx = t.grad_buffer(x);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d{0}, mean_dh{0};
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gp[j];
              mean_d += d;
              mean_dh += d * xhat[r * c + j];
            }
            mean_d /= static_cast<T>(c);
            mean_dh /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gp[j];
              dx[r * c + j] += inv_std[r] * (d - mean_d - xhat[r * c + j] * mean_dh);
            }
          }
        }
        if (gamma.requires_grad()) {
          Tensor<T>& dg = t.grad_buffer(gamma);
          for (std::size_t i = 0; i < g.size(); ++i) dg[i % c] += g[i] * xhat[i];
        }
        if (beta.requires_grad()) {
          Tensor<T>& db = t.grad_buffer(beta);
          for (std::size_t i = 0; i < g.size(); ++i) db[i % c] += g[i];
        }
      });
}

// ------------------------------------------------------------ layout

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x},
                         [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                           detail::add_into(t.grad_buffer(x), g);
                         });
}

template <class T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm) {
  Tensor<T> out = volo::permute(x.value(), std::span<const std::size_t>(perm));
  return x.tape().record(
      std::move(out), {x},
      [x, inv = inverse_permutation(perm)](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        detail::add_into(t.grad_buffer(x), volo::permute(g, std::span<const std::size_t>(inv)));
      });
}

/// x[..., start:start+length, ...] along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t length) {
  const auto& xs = x.shape();
  const std::size_t ax = detail::normalize_axis(axis, xs.size());
  if (start + length > xs[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " +
                     std::to_string(ax) + " of " + to_string(xs));
  }
  const auto [outer, len, inner] = detail::split_axis(xs, ax);
  Shape os = xs;
  os[ax] = length;
  Tensor<T> out(os);
  for (std::size_t a = 0; a < outer; ++a)
    std::copy_n(x.value().ptr() + (a * len + start) * inner, length * inner,
                out.ptr() + a * length * inner);
  return x.tape().record(
      std::move(out), {x},
      [x, outer, len, inner, start, length](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        T* dx = t.grad_buffer(x).ptr();
        for (std::size_t a = 0; a < outer; ++a)
          for (std::size_t i = 0; i < length * inner; ++i)
            dx[(a * len + start) * inner + i] += g[a * length * inner + i];
      });
}

/// Joins a and b along `axis`; all other extents must agree.
template <class T>
Var<T> concat(const Var<T>& a, const Var<T>& b, int axis) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t ax = detail::normalize_axis(axis, as.size());
  bool ok = as.size() == bs.size();
  for (std::size_t i = 0; ok && i < as.size(); ++i) ok = (i == ax) || as[i] == bs[i];
  if (!ok) throw ShapeError("concat shape mismatch", as, bs);
  const auto sa = detail::split_axis(as, ax);
  const std::size_t lb = bs[ax];
  const std::size_t inner = sa.inner;
  Shape os = as;
  os[ax] = sa.len + lb;
  Tensor<T> out(os);
  const std::size_t row = (sa.len + lb) * inner;
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.value().ptr() + o * sa.len * inner, sa.len * inner, out.ptr() + o * row);
    std::copy_n(b.value().ptr() + o * lb * inner, lb * inner,
                out.ptr() + o * row + sa.len * inner);
  }
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, sa, lb, inner, row](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        if (a.requires_grad()) {
          T* da = t.grad_buffer(a).ptr();
          for (std::size_t o = 0; o < sa.outer; ++o)
            for (std::size_t i = 0; i < sa.len * inner; ++i)
              da[o * sa.len * inner + i] += g[o * row + i];
        }
        if (b.requires_grad()) {
          T* db = t.grad_buffer(b).ptr();
          for (std::size_t o = 0; o < sa.outer; ++o)
            for (std::size_t i = 0; i < lb * inner; ++i)
              db[o * lb * inner + i] += g[o * row + sa.len * inner + i];
        }
      });
}

/// Repeats a tensor with leading extent 1 `count` times along axis 0.
template <class T>
Var<T> repeat_leading(const Var<T>& x, std::size_t count) {
  const auto& xs = x.shape();
  if (xs.empty() || xs[0] != 1) {
    throw ShapeError("repeat_leading expects leading extent 1, got " + to_string(xs));
  }
  Shape os = xs;
  os[0] = count;
  const std::size_t inner = x.value().size();
  Tensor<T> out(os);
  for (std::size_t i = 0; i < count; ++i)
    std::copy_n(x.value().ptr(), inner, out.ptr() + i * inner);
  return x.tape().record(std::move(out), {x},
                         [x, inner](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
                           Tensor<T>& dx = t.grad_buffer(x);
                           for (std::size_t i = 0; i < g.size(); ++i) dx[i % inner] += g[i];
                         });
}

// ------------------------------------------------------------ losses

/// Mean softmax cross-entropy of logits[batch x classes] against labels.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const auto& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("cross_entropy expects [batch x classes] logits and one label per row, got " +
                     to_string(s) + " with " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = s[0], k = s[1];
  Tensor<T> prob({n, k});
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("label " + std::to_string(y) + " outside [0, " +
                          std::to_string(k) + ")");
    }
    const T* row = logits.value().ptr() + i * k;
    const T mx = *std::max_element(row, row + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] = std::exp(row[j] - mx) / denom;
    loss += std::log(denom) + mx - row[y];
  }
  loss /= static_cast<T>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor<T>::scalar(loss), {logits},
      [logits, prob = std::move(prob), lab = std::move(lab), n, k](
          Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& dl = t.grad_buffer(logits);
        const T w = g[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j)
            dl[i * k + j] += w * (prob[i * k + j] - (static_cast<int>(j) == lab[i] ? T(1) : T(0)));
      });
}

}  // namespace volo::ops
