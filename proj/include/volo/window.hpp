// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "volo/autodiff.hpp"
#include "volo/ops.hpp"
#include "volo/tensor.hpp"

namespace volo {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Sliding-window layout over an H x W grid. Window t = (a, b) on the
/// strided grid covers rows a*stride - padding + p and columns
/// b*stride - padding + q for 0 <= p, q < kernel; offsets are enumerated
/// row-major as u = p * kernel + q.
struct WindowGeometry {
  std::size_t kernel = 1;
  std::size_t padding = 0;
  std::size_t stride = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  /// Centered windows: padding = kernel / 2.
  static WindowGeometry centered(std::size_t kernel, std::size_t stride,
                                 std::size_t height, std::size_t width) {
    WindowGeometry g{kernel, kernel / 2, stride, height, width};
    g.validate();
    return g;
  }

  void validate() const {
    if (kernel == 0 || kernel % 2 == 0) {
      throw GeometryError("window kernel must be odd and positive, got " +
                          std::to_string(kernel));
    }
    if (stride == 0) throw GeometryError("window stride must be positive");
    if (height == 0 || width == 0) throw GeometryError("window input grid is empty");
    if (kernel > height + 2 * padding || kernel > width + 2 * padding) {
      throw GeometryError("kernel " + std::to_string(kernel) +
                          " exceeds padded input " +
                          std::to_string(height + 2 * padding) + "x" +
                          std::to_string(width + 2 * padding));
    }
  }

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t windows() const { return out_height() * out_width(); }
  std::size_t offsets() const { return kernel * kernel; }
};

namespace kernel {

// Calls fn(window, offset, source_row, source_col) for every in-bounds entry.
template <class Fn>
void for_each_window_entry(const WindowGeometry& g, Fn&& fn) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
  for (std::size_t a = 0; a < oh; ++a) {
    for (std::size_t b = 0; b < ow; ++b) {
      const std::size_t t = a * ow + b;
      for (std::size_t p = 0; p < k; ++p) {
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(a * g.stride + p) -
                                 static_cast<std::ptrdiff_t>(g.padding);
        if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.height)) continue;
        for (std::size_t q = 0; q < k; ++q) {
          const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(b * g.stride + q) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          if (c < 0 || c >= static_cast<std::ptrdiff_t>(g.width)) continue;
          fn(t, p * k + q, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        }
      }
    }
  }
}

}  // namespace kernel

/// x[B, H, W, C] -> windows[B, h*w, K*K, C]; out-of-bounds entries are zero.
template <class T>
Tensor<T> unfold(const Tensor<T>& x, const WindowGeometry& g) {
  g.validate();
  if (x.rank() != 4 || x.extent(1) != g.height || x.extent(2) != g.width) {
    throw ShapeError("unfold input does not match geometry", x.shape(),
                     Shape{0, g.height, g.width, 0});
  }
  const std::size_t batch = x.extent(0), c = x.extent(3);
  const std::size_t nw = g.windows(), nu = g.offsets();
  Tensor<T> out({batch, nw, nu, c});
  for (std::size_t n = 0; n < batch; ++n) {
    const T* in = x.ptr() + n * g.height * g.width * c;
    T* o = out.ptr() + n * nw * nu * c;
    kernel::for_each_window_entry(g, [&](std::size_t t, std::size_t u, std::size_t r,
                                         std::size_t col) {
      std::copy_n(in + (r * g.width + col) * c, c, o + (t * nu + u) * c);
    });
  }
  return out;
}

/// Adjoint of unfold: windows[B, h*w, K*K, C] -> x[B, H, W, C], summing every
/// entry into the location it was taken from.
template <class T>
Tensor<T> fold(const Tensor<T>& y, const WindowGeometry& g) {
  g.validate();
  const std::size_t nw = g.windows(), nu = g.offsets();
  if (y.rank() != 4 || y.extent(1) != nw || y.extent(2) != nu) {
    throw ShapeError("fold input does not match geometry", y.shape(),
                     Shape{0, nw, nu, 0});
  }
  const std::size_t batch = y.extent(0), c = y.extent(3);
  Tensor<T> out({batch, g.height, g.width, c});
  for (std::size_t n = 0; n < batch; ++n) {
    const T* in = y.ptr() + n * nw * nu * c;
    T* o = out.ptr() + n * g.height * g.width * c;
    kernel::for_each_window_entry(g, [&](std::size_t t, std::size_t u, std::size_t r,
                                         std::size_t col) {
      const T* src = in + (t * nu + u) * c;
      T* dst = o + (r * g.width + col) * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    });
  }
  return out;
}

template <class T>
Tensor<T> unfold3(const Tensor<T>& x, const WindowGeometry& g) {
  if (x.rank() != 3) throw ShapeError("expected a rank-3 token map, got " + to_string(x.shape()));
  Tensor<T> r = unfold(x.reshaped({1, x.extent(0), x.extent(1), x.extent(2)}), g);
  return r.reshaped({r.extent(1), r.extent(2), r.extent(3)});
}

template <class T>
Tensor<T> fold3(const Tensor<T>& y, const WindowGeometry& g) {
  if (y.rank() != 3) throw ShapeError("expected a rank-3 window stack, got " + to_string(y.shape()));
  Tensor<T> r = fold(y.reshaped({1, y.extent(0), y.extent(1), y.extent(2)}), g);
  return r.reshaped({r.extent(1), r.extent(2), r.extent(3)});
}

/// Average over each s x s block; trailing partial blocks average only their
/// in-bounds cells. x[B, H, W, C] -> [B, ceil(H/s), ceil(W/s), C].
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t s) {
  if (x.rank() != 4 || s == 0) throw ShapeError("avg_pool expects [B, H, W, C], got " + to_string(x.shape()));
  const std::size_t batch = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::size_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
  Tensor<T> out({batch, oh, ow, c});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t a = 0; a < oh; ++a)
      for (std::size_t b = 0; b < ow; ++b) {
        const std::size_t r1 = std::min(h, (a + 1) * s), c1 = std::min(w, (b + 1) * s);
        const T inv = T(1) / static_cast<T>((r1 - a * s) * (c1 - b * s));
        T* o = out.ptr() + ((n * oh + a) * ow + b) * c;
        for (std::size_t r = a * s; r < r1; ++r)
          for (std::size_t q = b * s; q < c1; ++q) {
            const T* in = x.ptr() + ((n * h + r) * w + q) * c;
            for (std::size_t j = 0; j < c; ++j) o[j] += in[j] * inv;
          }
      }
  return out;
}

namespace ops {

template <class T>
Var<T> unfold(const Var<T>& x, const WindowGeometry& g) {
  return x.tape().record(volo::unfold(x.value(), g), {x},
                         [x, g](Tape<T>& t, const Tensor<T>& grad, const Tensor<T>&) {
                           detail::add_into(t.grad_buffer(x), volo::fold(grad, g));
                         });
}

template <class T>
Var<T> fold(const Var<T>& y, const WindowGeometry& g) {
  return y.tape().record(volo::fold(y.value(), g), {y},
                         [y, g](Tape<T>& t, const Tensor<T>& grad, const Tensor<T>&) {
                           detail::add_into(t.grad_buffer(y), volo::unfold(grad, g));
                         });
}

template <class T>
Var<T> avg_pool(const Var<T>& x, std::size_t s) {
  const Shape in_shape = x.shape();
  return x.tape().record(
      volo::avg_pool(x.value(), s), {x},
      [x, s, in_shape](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const std::size_t batch = in_shape[0], h = in_shape[1], w = in_shape[2],
                          c = in_shape[3];
        const std::size_t oh = g.extent(1), ow = g.extent(2);
        Tensor<T>& dx = t.grad_buffer(x);
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t a = 0; a < oh; ++a)
            for (std::size_t b = 0; b < ow; ++b) {
              const std::size_t r1 = std::min(h, (a + 1) * s), c1 = std::min(w, (b + 1) * s);
              const T inv = T(1) / static_cast<T>((r1 - a * s) * (c1 - b * s));
              const T* gi = g.ptr() + ((n * oh + a) * ow + b) * c;
              for (std::size_t r = a * s; r < r1; ++r)
                for (std::size_t q = b * s; q < c1; ++q) {
                  T* d = dx.ptr() + ((n * h + r) * w + q) * c;
                  for (std::size_t j = 0; j < c; ++j) d[j] += gi[j] * inv;
                }
            }
      });
}

/// Non-overlapping p x p patches: x[B, H, W, C] -> [B, H/p, W/p, p*p*C],
/// patch entries ordered (row, column, channel).
template <class T>
Var<T> patchify(const Var<T>& x, std::size_t p) {
  const auto& s = x.shape();
  if (s.size() != 4 || p == 0 || s[1] % p != 0 || s[2] % p != 0) {
    throw ShapeError("patchify: grid " + to_string(s) + " is not divisible by patch size " +
                     std::to_string(p));
  }
  const std::size_t b = s[0], h = s[1] / p, w = s[2] / p, c = s[3];
  auto r = reshape(x, {b, h, p, w, p, c});
  r = permute(r, {0, 1, 3, 2, 4, 5});
  return reshape(r, {b, h, w, p * p * c});
}

}  // namespace ops
}  // namespace volo
