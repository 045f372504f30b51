// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brute-force references. Everything below is plain index loops over raw
// buffers; the only things taken from the rest of the library are the Tensor
// container, the geometry struct and the parameter values of the layers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "volo/attention.hpp"
#include "volo/tensor.hpp"
#include "volo/window.hpp"

namespace volo::oracle {

namespace detail {

// y[t, :] = x[t, :] * w (+ b), written out longhand.
inline std::vector<double> affine(const std::vector<double>& x, std::size_t tokens,
                                  std::size_t cin, const Tensor<double>& w,
                                  const Tensor<double>* b) {
  const std::size_t cout = w.extent(1);
  std::vector<double> y(tokens * cout, 0.0);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < cin; ++i) acc += x[t * cin + i] * w[i * cout + o];
      y[t * cout + o] = acc;
    }
  }
  return y;
}

inline void softmax_inplace(std::vector<double>& v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double e : v) hi = std::max(hi, e);
  double total = 0.0;
  for (double& e : v) {
    e = std::exp(e - hi);
    total += e;
  }
  for (double& e : v) e /= total;
}

inline std::vector<double> flat(const Tensor<double>& x) {
  return std::vector<double>(x.data().begin(), x.data().end());
}

// Position of kernel offset (di, dj) for the window with grid index (oi, oj);
// false when it lands in the padding.
inline bool locate(const WindowGeometry& g, std::size_t oi, std::size_t oj, std::size_t di,
                   std::size_t dj, std::size_t& r, std::size_t& c) {
  const long rr = static_cast<long>(oi * g.stride + di) - static_cast<long>(g.padding);
  const long cc = static_cast<long>(oj * g.stride + dj) - static_cast<long>(g.padding);
  if (rr < 0 || cc < 0 || rr >= static_cast<long>(g.height) || cc >= static_cast<long>(g.width))
    return false;
  r = static_cast<std::size_t>(rr);
  c = static_cast<std::size_t>(cc);
  return true;
}

}  // namespace detail

/// x [H, W, C] -> [h*w, K*K, C], zeros outside the map.
inline Tensor<double> unfold(const Tensor<double>& x, const WindowGeometry& g) {
  const std::size_t c = x.extent(2), k = g.kernel;
  const std::size_t oh = g.out_height(), ow = g.out_width();
  Tensor<double> out({oh * ow, k * k, c});
  for (std::size_t oi = 0; oi < oh; ++oi)
    for (std::size_t oj = 0; oj < ow; ++oj)
      for (std::size_t di = 0; di < k; ++di)
        for (std::size_t dj = 0; dj < k; ++dj) {
          std::size_t r, cc;
          if (!detail::locate(g, oi, oj, di, dj, r, cc)) continue;
          for (std::size_t ch = 0; ch < c; ++ch)
            out.at({oi * ow + oj, di * k + dj, ch}) = x.at({r, cc, ch});
        }
  return out;
}

/// y [h*w, K*K, C] -> [H, W, C], summing every entry onto its location.
inline Tensor<double> fold(const Tensor<double>& y, const WindowGeometry& g) {
  const std::size_t c = y.extent(2), k = g.kernel;
  const std::size_t oh = g.out_height(), ow = g.out_width();
  Tensor<double> out({g.height, g.width, c});
  for (std::size_t oi = 0; oi < oh; ++oi)
    for (std::size_t oj = 0; oj < ow; ++oj)
      for (std::size_t di = 0; di < k; ++di)
        for (std::size_t dj = 0; dj < k; ++dj) {
          std::size_t r, cc;
          if (!detail::locate(g, oi, oj, di, dj, r, cc)) continue;
          for (std::size_t ch = 0; ch < c; ++ch)
            out.at({r, cc, ch}) += y.at({oi * ow + oj, di * k + dj, ch});
        }
  return out;
}

/// Outlook attention on one token map x [H, W, C].
inline Tensor<double> outlook_attention(const Tensor<double>& x,
                                        const OutlookAttention<double>& layer) {
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const std::size_t k = layer.kernel, kk = k * k, s = layer.stride, heads = layer.heads;
  const std::size_t ch = c / heads, pad = k / 2;
  const std::size_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
  const WindowGeometry g{k, pad, s, h, w};

  const auto v = detail::affine(detail::flat(x), h * w, c, layer.v_weight.value, nullptr);

  // anchor token of each window: mean of its s x s cell
  std::vector<double> anchor(oh * ow * c, 0.0);
  for (std::size_t oi = 0; oi < oh; ++oi)
    for (std::size_t oj = 0; oj < ow; ++oj) {
      std::size_t count = 0;
      for (std::size_t a = oi * s; a < std::min(h, oi * s + s); ++a)
        for (std::size_t b = oj * s; b < std::min(w, oj * s + s); ++b) {
          ++count;
          for (std::size_t i = 0; i < c; ++i) anchor[(oi * ow + oj) * c + i] += x.at({a, b, i});
        }
      for (std::size_t i = 0; i < c; ++i) anchor[(oi * ow + oj) * c + i] /= double(count);
    }
  const auto logits = detail::affine(anchor, oh * ow, c, layer.attn_weight.value,
                                     &layer.attn_bias.value);
  const std::size_t nl = heads * kk * kk;

  std::vector<double> y(h * w * c, 0.0);
  for (std::size_t oi = 0; oi < oh; ++oi)
    for (std::size_t oj = 0; oj < ow; ++oj)
      for (std::size_t n = 0; n < heads; ++n)
        for (std::size_t p = 0; p < kk; ++p) {
          std::size_t rp, cp;
          if (!detail::locate(g, oi, oj, p / k, p % k, rp, cp)) continue;
          std::vector<double> row(kk);
          for (std::size_t q = 0; q < kk; ++q)
            row[q] = logits[(oi * ow + oj) * nl + n * kk * kk + p * kk + q];
          detail::softmax_inplace(row);
          for (std::size_t q = 0; q < kk; ++q) {
            std::size_t rq, cq;
            if (!detail::locate(g, oi, oj, q / k, q % k, rq, cq)) continue;
            for (std::size_t i = 0; i < ch; ++i)
              y[(rp * w + cp) * c + n * ch + i] += row[q] * v[(rq * w + cq) * c + n * ch + i];
          }
        }

  auto out = detail::affine(y, h * w, c, layer.proj_weight.value, &layer.proj_bias.value);
  return Tensor<double>({h, w, c}, std::move(out));
}

/// Local self-attention on x [H, W, C]; padded neighbours take no part.
inline Tensor<double> local_self_attention(const Tensor<double>& x,
                                           const LocalSelfAttention<double>& layer) {
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const std::size_t heads = layer.heads, ch = c / heads, k = layer.kernel;
  const long r = static_cast<long>(k / 2);
  const auto xs = detail::flat(x);
  const auto q = detail::affine(xs, h * w, c, layer.q_weight.value, nullptr);
  const auto kv = detail::affine(xs, h * w, c, layer.k_weight.value, nullptr);
  const auto v = detail::affine(xs, h * w, c, layer.v_weight.value, nullptr);
  const double scale = 1.0 / std::sqrt(double(ch));

  std::vector<double> y(h * w * c, 0.0);
  for (long i = 0; i < long(h); ++i)
    for (long j = 0; j < long(w); ++j)
      for (std::size_t n = 0; n < heads; ++n) {
        std::vector<std::size_t> nbrs;
        for (long di = -r; di <= r; ++di)
          for (long dj = -r; dj <= r; ++dj) {
            const long a = i + di, b = j + dj;
            if (a >= 0 && b >= 0 && a < long(h) && b < long(w)) nbrs.push_back(a * w + b);
          }
        const std::size_t self = i * w + j;
        std::vector<double> att(nbrs.size());
        for (std::size_t m = 0; m < nbrs.size(); ++m) {
          double dot = 0.0;
          for (std::size_t e = 0; e < ch; ++e)
            dot += q[self * c + n * ch + e] * kv[nbrs[m] * c + n * ch + e];
          att[m] = dot * scale;
        }
        detail::softmax_inplace(att);
        for (std::size_t m = 0; m < nbrs.size(); ++m)
          for (std::size_t e = 0; e < ch; ++e)
            y[self * c + n * ch + e] += att[m] * v[nbrs[m] * c + n * ch + e];
      }
  auto out = detail::affine(y, h * w, c, layer.proj_weight.value, &layer.proj_bias.value);
  return Tensor<double>({h, w, c}, std::move(out));
}

/// Full multi-head attention on tokens [L, C].
inline Tensor<double> self_attention(const Tensor<double>& x, const SelfAttention<double>& layer) {
  const std::size_t l = x.extent(0), c = x.extent(1);
  const std::size_t heads = layer.heads, ch = c / heads;
  const auto xs = detail::flat(x);
  const auto q = detail::affine(xs, l, c, layer.q_weight.value, nullptr);
  const auto k = detail::affine(xs, l, c, layer.k_weight.value, nullptr);
  const auto v = detail::affine(xs, l, c, layer.v_weight.value, nullptr);
  const double scale = 1.0 / std::sqrt(double(ch));
  std::vector<double> y(l * c, 0.0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t n = 0; n < heads; ++n) {
      std::vector<double> att(l);
      for (std::size_t j = 0; j < l; ++j) {
        double dot = 0.0;
        for (std::size_t e = 0; e < ch; ++e) dot += q[i * c + n * ch + e] * k[j * c + n * ch + e];
        att[j] = dot * scale;
      }
      detail::softmax_inplace(att);
      for (std::size_t j = 0; j < l; ++j)
        for (std::size_t e = 0; e < ch; ++e) y[i * c + n * ch + e] += att[j] * v[j * c + n * ch + e];
    }
  auto out = detail::affine(y, l, c, layer.proj_weight.value, &layer.proj_bias.value);
  return Tensor<double>({l, c}, std::move(out));
}

/// Direct cross-correlation on x [H, W, Cin].
inline Tensor<double> conv_layer(const Tensor<double>& x, const Conv2d<double>& layer) {
  const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
  const std::size_t k = layer.kernel, s = layer.stride, pad = layer.padding;
  const std::size_t cout = layer.out_channels;
  const std::size_t oh = (h + 2 * pad - k) / s + 1, ow = (w + 2 * pad - k) / s + 1;
  const auto& wt = layer.weight.value;
  Tensor<double> out({oh, ow, cout});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = layer.bias.value[o];
        for (std::size_t di = 0; di < k; ++di)
          for (std::size_t dj = 0; dj < k; ++dj) {
            const long a = long(i * s + di) - long(pad), b = long(j * s + dj) - long(pad);
            if (a < 0 || b < 0 || a >= long(h) || b >= long(w)) continue;
            for (std::size_t e = 0; e < cin; ++e)
              acc += x.at({std::size_t(a), std::size_t(b), e}) *
                     wt[((di * k + dj) * cin + e) * cout + o];
          }
        out.at({i, j, o}) = acc;
      }
  return out;
}

/// Central differences (f(x+h) - f(x-h)) / 2h for every coordinate of every
/// tensor in `params`. `f` must return a single-element tensor.
template <class Fn>
std::vector<Tensor<double>> finite_diff_grad(Fn&& f, const std::vector<Tensor<double>*>& params,
                                             double h = 1e-5) {
  auto eval = [&]() {
    const Tensor<double> r = f();
    if (r.size() != 1)
      throw ContractError("finite differences need a scalar function, got shape " +
                          to_string(r.shape()));
    return r[0];
  };
  eval();
  std::vector<Tensor<double>> grads;
  for (Tensor<double>* p : params) {
    Tensor<double> g(p->shape());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = (*p)[i];
      (*p)[i] = keep + h;
      const double up = eval();
      (*p)[i] = keep - h;
      const double down = eval();
      (*p)[i] = keep;
      g[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

struct Discrepancy {
  double max_abs = 0.0;
  double max_rel = 0.0;
};

/// Elementwise errors; relative uses max(|a|, |b|, 1e-12) as denominator.
inline Discrepancy compare(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw ShapeError("compared tensors differ in shape", a.shape(), b.shape());
  Discrepancy d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12});
    d.max_abs = std::max(d.max_abs, diff);
    d.max_rel = std::max(d.max_rel, diff / denom);
  }
  return d;
}

struct OracleCase {
  std::string name;
  std::uint64_t seed = 0;
  std::string shape;
  double max_abs = 0.0;
  double max_rel = 0.0;
  bool pass = false;
};

struct OracleReport {
  double tolerance = 1e-6;
  std::vector<OracleCase> cases;

  void add(std::string name, std::uint64_t seed, std::string shape, const Discrepancy& d) {
    cases.push_back({std::move(name), seed, std::move(shape), d.max_abs, d.max_rel,
                     d.max_rel <= tolerance});
  }

  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const OracleCase& c) { return c.pass; });
  }
  double max_abs() const {
    double m = 0.0;
    for (const auto& c : cases) m = std::max(m, c.max_abs);
    return m;
  }
  double max_rel() const {
    double m = 0.0;
    for (const auto& c : cases) m = std::max(m, c.max_rel);
    return m;
  }
  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (const auto& c : cases)
      if (std::find(s.begin(), s.end(), c.seed) == s.end()) s.push_back(c.seed);
    return s;
  }

  /// One row per case name: count, failures, worst errors.
  std::string table() const {
    std::vector<std::string> names;
    for (const auto& c : cases)
      if (std::find(names.begin(), names.end(), c.name) == names.end()) names.push_back(c.name);
    std::ostringstream os;
    os << "case                    runs  fail   max_abs       max_rel\n";
    for (const auto& n : names) {
      std::size_t runs = 0, fails = 0;
      double ma = 0.0, mr = 0.0;
      for (const auto& c : cases) {
        if (c.name != n) continue;
        ++runs;
        fails += c.pass ? 0 : 1;
        ma = std::max(ma, c.max_abs);
        mr = std::max(mr, c.max_rel);
      }
      char line[160];
      std::snprintf(line, sizeof line, "%-22s %5zu %5zu   %.3e     %.3e\n", n.c_str(), runs,
                    fails, ma, mr);
      os << line;
    }
    os << (passed() ? "PASS" : "FAIL") << " (tolerance " << tolerance << " relative)\n";
    return os.str();
  }

  nlohmann::json json() const {
    nlohmann::json j;
    j["tolerance"] = tolerance;
    j["passed"] = passed();
    j["max_abs"] = max_abs();
    j["max_rel"] = max_rel();
    j["seeds"] = seeds();
    auto& arr = j["cases"] = nlohmann::json::array();
    for (const auto& c : cases)
      arr.push_back({{"name", c.name},
                     {"seed", c.seed},
                     {"shape", c.shape},
                     {"max_abs", c.max_abs},
                     {"max_rel", c.max_rel},
                     {"pass", c.pass}});
    return j;
  }
};

}  // namespace volo::oracle
