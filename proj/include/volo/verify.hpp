// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "volo/attention.hpp"
#include "volo/gradcheck.hpp"
#include "volo/oracle.hpp"

namespace volo {

struct OracleOptions {
  std::size_t seeds = 100;
  std::uint64_t base_seed = 0;
  std::size_t max_extent = 8;    // H, W drawn from [1, max_extent]
  std::size_t max_channels = 12;
  double tolerance = 1e-6;
};

/// Optimized layers against the brute-force references on random small
/// instances, 64-bit throughout. One case per layer kind per seed.
inline oracle::OracleReport run_oracle_suite(const OracleOptions& opt = {}) {
  oracle::OracleReport report;
  report.tolerance = opt.tolerance;
  for (std::size_t i = 0; i < opt.seeds; ++i) {
    const std::uint64_t seed = opt.base_seed + i;
    Rng rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    const std::size_t h = pick(1, opt.max_extent), w = pick(1, opt.max_extent);
    const std::size_t heads = pick(1, 3);
    const std::size_t c = heads * pick(1, std::max<std::size_t>(1, opt.max_channels / heads));
    const std::size_t k = 2 * pick(0, 2) + 1;
    const std::string shape = std::to_string(h) + "x" + std::to_string(w) + "x" +
                              std::to_string(c) + " N=" + std::to_string(heads) +
                              " K=" + std::to_string(k);
    const auto x = uniform<double>({h, w, c}, -1.0, 1.0, rng);

    {
      const std::size_t s = pick(1, 3);
      auto layer = OutlookAttention<double>::create(c, heads, k, s, rng);
      gradcheck::randomize(layer, rng);
      report.add("outlook attention", seed, shape + " s=" + std::to_string(s),
                 oracle::compare(outlook_attention(x, layer), oracle::outlook_attention(x, layer)));
    }
    {
      auto layer = LocalSelfAttention<double>::create(c, heads, k, rng);
      gradcheck::randomize(layer, rng);
      report.add("local self-attention", seed, shape,
                 oracle::compare(local_self_attention(x, layer),
                                 oracle::local_self_attention(x, layer)));
    }
    {
      auto layer = SelfAttention<double>::create(c, heads, rng);
      gradcheck::randomize(layer, rng);
      const auto tokens = x.reshaped({h * w, c});
      report.add("self-attention", seed, shape,
                 oracle::compare(self_attention(tokens, layer),
                                 oracle::self_attention(tokens, layer)));
    }
    {
      const std::size_t cout = pick(1, opt.max_channels);
      auto layer = Conv2d<double>::same(c, cout, k, rng);
      gradcheck::randomize(layer, rng);
      report.add("convolution", seed, shape + " Cout=" + std::to_string(cout),
                 oracle::compare(conv_layer(x, layer), oracle::conv_layer(x, layer)));
    }
    {
      const std::size_t s = pick(1, 3);
      const auto g = WindowGeometry::centered(k, s, h, w);
      const auto y = uniform<double>({g.windows(), g.offsets(), c}, -1.0, 1.0, rng);
      report.add("unfold", seed, shape + " s=" + std::to_string(s),
                 oracle::compare(volo::unfold3(x, g), oracle::unfold(x, g)));
      report.add("fold", seed, shape + " s=" + std::to_string(s),
                 oracle::compare(volo::fold3(y, g), oracle::fold(y, g)));
    }
  }
  return report;
}

}  // namespace volo
