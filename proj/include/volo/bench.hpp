// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "volo/attention.hpp"

namespace volo {

struct BenchRow {
  AttentionKind kind;
  CostQuery shape;
  std::size_t repetitions = 0;
  double median_ms = 0.0;
  std::uint64_t analytic_madds = 0;
  std::uint64_t measured_madds = 0;
};

/// Median single-forward wall time (32-bit, batch 1, stride 1) of each layer
/// kind on each shape. Jobs are spread over `threads` workers; the row order is
/// kinds-major regardless of the thread count.
inline std::vector<BenchRow> run_bench(const std::vector<AttentionKind>& kinds,
                                       const std::vector<CostQuery>& shapes,
                                       std::size_t repetitions, std::size_t threads = 1,
                                       std::uint64_t seed = 0) {
  repetitions = std::max<std::size_t>(1, repetitions);
  std::vector<BenchRow> rows;
  for (auto k : kinds)
    for (const auto& s : shapes) {
      s.validate();
      rows.push_back({k, s, repetitions, 0.0, madds(s, k), 0});
    }

  auto job = [&](BenchRow& row) {
    Rng rng(seed);
    const auto& q = row.shape;
    const std::size_t h = q.height, w = q.width, c = q.channels;
    auto time_it = [&](auto&& layer, Tensor<float> x) {
      std::vector<double> ms;
      for (std::size_t r = 0; r < repetitions; ++r) {
        Tape<float> tape;
        tape.set_grad_enabled(false);
        auto in = tape.constant(x);
        const auto t0 = std::chrono::steady_clock::now();
        layer.forward(tape, in);
        ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count());
        row.measured_madds = tape.counter().total();
      }
      std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
      row.median_ms = ms[ms.size() / 2];
    };
    switch (row.kind) {
      case AttentionKind::self_attention:
        time_it(SelfAttention<float>::create(c, q.heads, rng),
                uniform<float>({1, h * w, c}, -1, 1, rng));
        break;
      case AttentionKind::local_self_attention:
        time_it(LocalSelfAttention<float>::create(c, q.heads, q.kernel, rng),
                uniform<float>({1, h, w, c}, -1, 1, rng));
        break;
      case AttentionKind::outlook:
        time_it(OutlookAttention<float>::create(c, q.heads, q.kernel, 1, rng),
                uniform<float>({1, h, w, c}, -1, 1, rng));
        break;
      case AttentionKind::convolution:
        time_it(Conv2d<float>::same(c, c, q.kernel, rng), uniform<float>({1, h, w, c}, -1, 1, rng));
        break;
    }
  };

  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, rows.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) job(rows[i]);
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "kind,height,width,channels,kernel,heads,repetitions,median_ms,analytic_madds,"
        "measured_madds\n";
  for (const auto& r : rows)
    os << to_string(r.kind) << ',' << r.shape.height << ',' << r.shape.width << ','
       << r.shape.channels << ',' << r.shape.kernel << ',' << r.shape.heads << ','
       << r.repetitions << ',' << r.median_ms << ',' << r.analytic_madds << ','
       << r.measured_madds << '\n';
  return os.str();
}

}  // namespace volo
