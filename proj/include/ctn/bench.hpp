#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ctn/model.hpp"
#include "ctn/rng.hpp"

namespace ctn {

struct BenchReport {
  double dual_median_ms = 0, dual_p95_ms = 0;
  double merged_median_ms = 0, merged_p95_ms = 0;
  std::size_t batch = 0;
  std::size_t repeats = 0;

  nlohmann::json to_json() const {
    return {{"dual_median_ms", dual_median_ms},     {"dual_p95_ms", dual_p95_ms},
            {"merged_median_ms", merged_median_ms}, {"merged_p95_ms", merged_p95_ms},
            {"batch", batch},                       {"repeats", repeats}};
  }
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

template <typename T>
double time_one(Model<T>& model, const Tensor<T>& input) {
  const auto t0 = std::chrono::steady_clock::now();
  volatile T sink = model.forward(input)[0];
  (void)sink;
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace detail

/// Median and p95 eval-mode forward latency of the dual-branch form against
/// its merged export. The two forms are interleaved on identical seeded
/// inputs so machine drift hits both alike; warmup iterations are not
/// counted.
template <typename T>
BenchReport bench_model(Model<T>& dual, std::size_t batch, std::size_t repeats,
                        std::uint64_t seed, std::size_t warmup = 3) {
  if (dual.merged()) throw ConfigError("bench needs an unmerged checkpoint to compare forms");
  dual.set_eval();
  Model<T> merged = dual;
  merged.merge_blocks();

  Rng rng(splitmix64(seed ^ 0xbe9c));
  std::vector<Tensor<T>> inputs;
  for (std::size_t i = 0; i < repeats + warmup; ++i) {
    Tensor<T> x({batch, dual.config().channels, dual.config().series_len});
    for (std::size_t k = 0; k < x.numel(); ++k) x[k] = static_cast<T>(rng.normal());
    inputs.push_back(std::move(x));
  }

  std::vector<double> dual_ms, merged_ms;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double d = detail::time_one(dual, inputs[i]);
    const double m = detail::time_one(merged, inputs[i]);
    if (i >= warmup) {
      dual_ms.push_back(d);
      merged_ms.push_back(m);
    }
  }

  BenchReport rep;
  rep.batch = batch;
  rep.repeats = repeats;
  rep.dual_median_ms = detail::percentile(dual_ms, 0.5);
  rep.dual_p95_ms = detail::percentile(dual_ms, 0.95);
  rep.merged_median_ms = detail::percentile(merged_ms, 0.5);
  rep.merged_p95_ms = detail::percentile(merged_ms, 0.95);
  return rep;
}

}  // namespace ctn
