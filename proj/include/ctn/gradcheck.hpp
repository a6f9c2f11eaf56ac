#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ctn/rng.hpp"

namespace ctn {

/// One checkable buffer: values get perturbed in place, grads hold the
/// analytic gradient populated by the caller's backward pass.
struct GradCheckItem {
  std::string name;
  double* values = nullptr;
  const double* grads = nullptr;
  std::size_t count = 0;
};

struct GradCheckCoord {
  std::string item;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckCoord> worst;  // one entry per item
  double max_rel_err = 0;
  std::size_t coords_checked = 0;

  bool pass(double tol) const { return max_rel_err <= tol; }
};

/// Central-difference check of analytic gradients. `f` must recompute the
/// scalar objective from the current buffer contents (and be pure: fixed
/// dropout masks, no running-stat updates). Large tensors are subsampled.
inline GradCheckReport grad_check(const std::function<double()>& f,
                                  const std::vector<GradCheckItem>& items, double h = 1e-5,
                                  std::size_t max_coords_per_item = 64,
                                  std::uint64_t seed = 0x9d5c) {
  GradCheckReport report;
  Rng rng(seed);
  for (const GradCheckItem& item : items) {
    std::vector<std::size_t> idx(item.count);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    if (item.count > max_coords_per_item) {
      rng.shuffle(idx);
      idx.resize(max_coords_per_item);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckCoord worst;
    worst.item = item.name;
    worst.rel_err = -1;
    for (std::size_t i : idx) {
      const double orig = item.values[i];
      item.values[i] = orig + h;
      const double fp = f();
      item.values[i] = orig - h;
      const double fm = f();
      item.values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = item.grads[i];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      const double rel = std::abs(numeric - analytic) / denom;
      ++report.coords_checked;
      if (rel > worst.rel_err) {
        worst.index = i;
        worst.analytic = analytic;
        worst.numeric = numeric;
        worst.rel_err = rel;
      }
    }
    if (worst.rel_err < 0) worst.rel_err = 0;
    report.max_rel_err = std::max(report.max_rel_err, worst.rel_err);
    report.worst.push_back(worst);
  }
  return report;
}

}  // namespace ctn
