#pragma once

// Independent definitional reference implementations used as test oracles.
// These stay deliberately naive and share no code with the library paths
// they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ctn/tensor.hpp"

namespace ctn_ref {

/// Naive grouped cross-correlation: explicit loops over every index, with
/// an explicitly materialized zero-padded input.
template <typename T>
ctn::Tensor<T> conv1d_naive(const ctn::Tensor<T>& x, const ctn::Tensor<T>& w,
                            const ctn::Tensor<T>& b, std::size_t groups, std::size_t pad) {
  const std::size_t B = x.extent(0), cin = x.extent(1), L = x.extent(2);
  const std::size_t cout = w.extent(0), cin_g = w.extent(1), k = w.extent(2);
  const std::size_t lpad = L + 2 * pad;
  const std::size_t lout = lpad - k + 1;
  const std::size_t cout_g = cout / groups;
  ctn::Tensor<T> y({B, cout, lout});
  for (std::size_t n = 0; n < B; ++n) {
    std::vector<std::vector<T>> xp(cin, std::vector<T>(lpad, T(0)));
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t t = 0; t < L; ++t) xp[c][t + pad] = x.at3(n, c, t);
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const std::size_t g = oc / cout_g;
      for (std::size_t t = 0; t < lout; ++t) {
        T acc = b[oc];
        for (std::size_t ic = 0; ic < cin_g; ++ic)
          for (std::size_t j = 0; j < k; ++j)
            acc += w.at3(oc, ic, j) * xp[g * cin_g + ic][t + j];
        y.at3(n, oc, t) = acc;
      }
    }
  }
  return y;
}

inline double mse_naive(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / double(a.size());
}

inline double mae_naive(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / double(a.size());
}

inline double accuracy_naive(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return double(hits) / double(pred.size());
}

/// Macro F1 from an explicit confusion matrix. A class with no predictions
/// and no instances contributes F1 = 0.
inline double macro_f1_naive(const std::vector<int>& pred, const std::vector<int>& truth,
                             int num_classes) {
  std::vector<std::vector<std::size_t>> cm(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) cm[truth[i]][pred[i]]++;
  double total = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::size_t tp = cm[c][c], fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o != c) {
        fp += cm[o][c];
        fn += cm[c][o];
      }
    }
    double f1 = 0;
    if (tp + fp + fn > 0) {
      const double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
      const double r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
      f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    total += f1;
  }
  return total / double(num_classes);
}

}  // namespace ctn_ref
