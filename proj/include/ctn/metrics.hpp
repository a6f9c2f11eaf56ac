#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ctn/tensor.hpp"

namespace ctn {

template <typename T>
double mse(const Tensor<T>& pred, const Tensor<T>& truth) {
  require_same_shape(pred, truth, "mse");
  if (pred.numel() == 0) throw ShapeError("mse on empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = double(pred[i]) - double(truth[i]);
    s += d * d;
  }
  return s / double(pred.numel());
}

template <typename T>
double mae(const Tensor<T>& pred, const Tensor<T>& truth) {
  require_same_shape(pred, truth, "mae");
  if (pred.numel() == 0) throw ShapeError("mae on empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i)
    s += std::abs(double(pred[i]) - double(truth[i]));
  return s / double(pred.numel());
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t B = logits.extent(0), K = logits.extent(1);
  std::vector<int> out(B, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 1; k < K; ++k)
      if (logits.at2(b, k) > logits.at2(b, out[b])) out[b] = int(k);
  return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw ShapeError("accuracy needs matched non-empty label lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return double(hits) / double(pred.size());
}

template <typename T>
double accuracy(const Tensor<T>& logits, const std::vector<int>& truth) {
  return accuracy(argmax_rows(logits), truth);
}

/// Unweighted mean over classes of 2PR/(P+R). A class with no predictions
/// and no instances contributes 0.
inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                       std::size_t num_classes) {
  if (pred.empty() || pred.size() != truth.size())
    throw ShapeError("macro_f1 needs matched non-empty label lists");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double total = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = double(2 * tp[c] + fp[c] + fn[c]);
    total += denom > 0 ? 2.0 * double(tp[c]) / denom : 0.0;
  }
  return total / double(num_classes);
}

template <typename T>
double macro_f1(const Tensor<T>& logits, const std::vector<int>& truth) {
  return macro_f1(argmax_rows(logits), truth, logits.extent(1));
}

}  // namespace ctn
