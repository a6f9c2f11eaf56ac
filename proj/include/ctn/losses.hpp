#pragma once

#include <cmath>
#include <vector>

#include "ctn/tensor.hpp"

namespace ctn {

template <typename T>
struct LossResult {
  double value = 0;
  Tensor<T> grad;  // d(loss)/d(prediction)
};

/// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross entropy expects [B,K] logits");
  const std::size_t B = logits.extent(0), K = logits.extent(1);
  if (labels.size() != B) throw ShapeError("cross entropy label count mismatch");
  LossResult<T> res;
  res.grad = Tensor<T>(logits.shape());
  double total = 0;
  for (std::size_t n = 0; n < B; ++n) {
    const T* row = &logits.at2(n, 0);
    double mx = row[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, double(row[k]));
    double sum = 0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(double(row[k]) - mx);
    const double lse = mx + std::log(sum);
    const int y = labels[n];
    if (y < 0 || std::size_t(y) >= K) throw ShapeError("label out of range");
    total += lse - double(row[y]);
    for (std::size_t k = 0; k < K; ++k) {
      double p = std::exp(double(row[k]) - lse);
      res.grad.at2(n, k) = static_cast<T>((p - (std::size_t(y) == k ? 1.0 : 0.0)) / double(B));
    }
  }
  res.value = total / double(B);
  return res;
}

/// Mean squared error over all elements.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse loss");
  LossResult<T> res;
  res.grad = Tensor<T>(pred.shape());
  double total = 0;
  const double inv = 1.0 / double(pred.numel());
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = double(pred[i]) - double(target[i]);
    total += d * d;
    res.grad[i] = static_cast<T>(2.0 * d * inv);
  }
  res.value = total * inv;
  return res;
}

}  // namespace ctn
