#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ctn/tensor.hpp"

namespace ctn {

/// A trainable tensor with its accumulated gradient. Gradients add up across
/// backward passes until zero_grad().
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  explicit Param(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.zero(); }
  std::size_t numel() const { return value.numel(); }
};

/// Named views over a module tree: trainable params plus persistent buffers
/// (batch-norm running statistics). Registration order is construction order,
/// which fixes the optimizer slot order and the checkpoint directory order.
template <typename T>
struct StateDict {
  std::vector<std::pair<std::string, Param<T>*>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add_param(std::string name, Param<T>& p) { params.emplace_back(std::move(name), &p); }
  void add_buffer(std::string name, Tensor<T>& t) { buffers.emplace_back(std::move(name), &t); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto& [name, p] : params) n += p->numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : params) p->zero_grad();
  }
};

}  // namespace ctn
