#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctn/layers.hpp"
#include "ctn/param.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

/// Per-block kernel sizes; consecutive equal sizes form a stage. One small
/// parallel kernel is shared across all blocks.
struct StagePlan {
  std::vector<std::size_t> kernel_sizes = {7, 7, 13, 13, 19, 19};
  std::size_t small_kernel = 5;

  void validate() const {
    if (kernel_sizes.empty()) throw ConfigError("stage plan has no kernel sizes");
    for (std::size_t k : kernel_sizes)
      if (k % 2 == 0) throw ConfigError("stage plan kernel " + std::to_string(k) + " is even");
    if (small_kernel % 2 == 0)
      throw ConfigError("small kernel " + std::to_string(small_kernel) + " is even");
    const std::size_t kmin = *std::min_element(kernel_sizes.begin(), kernel_sizes.end());
    if (small_kernel >= kmin)
      throw ConfigError("small kernel " + std::to_string(small_kernel) +
                        " must be below the smallest plan kernel " + std::to_string(kmin));
  }

  std::size_t depth() const { return kernel_sizes.size(); }

  std::size_t stage_count() const {
    std::size_t stages = kernel_sizes.empty() ? 0 : 1;
    for (std::size_t i = 1; i < kernel_sizes.size(); ++i)
      stages += kernel_sizes[i] != kernel_sizes[i - 1];
    return stages;
  }
};

/// Fold a batch norm that FOLLOWS a convolution into the conv weights:
/// BN(conv(x)) == conv'(x) with w' = w * g / sqrt(var + eps) per out channel
/// and b' = (b - mean) * g / sqrt(var + eps) + beta.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> fold_bn(const Tensor<T>& w, const Tensor<T>& b,
                                        const BatchNorm1d<T>& bn) {
  if (bn.training()) throw ConfigError("fold_bn requires eval-mode batch norm");
  if (!bn.has_stats()) throw ConfigError("fold_bn requires populated running stats");
  const std::size_t cout = w.extent(0);
  if (bn.channels() != cout || b.extent(0) != cout)
    throw ShapeError("fold_bn channel mismatch");
  Tensor<T> wf(w.shape()), bf(b.shape());
  const std::size_t per = w.numel() / cout;
  for (std::size_t c = 0; c < cout; ++c) {
    const T scale = bn.gamma.value[c] /
                    static_cast<T>(std::sqrt(double(bn.running_var[c]) + double(bn.eps())));
    for (std::size_t i = 0; i < per; ++i) wf[c * per + i] = w[c * per + i] * scale;
    bf[c] = (b[c] - bn.running_mean[c]) * scale + bn.beta.value[c];
  }
  return {std::move(wf), std::move(bf)};
}

/// Zero-pad a depthwise kernel [C,1,ks] symmetrically to length kl.
template <typename T>
Tensor<T> pad_kernel(const Tensor<T>& w, std::size_t kl) {
  const std::size_t C = w.extent(0), ks = w.extent(2);
  if ((kl - ks) % 2 != 0) throw ShapeError("kernel padding must be symmetric");
  const std::size_t off = (kl - ks) / 2;
  Tensor<T> out({C, w.extent(1), kl});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < ks; ++j) out.at3(c, 0, off + j) = w.at3(c, 0, j);
  return out;
}

/// The fully convolutional block: a dual-branch depthwise sublayer
/// (large + small kernel, per-branch batch norm, GELU, learnable residual)
/// followed by a pointwise FFN sublayer (pre-norm, expand, GELU, dropout,
/// contract, learnable residual). merge() folds the norms and combines the
/// branches into one inference kernel.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;

  ConvBlock(std::size_t width, std::size_t k_large, std::size_t k_small, std::size_t ffn_ratio,
            T dropout, bool learnable_residual, bool ffn_residual_learnable, std::uint64_t seed)
      : width_(width),
        res_dw_(learnable_residual),
        drop_(dropout, derive_seed(seed, "dropout")),
        res_ffn_(learnable_residual && ffn_residual_learnable) {
    if (k_small >= k_large)
      throw ConfigError("small kernel " + std::to_string(k_small) +
                        " must be below the large kernel " + std::to_string(k_large));
    dw_large_ = Conv1d<T>::same(width, width, k_large, width, derive_seed(seed, "dw.large"));
    dw_small_ = Conv1d<T>::same(width, width, k_small, width, derive_seed(seed, "dw.small"));
    bn_large_ = BatchNorm1d<T>(width);
    bn_small_ = BatchNorm1d<T>(width);
    ffn_bn_ = BatchNorm1d<T>(width);
    ffn_up_ = Conv1d<T>::same(width, width * ffn_ratio, 1, 1, derive_seed(seed, "ffn.up"));
    ffn_down_ = Conv1d<T>::same(width * ffn_ratio, width, 1, 1, derive_seed(seed, "ffn.down"));
  }

  /// Z_dw = GELU(BN_l(conv_l(z)) + BN_s(conv_s(z))); out = z + alpha * Z_dw.
  Tensor<T> dw_forward(const Tensor<T>& z) {
    Tensor<T> sum;
    if (merged_) {
      sum = dw_merged_.forward(z);
    } else {
      Tensor<T> nl = bn_large_.forward(dw_large_.forward(z));
      Tensor<T> ns = bn_small_.forward(dw_small_.forward(z));
      require_same_shape(nl, ns, "dw branches");
      sum = std::move(nl);
      for (std::size_t i = 0; i < sum.numel(); ++i) sum[i] += ns[i];
    }
    return res_dw_.forward(z, act_dw_.forward(sum));
  }

  Tensor<T> dw_backward(const Tensor<T>& gy) {
    auto [gbase, gbranch] = res_dw_.backward(gy);
    Tensor<T> gsum = act_dw_.backward(gbranch);
    Tensor<T> gz = std::move(gbase);
    if (merged_) {
      Tensor<T> g = dw_merged_.backward(gsum);
      for (std::size_t i = 0; i < gz.numel(); ++i) gz[i] += g[i];
    } else {
      Tensor<T> gl = dw_large_.backward(bn_large_.backward(gsum));
      Tensor<T> gs = dw_small_.backward(bn_small_.backward(gsum));
      for (std::size_t i = 0; i < gz.numel(); ++i) gz[i] += gl[i] + gs[i];
    }
    return gz;
  }

  /// out = z + alpha_ffn * conv_down(dropout(GELU(conv_up(norm(z))))).
  Tensor<T> ffn_forward(const Tensor<T>& z) {
    Tensor<T> u = merged_ ? ffn_up_.forward(z) : ffn_up_.forward(ffn_bn_.forward(z));
    Tensor<T> v = ffn_down_.forward(drop_.forward(act_ffn_.forward(u)));
    return res_ffn_.forward(z, v);
  }

  Tensor<T> ffn_backward(const Tensor<T>& gy) {
    auto [gbase, gbranch] = res_ffn_.backward(gy);
    Tensor<T> gu = act_ffn_.backward(drop_.backward(ffn_down_.backward(gbranch)));
    Tensor<T> gz = std::move(gbase);
    Tensor<T> g = merged_ ? ffn_up_.backward(gu) : ffn_bn_.backward(ffn_up_.backward(gu));
    for (std::size_t i = 0; i < gz.numel(); ++i) gz[i] += g[i];
    return gz;
  }

  Tensor<T> forward(const Tensor<T>& z) { return ffn_forward(dw_forward(z)); }

  Tensor<T> backward(const Tensor<T>& gy) { return dw_backward(ffn_backward(gy)); }

  /// Fold the branch norms, zero-pad the small kernel and add it into the
  /// large one. The residual scales stay as they are; eval outputs are
  /// preserved within float tolerance.
  void merge() {
    if (merged_) throw ConfigError("block already merged");
    auto [wl, bl] = fold_bn(dw_large_.w.value, dw_large_.b.value, bn_large_);
    auto [ws, bs] = fold_bn(dw_small_.w.value, dw_small_.b.value, bn_small_);
    Tensor<T> wsp = pad_kernel(ws, dw_large_.kernel());
    dw_merged_ = Conv1d<T>::same(width_, width_, dw_large_.kernel(), width_, 0);
    for (std::size_t i = 0; i < wl.numel(); ++i) dw_merged_.w.value[i] = wl[i] + wsp[i];
    for (std::size_t c = 0; c < width_; ++c) dw_merged_.b.value[c] = bl[c] + bs[c];

    // The FFN pre-norm folds into the 1x1 expansion conv (exact: no padding).
    if (ffn_bn_.training() || !ffn_bn_.has_stats())
      throw ConfigError("merge requires eval-mode batch norms with stats");
    const std::size_t up = ffn_up_.out_channels();
    std::vector<T> scale(width_), shift(width_);
    for (std::size_t c = 0; c < width_; ++c) {
      scale[c] = ffn_bn_.gamma.value[c] /
                 static_cast<T>(std::sqrt(double(ffn_bn_.running_var[c]) + double(ffn_bn_.eps())));
      shift[c] = ffn_bn_.beta.value[c] - ffn_bn_.running_mean[c] * scale[c];
    }
    for (std::size_t o = 0; o < up; ++o) {
      T extra = 0;
      for (std::size_t c = 0; c < width_; ++c) {
        extra += ffn_up_.w.value.at3(o, c, 0) * shift[c];
        ffn_up_.w.value.at3(o, c, 0) *= scale[c];
      }
      ffn_up_.b.value[o] += extra;
    }

    dw_large_ = Conv1d<T>();
    dw_small_ = Conv1d<T>();
    bn_large_ = BatchNorm1d<T>();
    bn_small_ = BatchNorm1d<T>();
    ffn_bn_ = BatchNorm1d<T>();
    merged_ = true;
  }

  /// Allocate the merged layout without computing the fold (checkpoint load).
  void make_merged_skeleton() {
    if (merged_) return;
    dw_merged_ = Conv1d<T>::same(width_, width_, dw_large_.kernel(), width_, 0);
    dw_large_ = Conv1d<T>();
    dw_small_ = Conv1d<T>();
    bn_large_ = BatchNorm1d<T>();
    bn_small_ = BatchNorm1d<T>();
    ffn_bn_ = BatchNorm1d<T>();
    merged_ = true;
  }

  void set_training(bool training) {
    if (!merged_) {
      bn_large_.set_training(training);
      bn_small_.set_training(training);
      ffn_bn_.set_training(training);
    }
    drop_.set_training(training);
  }

  void set_track_running(bool track) {
    if (merged_) return;
    bn_large_.set_track_running(track);
    bn_small_.set_track_running(track);
    ffn_bn_.set_track_running(track);
  }

  void seed_bn_stats() {
    if (merged_) return;
    bn_large_.seed_running_stats();
    bn_small_.seed_running_stats();
    ffn_bn_.seed_running_stats();
  }

  void collect_state(const std::string& prefix, StateDict<T>& sd) {
    if (merged_) {
      dw_merged_.collect_state(prefix + ".dw.merged", sd);
    } else {
      dw_large_.collect_state(prefix + ".dw.large", sd);
      bn_large_.collect_state(prefix + ".dw.large.bn", sd);
      dw_small_.collect_state(prefix + ".dw.small", sd);
      bn_small_.collect_state(prefix + ".dw.small.bn", sd);
    }
    res_dw_.collect_state(prefix + ".alpha_dw", sd);
    if (!merged_) ffn_bn_.collect_state(prefix + ".ffn.bn", sd);
    ffn_up_.collect_state(prefix + ".ffn.up", sd);
    ffn_down_.collect_state(prefix + ".ffn.down", sd);
    res_ffn_.collect_state(prefix + ".alpha_ffn", sd);
  }

  void mark_stats_loaded() {
    if (merged_) return;
    bn_large_.mark_stats_loaded();
    bn_small_.mark_stats_loaded();
    ffn_bn_.mark_stats_loaded();
  }

  bool merged() const { return merged_; }
  std::size_t width() const { return width_; }
  std::size_t large_kernel() const { return merged_ ? dw_merged_.kernel() : dw_large_.kernel(); }
  std::size_t small_kernel() const { return dw_small_.kernel(); }
  void reseed_dropout(std::uint64_t seed) { drop_.reseed(seed); }

  Conv1d<T>& dw_large() { return dw_large_; }
  Conv1d<T>& dw_small() { return dw_small_; }
  Conv1d<T>& dw_merged() { return dw_merged_; }
  BatchNorm1d<T>& bn_large() { return bn_large_; }
  BatchNorm1d<T>& bn_small() { return bn_small_; }
  BatchNorm1d<T>& ffn_bn() { return ffn_bn_; }
  Conv1d<T>& ffn_up() { return ffn_up_; }
  Conv1d<T>& ffn_down() { return ffn_down_; }
  ScaledResidual<T>& residual_dw() { return res_dw_; }
  ScaledResidual<T>& residual_ffn() { return res_ffn_; }

 private:
  std::size_t width_ = 0;
  bool merged_ = false;

  Conv1d<T> dw_large_, dw_small_, dw_merged_;
  BatchNorm1d<T> bn_large_, bn_small_;
  ScaledResidual<T> res_dw_;
  Gelu<T> act_dw_;

  BatchNorm1d<T> ffn_bn_;
  Conv1d<T> ffn_up_, ffn_down_;
  Gelu<T> act_ffn_;
  Dropout<T> drop_;
  ScaledResidual<T> res_ffn_;
};

/// One block per plan entry, all sharing width, FFN ratio, dropout and the
/// small parallel kernel.
template <typename T>
std::vector<ConvBlock<T>> build_backbone(const StagePlan& plan, std::size_t width,
                                         std::size_t ffn_ratio, T dropout,
                                         bool learnable_residual, bool ffn_residual_learnable,
                                         std::uint64_t seed) {
  plan.validate();
  std::vector<ConvBlock<T>> blocks;
  blocks.reserve(plan.depth());
  for (std::size_t i = 0; i < plan.depth(); ++i)
    blocks.emplace_back(width, plan.kernel_sizes[i], plan.small_kernel, ffn_ratio, dropout,
                        learnable_residual, ffn_residual_learnable,
                        derive_seed(seed, "block." + std::to_string(i)));
  return blocks;
}

}  // namespace ctn
