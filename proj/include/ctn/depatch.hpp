#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ctn/layers.hpp"
#include "ctn/param.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

/// Uniform patch geometry over a right-padded series. The padded length is
/// T + S; padding replicates the final value so every patch is in bounds.
struct PatchGrid {
  std::size_t series_len = 0;  // T
  std::size_t patch_len = 0;   // P
  std::size_t stride = 0;      // S
  std::size_t count = 0;       // N
  std::vector<double> centers;

  std::size_t padded_len() const { return series_len + stride; }
};

inline std::size_t patch_count(std::size_t T, std::size_t P, std::size_t S) {
  if (P < 1 || P > T)
    throw ShapeError("patch size " + std::to_string(P) + " out of range for series length " +
                     std::to_string(T));
  if (S < 1 || S > P)
    throw ShapeError("patch stride " + std::to_string(S) + " out of range for patch size " +
                     std::to_string(P));
  return (T - P) / S + 2;
}

inline PatchGrid uniform_grid(std::size_t T, std::size_t P, std::size_t S) {
  PatchGrid g;
  g.series_len = T;
  g.patch_len = P;
  g.stride = S;
  g.count = patch_count(T, P, S);
  g.centers.resize(g.count);
  for (std::size_t i = 0; i < g.count; ++i)
    g.centers[i] = double(i) * double(S) + (double(P) - 1.0) / 2.0;
  return g;
}

enum class PredictorVariant { Uniform, Conv, ConvConv, Mlp };

inline const char* to_string(PredictorVariant v) {
  switch (v) {
    case PredictorVariant::Uniform: return "uniform";
    case PredictorVariant::Conv: return "conv";
    case PredictorVariant::ConvConv: return "conv_conv";
    case PredictorVariant::Mlp: return "mlp";
  }
  return "?";
}

struct PredictorConfig {
  PredictorVariant variant = PredictorVariant::ConvConv;
  std::size_t kernel = 3;   // conv variants, depthwise over patch time
  std::size_t hidden = 0;   // MLP hidden width; 0 picks embed_dim / 2
  bool per_channel = false; // independent offsets per channel
};

/// Per-patch center offset and half-scale change. Row layout matches the
/// flattened patch order of the forward pass.
struct DeformParams {
  std::vector<double> delta_c;
  std::vector<double> delta_p;
};

struct PatchBounds {
  double left = 0, right = 0;       // clamped
  bool left_clamped = false;
  bool right_at_floor = false;      // clamped up to left + 1
  bool right_at_ceil = false;       // clamped down to the last coordinate
};

/// Center/scale deformation with clamping into the padded coordinate range.
/// The right bound is kept at least one step past the left one so the
/// resampling span never collapses, whatever the raw offsets were.
inline PatchBounds deform_bounds_one(double center, double patch_len, double dc, double dp,
                                     double padded_len) {
  const double hi = padded_len - 1.0;
  PatchBounds b;
  const double new_center = center + dc;
  const double new_len = patch_len + 2.0 * dp;
  double left = new_center - new_len / 2.0;
  double right = new_center + new_len / 2.0;
  b.left = std::min(std::max(left, 0.0), hi);
  b.left_clamped = b.left != left;
  const double lo_r = std::min(b.left + 1.0, hi);
  if (right < lo_r) {
    b.right = lo_r;
    b.right_at_floor = lo_r < hi;   // rides on left + 1
    b.right_at_ceil = lo_r == hi;
  } else if (right > hi) {
    b.right = hi;
    b.right_at_ceil = true;
  } else {
    b.right = right;
  }
  return b;
}

/// P samples equally spaced on [L, R] inclusive, each linearly interpolated
/// between neighbouring integer steps. P == 1 samples the midpoint.
template <typename T>
inline void resample_row(const T* row, std::size_t len, double left, double right,
                         std::size_t patch_len, T* out) {
  const double span = patch_len > 1 ? (right - left) / double(patch_len - 1) : 0.0;
  const double base = patch_len > 1 ? left : (left + right) / 2.0;
  for (std::size_t j = 0; j < patch_len; ++j) {
    const double pos = base + span * double(j);
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - double(i0);
    const std::size_t i1 = std::min(i0 + 1, len - 1);
    out[j] = static_cast<T>((1.0 - frac) * double(row[i0]) + frac * double(row[i1]));
  }
}

/// Deformable patch embedding: uniform split, offset/scale prediction,
/// boundary deformation, interpolated resampling, linear projection.
/// Output is [B, D, N]; no positional encoding is added.
template <typename T>
class PatchEmbedder {
 public:
  PatchEmbedder() = default;

  PatchEmbedder(std::size_t channels, std::size_t series_len, std::size_t patch_len,
                std::size_t stride, std::size_t embed_dim, const PredictorConfig& cfg,
                std::uint64_t seed)
      : channels_(channels),
        embed_dim_(embed_dim),
        cfg_(cfg),
        grid_(uniform_grid(series_len, patch_len, stride)) {
    const std::size_t pc = pred_channels();
    const std::size_t feat = pc * patch_len;
    switch (cfg_.variant) {
      case PredictorVariant::Uniform:
        break;
      case PredictorVariant::ConvConv:
        conv2_ = Conv1d<T>::same(pc, pc, cfg_.kernel, pc, derive_seed(seed, "pred.conv2"));
        [[fallthrough]];
      case PredictorVariant::Conv:
        conv1_ = Conv1d<T>::same(pc, pc, cfg_.kernel, pc, derive_seed(seed, "pred.conv1"));
        break;
      case PredictorVariant::Mlp: {
        std::size_t hidden = cfg_.hidden ? cfg_.hidden : std::max<std::size_t>(1, embed_dim / 2);
        mlp_hidden_ = Linear<T>(feat, hidden, derive_seed(seed, "pred.hidden"));
        break;
      }
    }
    if (cfg_.variant != PredictorVariant::Uniform) {
      const std::size_t head_in =
          cfg_.variant == PredictorVariant::Mlp ? mlp_hidden_.out_features() : feat;
      head_ = Linear<T>::zero_init(head_in, 2);  // starts as exact uniform patching
    }
    projection_ = Linear<T>(channels * patch_len, embed_dim, derive_seed(seed, "projection"));
  }

  const PatchGrid& grid() const { return grid_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t channels() const { return channels_; }
  const PredictorConfig& predictor_config() const { return cfg_; }

  /// Offsets for a batch of fixed patches laid out [rows, pred_channels, P].
  DeformParams predict_deform(const Tensor<T>& patches) {
    const std::size_t rows = patches.extent(0);
    DeformParams d;
    d.delta_c.assign(rows, 0.0);
    d.delta_p.assign(rows, 0.0);
    if (cfg_.variant == PredictorVariant::Uniform) return d;
    Tensor<T> feats;
    switch (cfg_.variant) {
      case PredictorVariant::Conv:
        feats = act1_.forward(conv1_.forward(patches));
        break;
      case PredictorVariant::ConvConv:
        feats = act2_.forward(conv2_.forward(act1_.forward(conv1_.forward(patches))));
        break;
      case PredictorVariant::Mlp:
        feats = act1_.forward(
            mlp_hidden_.forward(patches.reshaped({rows, patches.numel() / rows})));
        break;
      default:
        break;
    }
    Tensor<T> out = head_.forward(feats.reshaped({rows, feats.numel() / rows}));
    for (std::size_t r = 0; r < rows; ++r) {
      d.delta_c[r] = double(out.at2(r, 0));
      d.delta_p[r] = double(out.at2(r, 1));
    }
    return d;
  }

  /// Full forward pass over [B, C, T]; returns [B, D, N].
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.ndim() != 3 || x.extent(1) != channels_ || x.extent(2) != grid_.series_len)
      throw ShapeError("embedder input " + x.shape_str() + ", expected [B," +
                       std::to_string(channels_) + "," + std::to_string(grid_.series_len) + "]");
    const std::size_t B = x.extent(0), P = grid_.patch_len, N = grid_.count;
    const std::size_t tp = grid_.padded_len();

    padded_ = Tensor<T>({B, channels_, tp});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < channels_; ++c) {
        const T* src = &x.at3(b, c, 0);
        T* dst = &padded_.at3(b, c, 0);
        std::copy(src, src + grid_.series_len, dst);
        std::fill(dst + grid_.series_len, dst + tp, src[grid_.series_len - 1]);
      }

    // Fixed-grid patches feed the predictor; per_channel treats each channel
    // as its own row with a single predictor channel.
    const std::size_t pc = pred_channels();
    const std::size_t rows = B * N * (cfg_.per_channel ? channels_ : 1);
    Tensor<T> fixed({rows, pc, P});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < channels_; ++c) {
          const T* src = &padded_.at3(b, c, n * grid_.stride);
          T* dst = cfg_.per_channel ? &fixed.at3((b * N + n) * channels_ + c, 0, 0)
                                    : &fixed.at3(b * N + n, c, 0);
          std::copy(src, src + P, dst);
        }

    deform_ = predict_deform(fixed);

    bounds_.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t n = cfg_.per_channel ? (r / channels_) % N : r % N;
      bounds_[r] = deform_bounds_one(grid_.centers[n], double(P), deform_.delta_c[r],
                                     deform_.delta_p[r], double(tp));
    }

    // Resample and flatten to [B*N, C*P] for the projection.
    proj_in_ = Tensor<T>({B * N, channels_ * P});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < channels_; ++c) {
          const std::size_t r =
              cfg_.per_channel ? (b * N + n) * channels_ + c : b * N + n;
          resample_row(&padded_.at3(b, c, 0), tp, bounds_[r].left, bounds_[r].right, P,
                       &proj_in_.at2(b * N + n, c * P));
        }

    Tensor<T> proj = projection_.forward(proj_in_);
    Tensor<T> y({B, embed_dim_, N});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < embed_dim_; ++d)
          y.at3(b, d, n) = proj.at2(b * N + n, d);
    return y;
  }

  /// Backward through projection, resampling, bounds, predictor and padding.
  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t B = gy.extent(0), N = grid_.count, P = grid_.patch_len;
    const std::size_t tp = grid_.padded_len();
    if (gy.extent(1) != embed_dim_ || gy.extent(2) != N)
      throw ShapeError("embedder backward gradient " + gy.shape_str());

    Tensor<T> gproj({B * N, embed_dim_});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < embed_dim_; ++d)
          gproj.at2(b * N + n, d) = gy.at3(b, d, n);

    Tensor<T> gflat = projection_.backward(gproj);  // [B*N, C*P]

    Tensor<T> gpad({B, channels_, tp});
    const std::size_t rows = bounds_.size();
    std::vector<double> gleft(rows, 0.0), gright(rows, 0.0);

    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < channels_; ++c) {
          const std::size_t r =
              cfg_.per_channel ? (b * N + n) * channels_ + c : b * N + n;
          const PatchBounds& bd = bounds_[r];
          const double span = P > 1 ? (bd.right - bd.left) / double(P - 1) : 0.0;
          const double base = P > 1 ? bd.left : (bd.left + bd.right) / 2.0;
          const T* row = &padded_.at3(b, c, 0);
          T* grow = &gpad.at3(b, c, 0);
          for (std::size_t j = 0; j < P; ++j) {
            const double g = double(gflat.at2(b * N + n, c * P + j));
            if (g == 0.0) continue;
            const double pos = base + span * double(j);
            const auto i0 = static_cast<std::size_t>(std::floor(pos));
            const double frac = pos - double(i0);
            const std::size_t i1 = std::min(i0 + 1, tp - 1);
            grow[i0] += static_cast<T>(g * (1.0 - frac));
            grow[i1] += static_cast<T>(g * frac);
            const double gpos = g * (double(row[i1]) - double(row[i0]));
            if (P > 1) {
              const double wr = double(j) / double(P - 1);
              gleft[r] += gpos * (1.0 - wr);
              gright[r] += gpos * wr;
            } else {
              gleft[r] += gpos * 0.5;
              gright[r] += gpos * 0.5;
            }
          }
        }

    if (cfg_.variant != PredictorVariant::Uniform) {
      // L = c + dc - (P + 2 dp)/2, R = c + dc + (P + 2 dp)/2; clamp subgradients
      // gate the flow, and a floor-clamped right bound rides on the left one.
      Tensor<T> gdelta({rows, 2});
      for (std::size_t r = 0; r < rows; ++r) {
        const PatchBounds& bd = bounds_[r];
        double gl = gleft[r];
        if (bd.right_at_floor) gl += gright[r];
        if (bd.left_clamped) gl = 0.0;
        const double gr = (bd.right_at_floor || bd.right_at_ceil) ? 0.0 : gright[r];
        gdelta.at2(r, 0) = static_cast<T>(gl + gr);
        gdelta.at2(r, 1) = static_cast<T>(gr - gl);
      }
      Tensor<T> gfeat = head_.backward(gdelta);
      Tensor<T> gfixed;
      const std::size_t pc = pred_channels();
      switch (cfg_.variant) {
        case PredictorVariant::Conv:
          gfixed = conv1_.backward(act1_.backward(gfeat.reshaped({rows, pc, P})));
          break;
        case PredictorVariant::ConvConv:
          gfixed = conv1_.backward(act1_.backward(
              conv2_.backward(act2_.backward(gfeat.reshaped({rows, pc, P})))));
          break;
        case PredictorVariant::Mlp:
          gfixed = act1_.backward(gfeat);
          gfixed = mlp_hidden_.backward(gfixed).reshaped({rows, pc, P});
          break;
        default:
          break;
      }
      // Scatter fixed-patch grads back; overlapping patches accumulate.
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < channels_; ++c) {
            const T* src = cfg_.per_channel
                               ? &gfixed.at3((b * N + n) * channels_ + c, 0, 0)
                               : &gfixed.at3(b * N + n, c, 0);
            T* dst = &gpad.at3(b, c, n * grid_.stride);
            for (std::size_t j = 0; j < P; ++j) dst[j] += src[j];
          }
    }

    // Replicate-padding backward: padded tail columns fold into the last step.
    Tensor<T> gx({B, channels_, grid_.series_len});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < channels_; ++c) {
        const T* src = &gpad.at3(b, c, 0);
        T* dst = &gx.at3(b, c, 0);
        std::copy(src, src + grid_.series_len, dst);
        for (std::size_t t = grid_.series_len; t < tp; ++t)
          dst[grid_.series_len - 1] += src[t];
      }
    return gx;
  }

  void collect_state(const std::string& prefix, StateDict<T>& sd) {
    switch (cfg_.variant) {
      case PredictorVariant::Uniform:
        break;
      case PredictorVariant::ConvConv:
        conv1_.collect_state(prefix + ".pred.conv1", sd);
        conv2_.collect_state(prefix + ".pred.conv2", sd);
        break;
      case PredictorVariant::Conv:
        conv1_.collect_state(prefix + ".pred.conv1", sd);
        break;
      case PredictorVariant::Mlp:
        mlp_hidden_.collect_state(prefix + ".pred.hidden", sd);
        break;
    }
    if (cfg_.variant != PredictorVariant::Uniform) head_.collect_state(prefix + ".pred.head", sd);
    projection_.collect_state(prefix + ".projection", sd);
  }

  Linear<T>& head() { return head_; }
  Linear<T>& projection() { return projection_; }
  const DeformParams& last_deform() const { return deform_; }
  const std::vector<PatchBounds>& last_bounds() const { return bounds_; }

 private:
  std::size_t pred_channels() const { return cfg_.per_channel ? 1 : channels_; }

  std::size_t channels_ = 0;
  std::size_t embed_dim_ = 0;
  PredictorConfig cfg_;
  PatchGrid grid_;

  Conv1d<T> conv1_, conv2_;
  Linear<T> mlp_hidden_;
  Linear<T> head_;
  Linear<T> projection_;
  Gelu<T> act1_, act2_;

  Tensor<T> padded_, proj_in_;
  DeformParams deform_;
  std::vector<PatchBounds> bounds_;
};

}  // namespace ctn
