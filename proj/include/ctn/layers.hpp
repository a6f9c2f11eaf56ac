#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "ctn/param.hpp"
#include "ctn/rng.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

/// Exact Gaussian-CDF GELU, x * Phi(x).
template <typename T>
inline T gelu_value(T x) {
  return static_cast<T>(0.5) * x * static_cast<T>(std::erfc(-double(x) * 0.70710678118654752440));
}

template <typename T>
inline T gelu_derivative(T x) {
  double cdf = 0.5 * std::erfc(-double(x) * 0.70710678118654752440);
  double pdf = 0.39894228040143267794 * std::exp(-0.5 * double(x) * double(x));
  return static_cast<T>(cdf + double(x) * pdf);
}

/// Grouped 1D cross-correlation with zero padding, stride 1.
/// Depthwise is groups == in_channels == out_channels; pointwise is kernel 1.
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;

  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t groups,
         std::size_t pad, std::uint64_t seed)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), groups_(groups), pad_(pad) {
    if (kernel % 2 == 0) throw ShapeError("conv1d kernel must be odd, got " + std::to_string(kernel));
    if (groups == 0 || in_ch % groups != 0)
      throw ShapeError("conv1d in_channels " + std::to_string(in_ch) +
                       " not divisible by groups " + std::to_string(groups));
    if (out_ch % groups != 0)
      throw ShapeError("conv1d out_channels " + std::to_string(out_ch) +
                       " not divisible by groups " + std::to_string(groups));
    w = Param<T>(Tensor<T>({out_ch, in_ch / groups, kernel}));
    b = Param<T>(Tensor<T>({out_ch}));
    T bound = static_cast<T>(1.0 / std::sqrt(double(in_ch / groups) * double(kernel)));
    Rng rng(seed);
    for (std::size_t i = 0; i < w.value.numel(); ++i)
      w.value[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  /// Same-length convenience: pad = (k - 1) / 2.
  static Conv1d same(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                     std::size_t groups, std::uint64_t seed) {
    return Conv1d(in_ch, out_ch, kernel, groups, (kernel - 1) / 2, seed);
  }

  Tensor<T> forward(const Tensor<T>& x) {
    check_input(x);
    x_ = x;
    const std::size_t B = x.extent(0), L = x.extent(2);
    const std::size_t lout = L + 2 * pad_ - kernel_ + 1;
    const std::size_t cin_g = in_ch_ / groups_, cout_g = out_ch_ / groups_;
    Tensor<T> y({B, out_ch_, lout});
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t oc = 0; oc < out_ch_; ++oc) {
        const std::size_t g = oc / cout_g;
        T* yrow = &y.at3(n, oc, 0);
        std::fill(yrow, yrow + lout, b.value[oc]);
        for (std::size_t icl = 0; icl < cin_g; ++icl) {
          const T* xrow = &x.at3(n, g * cin_g + icl, 0);
          const T* wrow = &w.value[(oc * cin_g + icl) * kernel_];
          for (std::size_t j = 0; j < kernel_; ++j) {
            const T wv = wrow[j];
            // valid output range for this tap: 0 <= t + j - pad < L
            const std::size_t t0 = pad_ > j ? pad_ - j : 0;
            const std::size_t t1 = L + pad_ > j ? std::min(lout, L + pad_ - j) : 0;
            if (t0 >= t1) continue;
            const T* xs = xrow + (t0 + j - pad_);
            for (std::size_t t = t0; t < t1; ++t) yrow[t] += wv * xs[t - t0];
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t B = x_.extent(0), L = x_.extent(2);
    const std::size_t lout = L + 2 * pad_ - kernel_ + 1;
    if (gy.ndim() != 3 || gy.extent(0) != B || gy.extent(1) != out_ch_ || gy.extent(2) != lout)
      throw ShapeError("conv1d backward: gradient shape " + gy.shape_str());
    const std::size_t cin_g = in_ch_ / groups_, cout_g = out_ch_ / groups_;
    Tensor<T> gx({B, in_ch_, L});
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t oc = 0; oc < out_ch_; ++oc) {
        const std::size_t g = oc / cout_g;
        const T* grow = &gy.at3(n, oc, 0);
        T gb = 0;
        for (std::size_t t = 0; t < lout; ++t) gb += grow[t];
        b.grad[oc] += gb;
        for (std::size_t icl = 0; icl < cin_g; ++icl) {
          const T* xrow = &x_.at3(n, g * cin_g + icl, 0);
          T* gxrow = &gx.at3(n, g * cin_g + icl, 0);
          T* gwrow = &w.grad[(oc * cin_g + icl) * kernel_];
          const T* wrow = &w.value[(oc * cin_g + icl) * kernel_];
          for (std::size_t j = 0; j < kernel_; ++j) {
            const std::size_t t0 = pad_ > j ? pad_ - j : 0;
            const std::size_t t1 = L + pad_ > j ? std::min(lout, L + pad_ - j) : 0;
            if (t0 >= t1) continue;
            const T* xs = xrow + (t0 + j - pad_);
            T* gxs = gxrow + (t0 + j - pad_);
            const T wv = wrow[j];
            T gw = 0;
            for (std::size_t t = t0; t < t1; ++t) {
              gw += grow[t] * xs[t - t0];
              gxs[t - t0] += wv * grow[t];
            }
            gwrow[j] += gw;
          }
        }
      }
    }
    return gx;
  }

  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t groups() const { return groups_; }
  std::size_t pad() const { return pad_; }

  void collect_state(const std::string& prefix, StateDict<T>& sd) {
    sd.add_param(prefix + ".w", w);
    sd.add_param(prefix + ".b", b);
  }

  Param<T> w;  // [out, in/groups, k]
  Param<T> b;  // [out]

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.ndim() != 3)
      throw ShapeError("conv1d input must be [B,C,L], got " + x.shape_str());
    if (x.extent(1) != in_ch_)
      throw ShapeError("conv1d input channel dim " + std::to_string(x.extent(1)) +
                       " != expected " + std::to_string(in_ch_));
    if (x.extent(2) + 2 * pad_ < kernel_)
      throw ShapeError("conv1d input length " + std::to_string(x.extent(2)) +
                       " too short for kernel " + std::to_string(kernel_));
  }

  std::size_t in_ch_ = 0, out_ch_ = 0, kernel_ = 0, groups_ = 1, pad_ = 0;
  Tensor<T> x_;
};

/// Batch normalization over the batch and length axes of a [B,C,L] tensor.
/// Train mode uses biased batch statistics and updates the running ones;
/// eval mode uses the running statistics only.
template <typename T>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;

  explicit BatchNorm1d(std::size_t channels, T eps = static_cast<T>(1e-5),
                       T momentum = static_cast<T>(0.1))
      : channels_(channels), eps_(eps), momentum_(momentum) {
    gamma = Param<T>(Tensor<T>::full({channels}, T(1)));
    beta = Param<T>(Tensor<T>({channels}));
    running_mean = Tensor<T>({channels});
    running_var = Tensor<T>::full({channels}, T(1));
  }

  void seed_running_stats(T mean = T(0), T var = T(1)) {
    running_mean.fill(mean);
    running_var.fill(var);
    has_stats_ = true;
  }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  /// Disable running-stat updates so repeated forwards are pure (grad checks).
  void set_track_running(bool track) { track_running_ = track; }
  bool has_stats() const { return has_stats_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.ndim() != 3 || x.extent(1) != channels_)
      throw ShapeError("batchnorm input " + x.shape_str() + " for " +
                       std::to_string(channels_) + " channels");
    const std::size_t B = x.extent(0), L = x.extent(2);
    const std::size_t n = B * L;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    inv_std_ = Tensor<T>({channels_});
    used_batch_stats_ = training_;
    if (training_) {
      if (n < 2) throw ShapeError("batchnorm train mode needs B*L >= 2");
      for (std::size_t c = 0; c < channels_; ++c) {
        double sum = 0, sq = 0;
        for (std::size_t i = 0; i < B; ++i) {
          const T* row = &x.at3(i, c, 0);
          for (std::size_t t = 0; t < L; ++t) {
            sum += row[t];
            sq += double(row[t]) * double(row[t]);
          }
        }
        const double mean = sum / double(n);
        const double var = std::max(0.0, sq / double(n) - mean * mean);
        const T istd = static_cast<T>(1.0 / std::sqrt(var + double(eps_)));
        inv_std_[c] = istd;
        const T m = static_cast<T>(mean), g = gamma.value[c], bb = beta.value[c];
        for (std::size_t i = 0; i < B; ++i) {
          const T* row = &x.at3(i, c, 0);
          T* xr = &xhat_.at3(i, c, 0);
          T* yr = &y.at3(i, c, 0);
          for (std::size_t t = 0; t < L; ++t) {
            xr[t] = (row[t] - m) * istd;
            yr[t] = g * xr[t] + bb;
          }
        }
        if (track_running_) {
          running_mean[c] = (T(1) - momentum_) * running_mean[c] + momentum_ * m;
          running_var[c] = (T(1) - momentum_) * running_var[c] + momentum_ * static_cast<T>(var);
        }
      }
      if (track_running_) has_stats_ = true;
    } else {
      if (!has_stats_)
        throw ConfigError("batchnorm eval before any train step; seed running stats first");
      for (std::size_t c = 0; c < channels_; ++c) {
        const T istd = static_cast<T>(1.0 / std::sqrt(double(running_var[c]) + double(eps_)));
        inv_std_[c] = istd;
        const T m = running_mean[c], g = gamma.value[c], bb = beta.value[c];
        for (std::size_t i = 0; i < B; ++i) {
          const T* row = &x.at3(i, c, 0);
          T* xr = &xhat_.at3(i, c, 0);
          T* yr = &y.at3(i, c, 0);
          for (std::size_t t = 0; t < L; ++t) {
            xr[t] = (row[t] - m) * istd;
            yr[t] = g * xr[t] + bb;
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    require_same_shape(gy, xhat_, "batchnorm backward");
    const std::size_t B = gy.extent(0), L = gy.extent(2);
    const std::size_t n = B * L;
    Tensor<T> gx(gy.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      double gsum = 0, gxsum = 0;
      for (std::size_t i = 0; i < B; ++i) {
        const T* gr = &gy.at3(i, c, 0);
        const T* xr = &xhat_.at3(i, c, 0);
        for (std::size_t t = 0; t < L; ++t) {
          gsum += gr[t];
          gxsum += double(gr[t]) * double(xr[t]);
        }
      }
      gamma.grad[c] += static_cast<T>(gxsum);
      beta.grad[c] += static_cast<T>(gsum);
      const T g = gamma.value[c], istd = inv_std_[c];
      if (used_batch_stats_) {
        const T mg = static_cast<T>(gsum / double(n));
        const T mgx = static_cast<T>(gxsum / double(n));
        for (std::size_t i = 0; i < B; ++i) {
          const T* gr = &gy.at3(i, c, 0);
          const T* xr = &xhat_.at3(i, c, 0);
          T* out = &gx.at3(i, c, 0);
          for (std::size_t t = 0; t < L; ++t)
            out[t] = g * istd * (gr[t] - mg - xr[t] * mgx);
        }
      } else {
        for (std::size_t i = 0; i < B; ++i) {
          const T* gr = &gy.at3(i, c, 0);
          T* out = &gx.at3(i, c, 0);
          for (std::size_t t = 0; t < L; ++t) out[t] = g * istd * gr[t];
        }
      }
    }
    return gx;
  }

  void collect_state(const std::string& prefix, StateDict<T>& sd) {
    sd.add_param(prefix + ".gamma", gamma);
    sd.add_param(prefix + ".beta", beta);
    sd.add_buffer(prefix + ".running_mean", running_mean);
    sd.add_buffer(prefix + ".running_var", running_var);
  }

  /// Checkpoint load restores stats, so mark them usable.
  void mark_stats_loaded() { has_stats_ = true; }

  std::size_t channels() const { return channels_; }
  T eps() const { return eps_; }

  Param<T> gamma, beta;
  Tensor<T> running_mean, running_var;

 private:
  std::size_t channels_ = 0;
  T eps_ = static_cast<T>(1e-5);
  T momentum_ = static_cast<T>(0.1);
  bool training_ = true;
  bool track_running_ = true;
  bool has_stats_ = false;
  bool used_batch_stats_ = true;
  Tensor<T> xhat_, inv_std_;
};

/// Elementwise GELU with cached input.
template <typename T>
class Gelu {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    x_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = gelu_value(x[i]);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    require_same_shape(gy, x_, "gelu backward");
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] = gy[i] * gelu_derivative(x_[i]);
    return gx;
  }

 private:
  Tensor<T> x_;
};

/// y = x * w^T + b over [B, n] inputs.
template <typename T>
class Linear {
 public:
  Linear() = default;

  Linear(std::size_t in, std::size_t out, std::uint64_t seed) : in_(in), out_(out) {
    w = Param<T>(Tensor<T>({out, in}));
    b = Param<T>(Tensor<T>({out}));
    T bound = static_cast<T>(1.0 / std::sqrt(double(in)));
    Rng rng(seed);
    for (std::size_t i = 0; i < w.value.numel(); ++i)
      w.value[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  static Linear zero_init(std::size_t in, std::size_t out) {
    Linear l(in, out, 0);
    l.w.value.zero();
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.ndim() != 2 || x.extent(1) != in_)
      throw ShapeError("linear input " + x.shape_str() + ", expected inner dim " +
                       std::to_string(in_));
    x_ = x;
    const std::size_t B = x.extent(0);
    Tensor<T> y({B, out_});
    for (std::size_t n = 0; n < B; ++n) {
      const T* xr = &x.at2(n, 0);
      for (std::size_t o = 0; o < out_; ++o) {
        const T* wr = &w.value[o * in_];
        T acc = b.value[o];
        for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * xr[i];
        y.at2(n, o) = acc;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t B = x_.extent(0);
    if (gy.ndim() != 2 || gy.extent(0) != B || gy.extent(1) != out_)
      throw ShapeError("linear backward gradient " + gy.shape_str());
    Tensor<T> gx({B, in_});
    for (std::size_t n = 0; n < B; ++n) {
      const T* gr = &gy.at2(n, 0);
      const T* xr = &x_.at2(n, 0);
      T* gxr = &gx.at2(n, 0);
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = gr[o];
        b.grad[o] += g;
        T* gwr = &w.grad[o * in_];
        const T* wr = &w.value[o * in_];
        for (std::size_t i = 0; i < in_; ++i) {
          gwr[i] += g * xr[i];
          gxr[i] += g * wr[i];
        }
      }
    }
    return gx;
  }

  void collect_state(const std::string& prefix, StateDict<T>& sd) {
    sd.add_param(prefix + ".w", w);
    sd.add_param(prefix + ".b", b);
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Param<T> w, b;

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> x_;
};

/// Inverted dropout; the mask is reproducible from the seed and reused by the
/// backward pass. Eval mode is the identity.
template <typename T>
class Dropout {
 public:
  Dropout() : Dropout(T(0), 0) {}

  Dropout(T p, std::uint64_t seed) : p_(p), rng_(seed) {
    if (!(p >= T(0) && p < T(1)))
      throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(double(p)));
  }

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  void set_training(bool training) { training_ = training; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (!training_ || p_ == T(0)) {
      identity_ = true;
      return x;
    }
    identity_ = false;
    mask_ = Tensor<T>(x.shape());
    const T scale = T(1) / (T(1) - p_);
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      mask_[i] = rng_.uniform() >= double(p_) ? scale : T(0);
      y[i] = x[i] * mask_[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (identity_) return gy;
    require_same_shape(gy, mask_, "dropout backward");
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] = gy[i] * mask_[i];
    return gx;
  }

  T rate() const { return p_; }

 private:
  T p_;
  Rng rng_;
  bool training_ = true;
  bool identity_ = true;
  Tensor<T> mask_;
};

/// y = base + alpha * branch with a trainable scalar alpha (zero-initialized),
/// or a plain residual (alpha == 1 constant) when not learnable. alpha == 0
/// short-circuits so an initialized block is the identity bitwise.
template <typename T>
class ScaledResidual {
 public:
  explicit ScaledResidual(bool learnable = true) : learnable_(learnable) {
    alpha = Param<T>(Tensor<T>({1}));
  }

  Tensor<T> forward(const Tensor<T>& base, const Tensor<T>& branch) {
    require_same_shape(base, branch, "scaled residual");
    branch_ = branch;
    const T a = scale();
    if (a == T(0)) return base;
    Tensor<T> y(base.shape());
    for (std::size_t i = 0; i < base.numel(); ++i) y[i] = base[i] + a * branch[i];
    return y;
  }

  /// Returns (grad_base, grad_branch); accumulates into alpha.grad.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& gy) {
    require_same_shape(gy, branch_, "scaled residual backward");
    const T a = scale();
    Tensor<T> gbranch(gy.shape());
    if (learnable_) {
      double ga = 0;
      for (std::size_t i = 0; i < gy.numel(); ++i) {
        ga += double(gy[i]) * double(branch_[i]);
        gbranch[i] = a * gy[i];
      }
      alpha.grad[0] += static_cast<T>(ga);
    } else {
      for (std::size_t i = 0; i < gy.numel(); ++i) gbranch[i] = gy[i];
    }
    return {gy, std::move(gbranch)};
  }

  void collect_state(const std::string& prefix, StateDict<T>& sd) {
    if (learnable_) sd.add_param(prefix, alpha);
  }

  T scale() const { return learnable_ ? alpha.value[0] : T(1); }
  bool learnable() const { return learnable_; }

  Param<T> alpha;

 private:
  bool learnable_;
  Tensor<T> branch_;
};

}  // namespace ctn
