#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctn/depatch.hpp"
#include "ctn/fcblock.hpp"
#include "ctn/layers.hpp"

namespace ctn {

enum class Task { Classify, Forecast };
enum class HeadKind { Flatten, MeanPool };

inline const char* to_string(Task t) { return t == Task::Classify ? "classify" : "forecast"; }
inline const char* to_string(HeadKind h) { return h == HeadKind::Flatten ? "flatten" : "mean_pool"; }

/// Full architectural record. Serialized verbatim into checkpoints.
struct ModelConfig {
  Task task = Task::Classify;
  std::size_t channels = 1;        // C
  std::size_t series_len = 336;    // T (lookback when forecasting)
  std::size_t patch_len = 16;      // P
  std::size_t patch_stride = 8;    // S
  PredictorConfig predictor;
  std::size_t embed_dim = 64;      // D
  StagePlan plan;
  std::size_t ffn_ratio = 2;       // r
  double dropout = 0.2;
  bool learnable_residual = true;
  bool residual_dw_only = false;   // learnable alpha on the depthwise sublayer only
  std::optional<bool> instance_norm;  // unset: on for forecasting, off otherwise
  HeadKind head = HeadKind::Flatten;
  std::size_t num_classes = 0;
  std::size_t horizon = 96;
  std::uint64_t seed = 0;

  bool use_instance_norm() const {
    return instance_norm.value_or(task == Task::Forecast);
  }

  std::size_t num_tokens() const { return patch_count(series_len, patch_len, patch_stride); }

  std::size_t head_out() const {
    return task == Task::Classify ? num_classes : channels * horizon;
  }

  void validate() const {
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (series_len < 1) throw ConfigError("series_len must be >= 1");
    if (patch_len < 1 || patch_len > series_len)
      throw ConfigError("patch_len " + std::to_string(patch_len) +
                        " must be in [1, series_len=" + std::to_string(series_len) + "]");
    if (patch_stride < 1 || patch_stride > patch_len)
      throw ConfigError("patch_stride " + std::to_string(patch_stride) +
                        " must be in [1, patch_len=" + std::to_string(patch_len) + "]");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
    if (predictor.kernel % 2 == 0) throw ConfigError("predictor kernel must be odd");
    plan.validate();
    if (task == Task::Classify && num_classes < 2)
      throw ConfigError("classify task needs num_classes >= 2");
    if (task == Task::Forecast && horizon < 1)
      throw ConfigError("forecast task needs horizon >= 1");
  }
};

/// Per-sample, per-channel standardization of the lookback window, inverted
/// on the model output. The floor keeps constant channels finite.
template <typename T>
struct InstanceNormState {
  Tensor<T> mean, std;  // [B, C]
  static constexpr double kFloor = 1e-5;
};

/// DePatch embedding, the convolutional backbone and a linear task head.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg)
      : cfg_(validated(cfg)),
        embedder_(cfg.channels, cfg.series_len, cfg.patch_len, cfg.patch_stride, cfg.embed_dim,
                  cfg.predictor, derive_seed(cfg.seed, "embedder")),
        head_dropout_(static_cast<T>(cfg.dropout), derive_seed(cfg.seed, "head.dropout")) {
    blocks_ = build_backbone<T>(cfg.plan, cfg.embed_dim, cfg.ffn_ratio,
                                static_cast<T>(cfg.dropout), cfg.learnable_residual,
                                !cfg.residual_dw_only, derive_seed(cfg.seed, "backbone"));
    const std::size_t head_in =
        cfg.head == HeadKind::Flatten ? cfg.embed_dim * cfg.num_tokens() : cfg.embed_dim;
    head_ = Linear<T>(head_in, cfg.head_out(), derive_seed(cfg.seed, "head"));
    for (auto& b : blocks_) b.seed_bn_stats();
    set_eval();
  }

  const ModelConfig& config() const { return cfg_; }
  bool merged() const { return merged_; }
  bool training() const { return training_; }

  void set_train() {
    if (merged_) throw ConfigError("merged model rejects further training");
    training_ = true;
    apply_mode();
  }

  void set_eval() {
    training_ = false;
    apply_mode();
  }

  void set_bn_tracking(bool track) {
    for (auto& b : blocks_) b.set_track_running(track);
  }

  /// [B, C, T] -> classify: [B, num_classes] logits; forecast: [B, C, H].
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.ndim() != 3 || x.extent(1) != cfg_.channels || x.extent(2) != cfg_.series_len)
      throw ShapeError("model input " + x.shape_str() + ", expected [B," +
                       std::to_string(cfg_.channels) + "," + std::to_string(cfg_.series_len) +
                       "]");
    const std::size_t B = x.extent(0);
    const Tensor<T>* input = &x;
    if (cfg_.use_instance_norm()) {
      normalized_ = apply_instance_norm(x);
      input = &normalized_;
    }
    Tensor<T> z = embedder_.forward(*input);
    for (auto& b : blocks_) z = b.forward(z);
    Tensor<T> feats = pool(z);
    Tensor<T> out = head_.forward(head_dropout_.forward(feats));
    if (cfg_.task == Task::Classify) return out;
    last_core_out_ = out;  // cached for the de-normalization backward
    Tensor<T> y({B, cfg_.channels, cfg_.horizon});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < cfg_.channels; ++c) {
        const T scale = denorm_scale(b, c);
        const T shift = denorm_shift(b, c);
        for (std::size_t h = 0; h < cfg_.horizon; ++h)
          y.at3(b, c, h) = out.at2(b, c * cfg_.horizon + h) * scale + shift;
      }
    return y;
  }

  /// Gradient of the loss w.r.t. the input; parameter grads accumulate.
  Tensor<T> backward(const Tensor<T>& gout) {
    const std::size_t B = gout.extent(0);
    Tensor<T> ghead;
    Tensor<T> gmean, gstd;
    if (cfg_.task == Task::Forecast) {
      ghead = Tensor<T>({B, cfg_.channels * cfg_.horizon});
      if (cfg_.use_instance_norm()) {
        gmean = Tensor<T>({B, cfg_.channels});
        gstd = Tensor<T>({B, cfg_.channels});
      }
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < cfg_.channels; ++c) {
          const T scale = denorm_scale(b, c);
          for (std::size_t h = 0; h < cfg_.horizon; ++h) {
            const T g = gout.at3(b, c, h);
            ghead.at2(b, c * cfg_.horizon + h) = g * scale;
            if (cfg_.use_instance_norm()) {
              gmean.at2(b, c) += g;
              gstd.at2(b, c) += g * last_core_out_.at2(b, c * cfg_.horizon + h);
            }
          }
        }
    } else {
      ghead = gout;
    }
    Tensor<T> gfeats = head_dropout_.backward(head_.backward(ghead));
    Tensor<T> gz = unpool(gfeats, B);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) gz = it->backward(gz);
    Tensor<T> gin = embedder_.backward(gz);
    if (!cfg_.use_instance_norm()) return gin;
    return instance_norm_backward(gin, gmean, gstd);
  }

  /// Replace every block by its merged single-kernel form.
  void merge_blocks() {
    if (training_) throw ConfigError("merge requires eval mode");
    if (merged_) throw ConfigError("model already merged");
    for (auto& b : blocks_) b.merge();
    merged_ = true;
  }

  void mark_merged_skeleton() {
    for (auto& b : blocks_) b.make_merged_skeleton();
    merged_ = true;
    set_eval();
  }

  StateDict<T> state() {
    StateDict<T> sd;
    embedder_.collect_state("embedder", sd);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect_state("backbone." + std::to_string(i), sd);
    head_.collect_state("head", sd);
    return sd;
  }

  std::size_t param_count() {
    return state().param_count();
  }

  void mark_stats_loaded() {
    for (auto& b : blocks_) b.mark_stats_loaded();
  }

  void reseed_dropout(std::uint64_t seed) {
    head_dropout_.reseed(derive_seed(seed, "head.dropout"));
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].reseed_dropout(derive_seed(seed, "block.dropout." + std::to_string(i)));
  }

  PatchEmbedder<T>& embedder() { return embedder_; }
  std::vector<ConvBlock<T>>& blocks() { return blocks_; }
  Linear<T>& head() { return head_; }
  const InstanceNormState<T>& instance_stats() const { return inorm_; }

 private:
  static const ModelConfig& validated(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
  }

  void apply_mode() {
    for (auto& b : blocks_) b.set_training(training_);
    head_dropout_.set_training(training_);
  }

  T denorm_scale(std::size_t b, std::size_t c) const {
    return cfg_.use_instance_norm()
               ? inorm_.std.at2(b, c) + static_cast<T>(InstanceNormState<T>::kFloor)
               : T(1);
  }
  T denorm_shift(std::size_t b, std::size_t c) const {
    return cfg_.use_instance_norm() ? inorm_.mean.at2(b, c) : T(0);
  }

  Tensor<T> apply_instance_norm(const Tensor<T>& x) {
    const std::size_t B = x.extent(0), C = cfg_.channels, L = cfg_.series_len;
    inorm_.mean = Tensor<T>({B, C});
    inorm_.std = Tensor<T>({B, C});
    raw_input_ = x;
    Tensor<T> y(x.shape());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* row = &x.at3(b, c, 0);
        double sum = 0, sq = 0;
        for (std::size_t t = 0; t < L; ++t) {
          sum += row[t];
          sq += double(row[t]) * double(row[t]);
        }
        const double mean = sum / double(L);
        const double var = std::max(0.0, sq / double(L) - mean * mean);
        const double sd = std::sqrt(var);
        inorm_.mean.at2(b, c) = static_cast<T>(mean);
        inorm_.std.at2(b, c) = static_cast<T>(sd);
        const T inv = static_cast<T>(1.0 / (sd + InstanceNormState<T>::kFloor));
        T* out = &y.at3(b, c, 0);
        for (std::size_t t = 0; t < L; ++t)
          out[t] = (row[t] - static_cast<T>(mean)) * inv;
      }
    return y;
  }

  /// Combines the chain through the normalized input with the direct paths of
  /// the de-normalization into mean and std.
  Tensor<T> instance_norm_backward(const Tensor<T>& gnorm, const Tensor<T>& gmean_direct,
                                   const Tensor<T>& gstd_direct) {
    const std::size_t B = gnorm.extent(0), C = cfg_.channels, L = cfg_.series_len;
    Tensor<T> gx(gnorm.shape());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double sd = double(inorm_.std.at2(b, c));
        const double denom = sd + InstanceNormState<T>::kFloor;
        const double mean = double(inorm_.mean.at2(b, c));
        const T* gn = &gnorm.at3(b, c, 0);
        const T* row = &raw_input_.at3(b, c, 0);
        double gmu = double(gmean_direct.at2(b, c));
        double gsd = double(gstd_direct.at2(b, c));
        for (std::size_t t = 0; t < L; ++t) {
          gmu -= double(gn[t]) / denom;
          gsd -= double(gn[t]) * (double(row[t]) - mean) / (denom * denom);
        }
        T* out = &gx.at3(b, c, 0);
        for (std::size_t t = 0; t < L; ++t) {
          double g = double(gn[t]) / denom + gmu / double(L);
          if (sd > 0.0) g += gsd * (double(row[t]) - mean) / (double(L) * sd);
          out[t] = static_cast<T>(g);
        }
      }
    return gx;
  }

  Tensor<T> pool(const Tensor<T>& z) {
    const std::size_t B = z.extent(0), D = cfg_.embed_dim, N = cfg_.num_tokens();
    if (cfg_.head == HeadKind::Flatten) {
      Tensor<T> f({B, D * N});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t n = 0; n < N; ++n) f.at2(b, d * N + n) = z.at3(b, d, n);
      return f;
    }
    Tensor<T> f({B, D});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t d = 0; d < D; ++d) {
        double acc = 0;
        for (std::size_t n = 0; n < N; ++n) acc += z.at3(b, d, n);
        f.at2(b, d) = static_cast<T>(acc / double(N));
      }
    return f;
  }

  Tensor<T> unpool(const Tensor<T>& gf, std::size_t B) {
    const std::size_t D = cfg_.embed_dim, N = cfg_.num_tokens();
    Tensor<T> gz({B, D, N});
    if (cfg_.head == HeadKind::Flatten) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t n = 0; n < N; ++n) gz.at3(b, d, n) = gf.at2(b, d * N + n);
    } else {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D; ++d) {
          const T g = gf.at2(b, d) / static_cast<T>(N);
          for (std::size_t n = 0; n < N; ++n) gz.at3(b, d, n) = g;
        }
    }
    return gz;
  }

  ModelConfig cfg_;
  PatchEmbedder<T> embedder_;
  std::vector<ConvBlock<T>> blocks_;
  Dropout<T> head_dropout_;
  Linear<T> head_;
  bool training_ = false;
  bool merged_ = false;

  InstanceNormState<T> inorm_;
  Tensor<T> normalized_, raw_input_, last_core_out_;
};

}  // namespace ctn
