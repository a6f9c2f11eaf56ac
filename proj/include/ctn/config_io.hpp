#pragma once

#include <string>

#include <json.hpp>

#include "ctn/error.hpp"
#include "ctn/model.hpp"

namespace ctn {

using nlohmann::json;

inline PredictorVariant predictor_variant_from_string(const std::string& s) {
  if (s == "uniform") return PredictorVariant::Uniform;
  if (s == "conv") return PredictorVariant::Conv;
  if (s == "conv_conv") return PredictorVariant::ConvConv;
  if (s == "mlp") return PredictorVariant::Mlp;
  throw ConfigError("unknown predictor variant '" + s + "'");
}

inline Task task_from_string(const std::string& s) {
  if (s == "classify") return Task::Classify;
  if (s == "forecast") return Task::Forecast;
  throw ConfigError("unknown task '" + s + "'");
}

inline HeadKind head_from_string(const std::string& s) {
  if (s == "flatten") return HeadKind::Flatten;
  if (s == "mean_pool") return HeadKind::MeanPool;
  throw ConfigError("unknown head kind '" + s + "'");
}

inline json to_json(const ModelConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  j["channels"] = c.channels;
  j["series_len"] = c.series_len;
  j["patch_len"] = c.patch_len;
  j["patch_stride"] = c.patch_stride;
  j["predictor"] = {{"variant", to_string(c.predictor.variant)},
                    {"kernel", c.predictor.kernel},
                    {"hidden", c.predictor.hidden},
                    {"per_channel", c.predictor.per_channel}};
  j["embed_dim"] = c.embed_dim;
  j["plan"] = {{"kernel_sizes", c.plan.kernel_sizes}, {"small_kernel", c.plan.small_kernel}};
  j["ffn_ratio"] = c.ffn_ratio;
  j["dropout"] = c.dropout;
  j["learnable_residual"] = c.learnable_residual;
  j["residual_dw_only"] = c.residual_dw_only;
  if (c.instance_norm.has_value()) j["instance_norm"] = *c.instance_norm;
  j["head"] = to_string(c.head);
  j["num_classes"] = c.num_classes;
  j["horizon"] = c.horizon;
  j["seed"] = c.seed;
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("channels")) c.channels = j.at("channels").get<std::size_t>();
    if (j.contains("series_len")) c.series_len = j.at("series_len").get<std::size_t>();
    if (j.contains("patch_len")) c.patch_len = j.at("patch_len").get<std::size_t>();
    if (j.contains("patch_stride")) c.patch_stride = j.at("patch_stride").get<std::size_t>();
    if (j.contains("predictor")) {
      const json& p = j.at("predictor");
      if (p.contains("variant"))
        c.predictor.variant = predictor_variant_from_string(p.at("variant").get<std::string>());
      if (p.contains("kernel")) c.predictor.kernel = p.at("kernel").get<std::size_t>();
      if (p.contains("hidden")) c.predictor.hidden = p.at("hidden").get<std::size_t>();
      if (p.contains("per_channel")) c.predictor.per_channel = p.at("per_channel").get<bool>();
    }
    if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.contains("plan")) {
      const json& p = j.at("plan");
      if (p.contains("kernel_sizes"))
        c.plan.kernel_sizes = p.at("kernel_sizes").get<std::vector<std::size_t>>();
      if (p.contains("small_kernel")) c.plan.small_kernel = p.at("small_kernel").get<std::size_t>();
    }
    if (j.contains("ffn_ratio")) c.ffn_ratio = j.at("ffn_ratio").get<std::size_t>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("learnable_residual"))
      c.learnable_residual = j.at("learnable_residual").get<bool>();
    if (j.contains("residual_dw_only"))
      c.residual_dw_only = j.at("residual_dw_only").get<bool>();
    if (j.contains("instance_norm") && !j.at("instance_norm").is_null())
      c.instance_norm = j.at("instance_norm").get<bool>();
    if (j.contains("head")) c.head = head_from_string(j.at("head").get<std::string>());
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("horizon")) c.horizon = j.at("horizon").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return c;
}

}  // namespace ctn
