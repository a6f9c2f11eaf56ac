#pragma once

// Scoped gradient-check suites, always in double precision. Shared by the
// CLI `gradcheck` subcommand and the acceptance tests.

#include <functional>
#include <string>
#include <vector>

#include "ctn/depatch.hpp"
#include "ctn/fcblock.hpp"
#include "ctn/gradcheck.hpp"
#include "ctn/losses.hpp"
#include "ctn/model.hpp"

namespace ctn {

struct GradCheckComponent {
  std::string name;
  GradCheckReport report;
};

struct GradCheckSummary {
  std::vector<GradCheckComponent> components;
  double tolerance = 1e-4;

  double max_rel_err() const {
    double m = 0;
    for (const auto& c : components) m = std::max(m, c.report.max_rel_err);
    return m;
  }
  bool pass() const { return max_rel_err() <= tolerance; }
};

namespace gradcheck_detail {

inline Tensor<double> randn(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline std::vector<GradCheckItem> items_of(StateDict<double>& sd) {
  std::vector<GradCheckItem> items;
  for (auto& [name, p] : sd.params)
    items.push_back({name, p->value.data(), p->grad.data(), p->value.numel()});
  return items;
}

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& co) {
  double s = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * co[i];
  return s;
}

}  // namespace gradcheck_detail

inline GradCheckSummary gradcheck_layers(std::uint64_t seed = 1) {
  using namespace gradcheck_detail;
  GradCheckSummary out;
  Rng rng(seed);

  {  // dense, depthwise and pointwise convolution
    for (auto [cin, cout, k, groups, tag] :
         {std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, const char*>{2, 3, 3, 1, "conv.dense"},
          {4, 4, 7, 4, "conv.depthwise"},
          {3, 6, 1, 1, "conv.pointwise"}}) {
      Conv1d<double> conv = Conv1d<double>::same(cin, cout, k, groups, rng.next_u64());
      Tensor<double> x = randn({2, cin, 12}, rng);
      Tensor<double> co = randn({2, cout, 12}, rng);
      auto loss = [&]() { return weighted_sum(conv.forward(x), co); };
      loss();
      conv.w.zero_grad();
      conv.b.zero_grad();
      Tensor<double> gx = conv.backward(co);
      std::vector<GradCheckItem> items = {
          {"w", conv.w.value.data(), conv.w.grad.data(), conv.w.value.numel()},
          {"b", conv.b.value.data(), conv.b.grad.data(), conv.b.value.numel()},
          {"x", x.data(), gx.data(), x.numel()}};
      out.components.push_back({tag, grad_check(loss, items, 1e-5, 48, rng.next_u64())});
    }
  }

  for (bool training : {true, false}) {  // batch norm in both modes
    BatchNorm1d<double> bn(3);
    bn.gamma.value[1] = 1.3;
    bn.beta.value[0] = -0.4;
    if (!training) bn.seed_running_stats(0.1, 1.4);
    bn.set_training(training);
    bn.set_track_running(false);
    Tensor<double> x = randn({2, 3, 9}, rng);
    Tensor<double> co = randn({2, 3, 9}, rng);
    auto loss = [&]() { return weighted_sum(bn.forward(x), co); };
    loss();
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    Tensor<double> gx = bn.backward(co);
    std::vector<GradCheckItem> items = {
        {"gamma", bn.gamma.value.data(), bn.gamma.grad.data(), 3},
        {"beta", bn.beta.value.data(), bn.beta.grad.data(), 3},
        {"x", x.data(), gx.data(), x.numel()}};
    out.components.push_back(
        {training ? "batchnorm.train" : "batchnorm.eval",
         grad_check(loss, items, 1e-5, 64, rng.next_u64())});
  }

  {  // gelu chain
    Gelu<double> g1, g2;
    Tensor<double> x = randn({1, 2, 16}, rng);
    Tensor<double> co = randn({1, 2, 16}, rng);
    auto loss = [&]() { return weighted_sum(g2.forward(g1.forward(x)), co); };
    loss();
    Tensor<double> gx = g1.backward(g2.backward(co));
    out.components.push_back(
        {"gelu", grad_check(loss, {{"x", x.data(), gx.data(), x.numel()}}, 1e-5, 64,
                            rng.next_u64())});
  }

  {  // linear
    Linear<double> lin(6, 4, rng.next_u64());
    Tensor<double> x = randn({3, 6}, rng);
    Tensor<double> target = randn({3, 4}, rng);
    auto loss = [&]() { return mse_loss(lin.forward(x), target).value; };
    loss();
    lin.w.zero_grad();
    lin.b.zero_grad();
    auto l = mse_loss(lin.forward(x), target);
    Tensor<double> gx = lin.backward(l.grad);
    std::vector<GradCheckItem> items = {
        {"w", lin.w.value.data(), lin.w.grad.data(), lin.w.value.numel()},
        {"b", lin.b.value.data(), lin.b.grad.data(), lin.b.value.numel()},
        {"x", x.data(), gx.data(), x.numel()}};
    out.components.push_back({"linear", grad_check(loss, items, 1e-5, 64, rng.next_u64())});
  }

  {  // dropout with the mask pinned by reseeding inside the objective
    Dropout<double> drop(0.3, 0);
    drop.set_training(true);
    Tensor<double> x = randn({2, 4, 8}, rng);
    Tensor<double> co = randn({2, 4, 8}, rng);
    auto loss = [&]() {
      drop.reseed(1234);
      return weighted_sum(drop.forward(x), co);
    };
    loss();
    Tensor<double> gx = drop.backward(co);
    out.components.push_back(
        {"dropout", grad_check(loss, {{"x", x.data(), gx.data(), x.numel()}}, 1e-5, 64,
                               rng.next_u64())});
  }

  {  // learnable residual
    ScaledResidual<double> res(true);
    res.alpha.value[0] = 0.45;
    Tensor<double> base = randn({3, 5}, rng);
    Tensor<double> branch = randn({3, 5}, rng);
    Tensor<double> co = randn({3, 5}, rng);
    auto loss = [&]() { return weighted_sum(res.forward(base, branch), co); };
    loss();
    res.alpha.zero_grad();
    auto [gbase, gbranch] = res.backward(co);
    std::vector<GradCheckItem> items = {
        {"alpha", res.alpha.value.data(), res.alpha.grad.data(), 1},
        {"base", base.data(), gbase.data(), base.numel()},
        {"branch", branch.data(), gbranch.data(), branch.numel()}};
    out.components.push_back({"add_scaled", grad_check(loss, items, 1e-5, 64, rng.next_u64())});
  }

  {  // softmax cross-entropy
    Tensor<double> logits = randn({3, 5}, rng);
    std::vector<int> labels = {0, 4, 2};
    auto loss = [&]() { return softmax_cross_entropy(logits, labels).value; };
    auto l = softmax_cross_entropy(logits, labels);
    out.components.push_back(
        {"cross_entropy",
         grad_check(loss, {{"logits", logits.data(), l.grad.data(), logits.numel()}}, 1e-5, 64,
                    rng.next_u64())});
  }
  return out;
}

inline GradCheckSummary gradcheck_depatch(std::uint64_t seed = 2) {
  using namespace gradcheck_detail;
  GradCheckSummary out;
  Rng rng(seed);
  struct Case {
    PredictorVariant variant;
    bool per_channel;
    const char* tag;
  };
  for (const Case& c : {Case{PredictorVariant::Conv, false, "depatch.conv"},
                        Case{PredictorVariant::ConvConv, false, "depatch.conv_conv"},
                        Case{PredictorVariant::Mlp, false, "depatch.mlp"},
                        Case{PredictorVariant::Conv, true, "depatch.per_channel"}}) {
    PredictorConfig pc;
    pc.variant = c.variant;
    pc.per_channel = c.per_channel;
    PatchEmbedder<double> emb(2, 32, 8, 4, 6, pc, rng.next_u64());
    for (std::size_t i = 0; i < emb.head().w.value.numel(); ++i)
      emb.head().w.value[i] = 0.02 * rng.normal();
    emb.head().b.value[0] = 0.23;
    emb.head().b.value[1] = 0.11;
    Tensor<double> x = randn({2, 2, 32}, rng);
    Tensor<double> co = randn({2, 6, 8}, rng);
    auto loss = [&]() { return weighted_sum(emb.forward(x), co); };
    loss();
    StateDict<double> sd;
    emb.collect_state("emb", sd);
    sd.zero_grad();
    loss();
    Tensor<double> gx = emb.backward(co);
    auto items = items_of(sd);
    items.push_back({"x", x.data(), gx.data(), x.numel()});
    out.components.push_back({c.tag, grad_check(loss, items, 1e-5, 32, rng.next_u64())});
  }
  return out;
}

inline GradCheckSummary gradcheck_block(std::uint64_t seed = 3) {
  using namespace gradcheck_detail;
  GradCheckSummary out;
  Rng rng(seed);
  for (bool learnable : {true, false}) {
    ConvBlock<double> block(3, 7, 5, 2, 0.0, learnable, true, rng.next_u64());
    StateDict<double> sd;
    block.collect_state("block", sd);
    for (auto& [name, p] : sd.params) {
      const bool is_gamma = name.find("gamma") != std::string::npos;
      for (std::size_t i = 0; i < p->value.numel(); ++i)
        p->value[i] = is_gamma ? 1.0 + 0.1 * rng.normal() : 0.3 * rng.normal();
    }
    if (learnable) {
      block.residual_dw().alpha.value[0] = 0.6;
      block.residual_ffn().alpha.value[0] = -0.3;
    }
    block.set_training(true);
    block.set_track_running(false);
    Tensor<double> z = randn({2, 3, 10}, rng);
    Tensor<double> co = randn({2, 3, 10}, rng);
    auto loss = [&]() { return weighted_sum(block.forward(z), co); };
    loss();
    sd.zero_grad();
    loss();
    Tensor<double> gz = block.backward(co);
    auto items = items_of(sd);
    items.push_back({"z", z.data(), gz.data(), z.numel()});
    out.components.push_back({learnable ? "block.learnable" : "block.plain",
                              grad_check(loss, items, 1e-5, 24, rng.next_u64())});
  }
  return out;
}

/// End-to-end check on a small two-block model, both tasks.
inline GradCheckSummary gradcheck_model(std::uint64_t seed = 4) {
  using namespace gradcheck_detail;
  GradCheckSummary out;
  Rng rng(seed);
  for (Task task : {Task::Classify, Task::Forecast}) {
    ModelConfig cfg;
    cfg.task = task;
    cfg.channels = 2;
    cfg.series_len = 64;
    cfg.patch_len = 16;
    cfg.patch_stride = 8;
    cfg.embed_dim = 8;
    cfg.plan = {{7, 13}, 5};
    cfg.ffn_ratio = 2;
    cfg.dropout = 0.0;
    cfg.num_classes = task == Task::Classify ? 3 : 0;
    cfg.horizon = task == Task::Forecast ? 12 : 0;
    cfg.seed = rng.next_u64();
    Model<double> model(cfg);

    auto sd = model.state();
    for (auto& [name, p] : sd.params) {
      const bool is_gamma = name.find("gamma") != std::string::npos;
      const bool is_alpha = name.find("alpha") != std::string::npos;
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        if (is_gamma)
          p->value[i] = 1.0 + 0.1 * rng.normal();
        else if (is_alpha)
          p->value[i] = 0.4 + 0.2 * rng.normal();
        else
          p->value[i] = 0.25 * rng.normal();
      }
    }
    model.set_train();
    model.set_bn_tracking(false);

    Tensor<double> x = randn({2, 2, 64}, rng);
    std::vector<int> labels = {1, 2};
    Tensor<double> target = randn({2, 2, 12}, rng);
    auto loss = [&]() {
      Tensor<double> y = model.forward(x);
      if (task == Task::Classify) return softmax_cross_entropy(y, labels).value;
      return mse_loss(y, target).value;
    };
    loss();
    sd.zero_grad();
    Tensor<double> y = model.forward(x);
    Tensor<double> g = task == Task::Classify ? softmax_cross_entropy(y, labels).grad
                                              : mse_loss(y, target).grad;
    Tensor<double> gx = model.backward(g);
    auto items = items_of(sd);
    items.push_back({"input", x.data(), gx.data(), x.numel()});
    out.components.push_back({task == Task::Classify ? "model.classify" : "model.forecast",
                              grad_check(loss, items, 1e-5, 10, rng.next_u64())});
  }
  return out;
}

inline GradCheckSummary run_gradcheck_scope(const std::string& scope) {
  if (scope == "layer") return gradcheck_layers();
  if (scope == "depatch") return gradcheck_depatch();
  if (scope == "block") return gradcheck_block();
  if (scope == "model") return gradcheck_model();
  throw ConfigError("unknown gradcheck scope '" + scope + "' (layer|depatch|block|model)");
}

}  // namespace ctn
