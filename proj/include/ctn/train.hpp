#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ctn/adam.hpp"
#include "ctn/checkpoint.hpp"
#include "ctn/config_io.hpp"
#include "ctn/data.hpp"
#include "ctn/losses.hpp"
#include "ctn/metrics.hpp"
#include "ctn/model.hpp"

namespace ctn {

/// Training protocol knobs. Defaults follow the evaluation protocol: Adam at
/// lr 1e-4, batch 32, dropout 0.2, 200 epochs for classification, 10 epochs
/// with patience-3 early stopping for forecasting.
struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 0;  // 0 picks the task default (200 classify / 10 forecast)
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::string data_path;                  // forecasting CSV
  std::string train_path, test_path;      // classification files
  std::array<double, 3> split_ratios{0.7, 0.1, 0.2};
  double val_fraction = 0.2;              // carved from the classification train file
  std::string out_dir = "run";
  bool save_optimizer = false;

  std::size_t resolved_epochs() const {
    return epochs ? epochs : (model.task == Task::Classify ? 200 : 10);
  }
};

inline json to_json(const TrainConfig& c) {
  json j;
  j["model"] = to_json(c.model);
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["data_path"] = c.data_path;
  j["train_path"] = c.train_path;
  j["test_path"] = c.test_path;
  j["split_ratios"] = c.split_ratios;
  j["val_fraction"] = c.val_fraction;
  j["out_dir"] = c.out_dir;
  j["save_optimizer"] = c.save_optimizer;
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("data_path")) c.data_path = j.at("data_path").get<std::string>();
    if (j.contains("train_path")) c.train_path = j.at("train_path").get<std::string>();
    if (j.contains("test_path")) c.test_path = j.at("test_path").get<std::string>();
    if (j.contains("split_ratios")) c.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
    if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("save_optimizer")) c.save_optimizer = j.at("save_optimizer").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  return c;
}

struct EpochRecord {
  double train_loss = 0;       // running mean of batch losses during the epoch
  double train_eval_loss = 0;  // end-of-epoch eval-mode loss over the train split
  double val_loss = 0;
  double seconds = 0;
};

/// Append-only trace of a run, serialized next to the best checkpoint.
struct RunReport {
  std::vector<EpochRecord> epochs;
  std::map<std::string, double> test_metrics;
  json config_echo;
  std::uint64_t seed = 0;
  long best_epoch = -1;  // 1-based
  std::string checkpoint_path;
  bool early_stopped = false;

  json to_json() const {
    json j;
    json es = json::array();
    for (const auto& e : epochs)
      es.push_back({{"train_loss", e.train_loss}, {"train_eval_loss", e.train_eval_loss},
                    {"val_loss", e.val_loss}, {"seconds", e.seconds}});
    j["epochs"] = es;
    j["test_metrics"] = test_metrics;
    j["config"] = config_echo;
    j["seed"] = seed;
    j["best_epoch"] = best_epoch;
    j["checkpoint_path"] = checkpoint_path;
    j["early_stopped"] = early_stopped;
    return j;
  }

  static RunReport from_json(const json& j) {
    RunReport r;
    for (const json& e : j.at("epochs"))
      r.epochs.push_back({e.at("train_loss").get<double>(), e.value("train_eval_loss", 0.0),
                          e.at("val_loss").get<double>(), e.value("seconds", 0.0)});
    if (j.contains("test_metrics"))
      r.test_metrics = j.at("test_metrics").get<std::map<std::string, double>>();
    if (j.contains("config")) r.config_echo = j.at("config");
    r.seed = j.value("seed", std::uint64_t(0));
    r.best_epoch = j.value("best_epoch", -1L);
    r.checkpoint_path = j.value("checkpoint_path", "");
    r.early_stopped = j.value("early_stopped", false);
    return r;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report '" + path + "'");
    os << to_json().dump(2) << "\n";
  }

  static RunReport load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open report '" + path + "'");
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw IoError(std::string("unparsable report: ") + e.what());
    }
    return from_json(j);
  }
};

/// Stops once the epochs since the best validation loss exceed the patience.
struct EarlyStop {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;  // 1-based
  std::size_t since_improvement = 0;
  std::size_t patience = 3;

  bool update(double val_loss, std::size_t epoch) {
    if (val_loss < best) {
      best = val_loss;
      best_epoch = epoch;
      since_improvement = 0;
      return true;
    }
    ++since_improvement;
    return false;
  }

  bool should_stop() const { return since_improvement > patience; }
};

inline std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t epoch) {
  return splitmix64(seed ^ splitmix64(0x9e3779b9 + epoch));
}

namespace detail {

template <typename T>
Tensor<T> stack_classification(const LabeledDataset<T>& ds, const std::vector<std::size_t>& order,
                               std::size_t begin, std::size_t count, std::vector<int>& labels) {
  Tensor<T> x({count, ds.channels, ds.length});
  labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = order[begin + i];
    std::copy(ds.samples[s].data(), ds.samples[s].data() + ds.samples[s].numel(),
              x.data() + i * ds.channels * ds.length);
    labels[i] = ds.labels[s];
  }
  return x;
}

template <typename T>
Tensor<T> stack_windows(const std::vector<Window<T>>& ws, const std::vector<std::size_t>& order,
                        std::size_t begin, std::size_t count, Tensor<T>& targets) {
  const std::size_t C = ws[0].input.extent(0), L = ws[0].input.extent(1);
  const std::size_t H = ws[0].target.extent(1);
  Tensor<T> x({count, C, L});
  targets = Tensor<T>({count, C, H});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = order[begin + i];
    std::copy(ws[s].input.data(), ws[s].input.data() + C * L, x.data() + i * C * L);
    std::copy(ws[s].target.data(), ws[s].target.data() + C * H, targets.data() + i * C * H);
  }
  return x;
}

/// Full training batches; falls back to one short batch when the set is
/// smaller than the batch size so tiny fixtures stay trainable.
inline std::vector<std::pair<std::size_t, std::size_t>> train_batches(std::size_t n,
                                                                      std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (n >= batch) {
    for (std::size_t b = 0; b + batch <= n; b += batch) out.emplace_back(b, batch);
  } else if (n > 0) {
    out.emplace_back(0, n);
  }
  return out;
}

inline std::vector<std::pair<std::size_t, std::size_t>> eval_batches(std::size_t n,
                                                                     std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) out.emplace_back(b, std::min(batch, n - b));
  return out;
}

}  // namespace detail

/// Eval-mode logits over a whole dataset, in dataset order.
template <typename T>
Tensor<T> predict_logits(Model<T>& model, const LabeledDataset<T>& ds, std::size_t batch) {
  model.set_eval();
  Tensor<T> logits({ds.size(), model.config().num_classes});
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::vector<int> scratch;
  for (auto [begin, count] : detail::eval_batches(ds.size(), batch)) {
    Tensor<T> x = detail::stack_classification(ds, order, begin, count, scratch);
    Tensor<T> out = model.forward(x);
    std::copy(out.data(), out.data() + out.numel(),
              logits.data() + begin * model.config().num_classes);
  }
  return logits;
}

template <typename T>
std::map<std::string, double> eval_classification(Model<T>& model, const LabeledDataset<T>& ds,
                                                  std::size_t batch) {
  Tensor<T> logits = predict_logits(model, ds, batch);
  auto ce = softmax_cross_entropy(logits, ds.labels);
  return {{"accuracy", accuracy(logits, ds.labels)},
          {"macro_f1", macro_f1(logits, ds.labels)},
          {"cross_entropy", ce.value}};
}

/// Eval-mode forecasts over all windows, in window order. Inputs are in
/// scaled space; outputs too.
template <typename T>
Tensor<T> predict_forecasts(Model<T>& model, const std::vector<Window<T>>& ws,
                            std::size_t batch) {
  model.set_eval();
  const std::size_t C = model.config().channels, H = model.config().horizon;
  Tensor<T> preds({ws.size(), C, H});
  std::vector<std::size_t> order(ws.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  Tensor<T> targets;
  for (auto [begin, count] : detail::eval_batches(ws.size(), batch)) {
    Tensor<T> x = detail::stack_windows(ws, order, begin, count, targets);
    Tensor<T> out = model.forward(x);
    std::copy(out.data(), out.data() + out.numel(), preds.data() + begin * C * H);
  }
  return preds;
}

template <typename T>
std::map<std::string, double> eval_forecast(Model<T>& model, const std::vector<Window<T>>& ws,
                                            const Scaler<T>& scaler, std::size_t batch) {
  const std::size_t C = model.config().channels, H = model.config().horizon;
  Tensor<T> preds = predict_forecasts(model, ws, batch);
  Tensor<T> truth({ws.size(), C, H});
  for (std::size_t i = 0; i < ws.size(); ++i)
    std::copy(ws[i].target.data(), ws[i].target.data() + C * H, truth.data() + i * C * H);
  std::map<std::string, double> m;
  m["mse_scaled"] = mse(preds, truth);
  m["mae_scaled"] = mae(preds, truth);
  // de-scale per channel for the headline metrics
  Tensor<T> dp(preds.shape()), dt(truth.shape());
  for (std::size_t i = 0; i < ws.size(); ++i)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h) {
        dp.at3(i, c, h) = preds.at3(i, c, h) * scaler.std[c] + scaler.mean[c];
        dt.at3(i, c, h) = truth.at3(i, c, h) * scaler.std[c] + scaler.mean[c];
      }
  m["mse"] = mse(dp, dt);
  m["mae"] = mae(dp, dt);
  return m;
}

/// In-memory classification training; data is already split into the archive
/// train/test parts. A stratified validation slice is carved from the train
/// part for model selection.
template <typename T>
RunReport train_classify(TrainConfig cfg, const LabeledDataset<T>& train_file,
                         const LabeledDataset<T>& test_file) {
  if (train_file.channels != test_file.channels || train_file.length != test_file.length ||
      train_file.num_classes != test_file.num_classes)
    throw ConfigError("train/test classification files disagree on shape");
  cfg.model.task = Task::Classify;
  cfg.model.channels = train_file.channels;
  cfg.model.series_len = train_file.length;
  cfg.model.num_classes = train_file.num_classes;
  cfg.model.horizon = 0;
  cfg.model.seed = cfg.seed;
  cfg.model.validate();

  auto [train_ds, val_ds] = stratified_split(train_file, cfg.val_fraction, cfg.seed);

  std::filesystem::create_directories(cfg.out_dir);
  const std::string ckpt_path = (std::filesystem::path(cfg.out_dir) / "best.ctn").string();

  Model<T> model(cfg.model);
  auto sd = model.state();
  std::vector<Param<T>*> params;
  for (auto& [name, p] : sd.params) params.push_back(p);
  Adam<T> opt(params, static_cast<T>(cfg.lr));

  RunReport report;
  report.config_echo = to_json(cfg);
  report.seed = cfg.seed;
  report.checkpoint_path = ckpt_path;

  EarlyStop stop;
  stop.patience = cfg.patience;
  std::vector<std::size_t> order(train_ds.size());
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (std::size_t epoch = 1; epoch <= cfg.resolved_epochs(); ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(epoch_shuffle_seed(cfg.seed, epoch));
    shuffle_rng.shuffle(order);
    model.set_train();
    double train_loss = 0;
    const auto batches = detail::train_batches(train_ds.size(), cfg.batch_size);
    std::vector<int> labels;
    for (auto [begin, count] : batches) {
      Tensor<T> x = detail::stack_classification(train_ds, order, begin, count, labels);
      Tensor<T> logits = model.forward(x);
      auto loss = softmax_cross_entropy(logits, labels);
      train_loss += loss.value;
      model.backward(loss.grad);
      opt.step();
      opt.zero_grad();
    }
    train_loss /= double(batches.size());

    const double train_eval =
        eval_classification(model, train_ds, cfg.batch_size)["cross_entropy"];
    auto val_metrics = eval_classification(model, val_ds, cfg.batch_size);
    const double val_loss = val_metrics["cross_entropy"];
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back({train_loss, train_eval, val_loss, secs});
    if (stop.update(val_loss, epoch)) {
      report.best_epoch = long(epoch);
      save_checkpoint(model, ckpt_path);
    }
  }

  auto best = load_checkpoint<T>(ckpt_path);
  report.test_metrics = eval_classification(best.model, test_file, cfg.batch_size);
  report.save((std::filesystem::path(cfg.out_dir) / "run_report.json").string());
  return report;
}

/// Forecasting training over chronological splits of one series. The scaler
/// is fitted on the train split only; the loss is MSE in scaled space and the
/// reported metrics cover both scaled and de-scaled values.
template <typename T>
RunReport train_forecast(TrainConfig cfg, ForecastDataset<T> ds) {
  cfg.model.task = Task::Forecast;
  cfg.model.channels = ds.channels();
  cfg.model.num_classes = 0;
  cfg.model.seed = cfg.seed;
  cfg.model.validate();
  ds.window = {cfg.model.series_len, cfg.model.horizon};
  ds.split_ratios = cfg.split_ratios;

  auto parts = chrono_split(ds);
  Scaler<T> scaler;
  scaler.fit(ds.values, parts[0]);
  Tensor<T> scaled = scaler.transform(ds.values);
  auto train_ws = make_windows(scaled, parts[0], ds.window.lookback, ds.window.horizon);
  auto val_ws = make_windows(scaled, parts[1], ds.window.lookback, ds.window.horizon);
  auto test_ws = make_windows(scaled, parts[2], ds.window.lookback, ds.window.horizon);

  std::filesystem::create_directories(cfg.out_dir);
  const std::string ckpt_path = (std::filesystem::path(cfg.out_dir) / "best.ctn").string();

  Model<T> model(cfg.model);
  auto sd = model.state();
  std::vector<Param<T>*> params;
  for (auto& [name, p] : sd.params) params.push_back(p);
  Adam<T> opt(params, static_cast<T>(cfg.lr));

  RunReport report;
  report.config_echo = to_json(cfg);
  report.seed = cfg.seed;
  report.checkpoint_path = ckpt_path;

  EarlyStop stop;
  stop.patience = cfg.patience;
  std::vector<std::size_t> order(train_ws.size());
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (std::size_t epoch = 1; epoch <= cfg.resolved_epochs(); ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(epoch_shuffle_seed(cfg.seed, epoch));
    shuffle_rng.shuffle(order);
    model.set_train();
    double train_loss = 0;
    const auto batches = detail::train_batches(train_ws.size(), cfg.batch_size);
    Tensor<T> targets;
    for (auto [begin, count] : batches) {
      Tensor<T> x = detail::stack_windows(train_ws, order, begin, count, targets);
      Tensor<T> pred = model.forward(x);
      auto loss = mse_loss(pred, targets);
      train_loss += loss.value;
      model.backward(loss.grad);
      opt.step();
      opt.zero_grad();
    }
    train_loss /= double(batches.size());

    const double train_eval = eval_forecast(model, train_ws, scaler, cfg.batch_size)["mse_scaled"];
    auto val_metrics = eval_forecast(model, val_ws, scaler, cfg.batch_size);
    const double val_loss = val_metrics["mse_scaled"];
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back({train_loss, train_eval, val_loss, secs});
    if (stop.update(val_loss, epoch)) {
      report.best_epoch = long(epoch);
      save_checkpoint(model, ckpt_path);
    }
    if (stop.should_stop()) {
      report.early_stopped = true;
      break;
    }
  }

  auto best = load_checkpoint<T>(ckpt_path);
  report.test_metrics = eval_forecast(best.model, test_ws, scaler, cfg.batch_size);
  report.save((std::filesystem::path(cfg.out_dir) / "run_report.json").string());
  return report;
}

/// File-based entry point used by the CLI.
template <typename T>
RunReport train(const TrainConfig& cfg) {
  if (cfg.model.task == Task::Classify) {
    if (cfg.train_path.empty() || cfg.test_path.empty())
      throw ConfigError("classification training needs --train-data and --test-data");
    auto train_file = load_classification_file<T>(cfg.train_path);
    auto test_file = load_classification_file<T>(cfg.test_path);
    return train_classify(cfg, train_file, test_file);
  }
  if (cfg.data_path.empty()) throw ConfigError("forecast training needs --data");
  auto ds = load_forecast_csv<T>(cfg.data_path);
  return train_forecast(cfg, std::move(ds));
}

/// Recomputes metrics for a stored checkpoint. For forecasting, the scaler is
/// refitted deterministically on the CSV's train split.
template <typename T>
std::map<std::string, double> evaluate_checkpoint(const std::string& ckpt_path,
                                                  const TrainConfig& cfg,
                                                  const std::string& split = "test") {
  auto loaded = load_checkpoint<T>(ckpt_path);
  Model<T>& model = loaded.model;
  if (model.config().task == Task::Classify) {
    const std::string path = !cfg.test_path.empty() ? cfg.test_path : cfg.data_path;
    if (path.empty()) throw ConfigError("evaluate needs a dataset path");
    auto ds = load_classification_file<T>(path);
    if (ds.channels != model.config().channels || ds.length != model.config().series_len)
      throw ConfigError("dataset shape [C=" + std::to_string(ds.channels) + ",T=" +
                        std::to_string(ds.length) + "] does not match the checkpoint");
    return eval_classification(model, ds, cfg.batch_size);
  }
  if (cfg.data_path.empty()) throw ConfigError("evaluate needs --data for forecasting");
  auto ds = load_forecast_csv<T>(cfg.data_path);
  if (ds.channels() != model.config().channels)
    throw ConfigError("dataset channels " + std::to_string(ds.channels()) +
                      " do not match the checkpoint");
  ds.window = {model.config().series_len, model.config().horizon};
  ds.split_ratios = cfg.split_ratios;
  auto parts = chrono_split(ds);
  Scaler<T> scaler;
  scaler.fit(ds.values, parts[0]);
  Tensor<T> scaled = scaler.transform(ds.values);
  const RowRange range = split == "train" ? parts[0] : split == "val" ? parts[1] : parts[2];
  auto ws = make_windows(scaled, range, ds.window.lookback, ds.window.horizon);
  return eval_forecast(model, ws, scaler, cfg.batch_size);
}

}  // namespace ctn
