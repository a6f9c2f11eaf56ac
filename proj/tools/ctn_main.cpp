// Command-line harness: train, eval, export (merge), bench, gradcheck,
// synth (fixture datasets) and plot.
//
// Exit codes: 0 success, 1 validation failure (gradcheck), 2 config error,
// 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctn/ctn.hpp"

namespace fs = std::filesystem;
using ctn::json;

namespace {

struct CliOptions {
  std::string config_path;
  std::string task;
  std::string data, train_data, test_data, out_dir;
  std::optional<std::size_t> epochs, batch_size, patience;
  std::optional<double> lr, val_fraction, dropout;
  std::optional<std::uint64_t> seed;
  std::vector<double> split;
  std::string precision = "f32";
  bool save_optimizer = false;

  // model overrides
  std::optional<std::size_t> channels, series_len, patch_len, patch_stride, embed_dim,
      ffn_ratio, num_classes, horizon, predictor_kernel, predictor_hidden, small_kernel;
  std::string predictor, head;
  std::vector<std::size_t> plan;
  std::optional<bool> learnable_residual, residual_dw_only, instance_norm, per_channel;
};

ctn::TrainConfig build_train_config(const CliOptions& o) {
  json base = json::object();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw ctn::IoError("cannot open config '" + o.config_path + "'");
    try {
      is >> base;
    } catch (const json::exception& e) {
      throw ctn::ConfigError(std::string("unparsable config file: ") + e.what());
    }
  }
  ctn::TrainConfig cfg = ctn::train_config_from_json(base);

  // flags win over the file
  if (!o.task.empty()) cfg.model.task = ctn::task_from_string(o.task);
  if (!o.data.empty()) cfg.data_path = o.data;
  if (!o.train_data.empty()) cfg.train_path = o.train_data;
  if (!o.test_data.empty()) cfg.test_path = o.test_data;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.patience) cfg.patience = *o.patience;
  if (o.lr) cfg.lr = *o.lr;
  if (o.val_fraction) cfg.val_fraction = *o.val_fraction;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.split.empty()) {
    if (o.split.size() != 3) throw ctn::ConfigError("--split needs three ratios");
    cfg.split_ratios = {o.split[0], o.split[1], o.split[2]};
  }
  if (o.save_optimizer) cfg.save_optimizer = true;

  if (o.channels) cfg.model.channels = *o.channels;
  if (o.series_len) cfg.model.series_len = *o.series_len;
  if (o.patch_len) cfg.model.patch_len = *o.patch_len;
  if (o.patch_stride) cfg.model.patch_stride = *o.patch_stride;
  if (o.embed_dim) cfg.model.embed_dim = *o.embed_dim;
  if (o.ffn_ratio) cfg.model.ffn_ratio = *o.ffn_ratio;
  if (o.num_classes) cfg.model.num_classes = *o.num_classes;
  if (o.horizon) cfg.model.horizon = *o.horizon;
  if (o.dropout) cfg.model.dropout = *o.dropout;
  if (!o.predictor.empty())
    cfg.model.predictor.variant = ctn::predictor_variant_from_string(o.predictor);
  if (o.predictor_kernel) cfg.model.predictor.kernel = *o.predictor_kernel;
  if (o.predictor_hidden) cfg.model.predictor.hidden = *o.predictor_hidden;
  if (o.per_channel) cfg.model.predictor.per_channel = *o.per_channel;
  if (!o.plan.empty()) cfg.model.plan.kernel_sizes = o.plan;
  if (o.small_kernel) cfg.model.plan.small_kernel = *o.small_kernel;
  if (o.learnable_residual) cfg.model.learnable_residual = *o.learnable_residual;
  if (o.residual_dw_only) cfg.model.residual_dw_only = *o.residual_dw_only;
  if (o.instance_norm) cfg.model.instance_norm = *o.instance_norm;
  if (!o.head.empty()) cfg.model.head = ctn::head_from_string(o.head);
  return cfg;
}

void add_common_options(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file; flags win over it");
  cmd->add_option("--task", o.task, "classify|forecast");
  cmd->add_option("--data", o.data, "forecast CSV path");
  cmd->add_option("--train-data", o.train_data, "classification train file");
  cmd->add_option("--test-data", o.test_data, "classification test file");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--patience", o.patience);
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--split", o.split, "train,val,test ratios")->expected(3);
  cmd->add_option("--val-fraction", o.val_fraction);
  cmd->add_option("--precision", o.precision, "f32|f64")->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_flag("--save-optimizer", o.save_optimizer);

  cmd->add_option("--channels", o.channels);
  cmd->add_option("--series-len", o.series_len, "lookback length");
  cmd->add_option("--patch-len", o.patch_len);
  cmd->add_option("--patch-stride", o.patch_stride);
  cmd->add_option("--embed-dim", o.embed_dim);
  cmd->add_option("--ffn-ratio", o.ffn_ratio);
  cmd->add_option("--num-classes", o.num_classes);
  cmd->add_option("--horizon", o.horizon);
  cmd->add_option("--dropout", o.dropout);
  cmd->add_option("--predictor", o.predictor, "uniform|conv|conv_conv|mlp");
  cmd->add_option("--predictor-kernel", o.predictor_kernel);
  cmd->add_option("--predictor-hidden", o.predictor_hidden);
  cmd->add_option("--per-channel", o.per_channel, "per-channel deformation");
  cmd->add_option("--plan", o.plan, "per-block kernel sizes");
  cmd->add_option("--small-kernel", o.small_kernel);
  cmd->add_option("--learnable-residual", o.learnable_residual);
  cmd->add_option("--residual-dw-only", o.residual_dw_only);
  cmd->add_option("--instance-norm", o.instance_norm);
  cmd->add_option("--head", o.head, "flatten|mean_pool");
}

template <typename T>
int run_train(const ctn::TrainConfig& cfg) {
  ctn::RunReport report = ctn::train<T>(cfg);
  std::printf("trained %zu epochs; best epoch %ld\n", report.epochs.size(), report.best_epoch);
  for (const auto& [k, v] : report.test_metrics) std::printf("test %s = %.6f\n", k.c_str(), v);
  std::printf("checkpoint: %s\nreport: %s\n", report.checkpoint_path.c_str(),
              (fs::path(cfg.out_dir) / "run_report.json").c_str());
  return 0;
}

int cmd_train(const CliOptions& o) {
  ctn::TrainConfig cfg = build_train_config(o);
  if (o.precision == "f64") return run_train<double>(cfg);
  return run_train<float>(cfg);
}

int cmd_eval(const CliOptions& o, const std::string& ckpt, const std::string& split) {
  ctn::TrainConfig cfg = build_train_config(o);
  auto info = ctn::peek_checkpoint(ckpt);
  std::map<std::string, double> metrics =
      info.dtype == "f64" ? ctn::evaluate_checkpoint<double>(ckpt, cfg, split)
                          : ctn::evaluate_checkpoint<float>(ckpt, cfg, split);
  json out(metrics);
  std::printf("%s\n", out.dump(2).c_str());
  return 0;
}

template <typename T>
int run_export(const std::string& ckpt, const std::string& out_path) {
  auto loaded = ctn::load_checkpoint<T>(ckpt);
  loaded.model.set_eval();
  loaded.model.merge_blocks();
  ctn::save_checkpoint(loaded.model, out_path);
  std::printf("merged checkpoint written to %s\n", out_path.c_str());
  return 0;
}

int cmd_export(const std::string& ckpt, const std::string& out_path) {
  auto info = ctn::peek_checkpoint(ckpt);
  if (info.merged) throw ctn::ConfigError("checkpoint is already merged");
  return info.dtype == "f64" ? run_export<double>(ckpt, out_path)
                             : run_export<float>(ckpt, out_path);
}

template <typename T>
int run_bench(const std::string& ckpt, std::size_t batch, std::size_t repeats,
              std::uint64_t seed) {
  auto loaded = ctn::load_checkpoint<T>(ckpt);
  ctn::BenchReport rep = ctn::bench_model(loaded.model, batch, repeats, seed);
  std::printf("dual   median %.3f ms  p95 %.3f ms\n", rep.dual_median_ms, rep.dual_p95_ms);
  std::printf("merged median %.3f ms  p95 %.3f ms\n", rep.merged_median_ms, rep.merged_p95_ms);
  std::printf("%s\n", rep.to_json().dump().c_str());
  return 0;
}

int cmd_bench(const std::string& ckpt, std::size_t batch, std::size_t repeats,
              std::uint64_t seed) {
  auto info = ctn::peek_checkpoint(ckpt);
  return info.dtype == "f64" ? run_bench<double>(ckpt, batch, repeats, seed)
                             : run_bench<float>(ckpt, batch, repeats, seed);
}

int cmd_gradcheck(const std::string& scope) {
  std::vector<std::string> scopes;
  if (scope == "all")
    scopes = {"layer", "depatch", "block", "model"};
  else
    scopes = {scope};
  bool ok = true;
  for (const std::string& s : scopes) {
    ctn::GradCheckSummary summary = ctn::run_gradcheck_scope(s);
    for (const auto& comp : summary.components) {
      const auto& worst = comp.report.worst;
      double w = 0;
      std::string where = "-";
      for (const auto& c : worst)
        if (c.rel_err >= w) {
          w = c.rel_err;
          where = c.item + "[" + std::to_string(c.index) + "]";
        }
      std::printf("%-22s max_rel_err %.3e  worst %s  (%zu coords)\n", comp.name.c_str(),
                  comp.report.max_rel_err, where.c_str(), comp.report.coords_checked);
    }
    ok = ok && summary.pass();
  }
  std::printf(ok ? "gradcheck PASS (tol 1e-4)\n" : "gradcheck FAIL (tol 1e-4)\n");
  return ok ? 0 : 1;
}

int cmd_synth(const std::string& kind, std::size_t n, std::uint64_t seed,
              const std::string& out_dir, double train_fraction) {
  fs::create_directories(out_dir);
  if (kind == "sine2") {
    auto ds = ctn::synth_forecast_sine2<double>(n ? n : 2000);
    const std::string path = (fs::path(out_dir) / "sine2.csv").string();
    ctn::save_forecast_csv(ds, path);
    std::printf("wrote %s (%zu rows, %zu channels)\n", path.c_str(), ds.rows(), ds.channels());
    return 0;
  }
  auto ds = ctn::synth_classification<double>(ctn::synth_kind_from_string(kind), n, seed);
  auto [train, test] = ctn::stratified_split(ds, 1.0 - train_fraction, seed ^ 0x7e57);
  const std::string train_path = (fs::path(out_dir) / (kind + "_train.txt")).string();
  const std::string test_path = (fs::path(out_dir) / (kind + "_test.txt")).string();
  ctn::save_classification_file(train, train_path);
  ctn::save_classification_file(test, test_path);
  std::printf("wrote %s (%zu samples) and %s (%zu samples)\n", train_path.c_str(), train.size(),
              test_path.c_str(), test.size());
  return 0;
}

int cmd_plot(const std::string& report_path, const std::string& ckpt, const std::string& data,
             std::size_t window_index, const std::string& out_dir,
             const std::vector<double>& split) {
  fs::create_directories(out_dir);
  if (!report_path.empty()) {
    ctn::RunReport report = ctn::RunReport::load(report_path);
    const std::string svg = (fs::path(out_dir) / "loss_curve.svg").string();
    const std::string txt = (fs::path(out_dir) / "loss_curve.txt").string();
    ctn::write_loss_curve_svg(report, svg);
    ctn::write_loss_table(report, txt);
    std::printf("wrote %s and %s\n", svg.c_str(), txt.c_str());
  }
  if (!ckpt.empty()) {
    if (data.empty()) throw ctn::ConfigError("plot --checkpoint needs --data");
    auto info = ctn::peek_checkpoint(ckpt);
    if (info.config.task != ctn::Task::Forecast)
      throw ctn::ConfigError("forecast overlay needs a forecasting checkpoint");
    auto run = [&](auto tag) {
      using T = decltype(tag);
      auto loaded = ctn::load_checkpoint<T>(ckpt);
      auto ds = ctn::load_forecast_csv<T>(data);
      ds.window = {loaded.model.config().series_len, loaded.model.config().horizon};
      if (split.size() == 3) ds.split_ratios = {split[0], split[1], split[2]};
      auto parts = ctn::chrono_split(ds);
      ctn::Scaler<T> scaler;
      scaler.fit(ds.values, parts[0]);
      ctn::Tensor<T> scaled = scaler.transform(ds.values);
      auto ws = ctn::make_windows(scaled, parts[2], ds.window.lookback, ds.window.horizon);
      if (window_index >= ws.size())
        throw ctn::ConfigError("window index " + std::to_string(window_index) +
                               " out of range (test windows: " + std::to_string(ws.size()) + ")");
      std::vector<ctn::Window<T>> one = {ws[window_index]};
      ctn::Tensor<T> pred = ctn::predict_forecasts(loaded.model, one, 1)
                                .reshaped({loaded.model.config().channels,
                                           loaded.model.config().horizon});
      const std::string svg = (fs::path(out_dir) / "forecast_overlay.svg").string();
      const std::string txt = (fs::path(out_dir) / "forecast_overlay.txt").string();
      ctn::write_forecast_overlay_svg(one[0].input, one[0].target, pred, svg);
      ctn::write_forecast_overlay_table(one[0].target, pred, txt);
      std::printf("wrote %s and %s\n", svg.c_str(), txt.c_str());
    };
    if (info.dtype == "f64")
      run(double{});
    else
      run(float{});
  }
  if (report_path.empty() && ckpt.empty())
    throw ctn::ConfigError("plot needs --report and/or --checkpoint");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"1D fully convolutional time series network harness"};
  app.require_subcommand(1);

  CliOptions opt;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common_options(train_cmd, opt);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, eval_split = "test";
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--eval-split", eval_split, "train|val|test");
  add_common_options(eval_cmd, opt);

  CLI::App* export_cmd = app.add_subcommand("export", "merge branches and save");
  std::string export_ckpt, export_out = "merged.ctn";
  export_cmd->add_option("--checkpoint", export_ckpt)->required();
  export_cmd->add_option("--out", export_out);

  CLI::App* bench_cmd = app.add_subcommand("bench", "latency of dual vs merged form");
  std::string bench_ckpt;
  std::size_t bench_batch = 32, bench_repeats = 50;
  std::uint64_t bench_seed = 0;
  bench_cmd->add_option("--checkpoint", bench_ckpt)->required();
  bench_cmd->add_option("--batch", bench_batch);
  bench_cmd->add_option("--repeats", bench_repeats);
  bench_cmd->add_option("--seed", bench_seed);

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string scope = "all";
  grad_cmd->add_option("--scope", scope, "layer|depatch|block|model|all");

  CLI::App* synth_cmd = app.add_subcommand("synth", "emit fixture datasets");
  std::string synth_kind = "freq3", synth_out = "data";
  std::size_t synth_n = 300;
  std::uint64_t synth_seed = 0;
  double train_fraction = 0.75;
  synth_cmd->add_option("--kind", synth_kind, "freq3|varwidth|sine2");
  synth_cmd->add_option("--n", synth_n, "samples (classification) or rows (sine2)");
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--out", synth_out);
  synth_cmd->add_option("--train-fraction", train_fraction);

  CLI::App* plot_cmd = app.add_subcommand("plot", "loss curves and forecast overlays");
  std::string plot_report, plot_ckpt, plot_data, plot_out = "plots";
  std::size_t window_index = 0;
  std::vector<double> plot_split;
  plot_cmd->add_option("--report", plot_report, "run_report.json path");
  plot_cmd->add_option("--checkpoint", plot_ckpt);
  plot_cmd->add_option("--data", plot_data);
  plot_cmd->add_option("--window-index", window_index);
  plot_cmd->add_option("--out", plot_out);
  plot_cmd->add_option("--split", plot_split)->expected(3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(opt);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(opt, ckpt, eval_split);
    if (app.got_subcommand(export_cmd)) return cmd_export(export_ckpt, export_out);
    if (app.got_subcommand(bench_cmd))
      return cmd_bench(bench_ckpt, bench_batch, bench_repeats, bench_seed);
    if (app.got_subcommand(grad_cmd)) return cmd_gradcheck(scope);
    if (app.got_subcommand(synth_cmd))
      return cmd_synth(synth_kind, synth_n, synth_seed, synth_out, train_fraction);
    if (app.got_subcommand(plot_cmd))
      return cmd_plot(plot_report, plot_ckpt, plot_data, window_index, plot_out, plot_split);
  } catch (const ctn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ctn::IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
