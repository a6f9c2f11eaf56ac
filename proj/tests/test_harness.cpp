#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ctn/bench.hpp"
#include "ctn/plot.hpp"
#include "ctn/train.hpp"

namespace fs = std::filesystem;
using ctn::Tensor;

namespace {

ctn::TrainConfig small_classify_cfg(const std::string& out_dir, std::uint64_t seed = 0) {
  ctn::TrainConfig cfg;
  cfg.model.task = ctn::Task::Classify;
  cfg.model.patch_len = 16;
  cfg.model.patch_stride = 8;
  cfg.model.embed_dim = 16;
  cfg.model.plan = {{7, 13}, 5};
  cfg.model.dropout = 0.0;
  cfg.epochs = 3;
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  return cfg;
}

std::string tmp_dir(const std::string& name) {
  const std::string d = (fs::temp_directory_path() / name).string();
  fs::create_directories(d);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CTN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(EarlyStop, DefinitionalSemantics) {
  // patience 0 with strictly worsening loss stops right after epoch 2
  ctn::EarlyStop s;
  s.patience = 0;
  EXPECT_TRUE(s.update(1.0, 1));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(1.1, 2));
  EXPECT_TRUE(s.should_stop());

  ctn::EarlyStop p3;
  p3.patience = 3;
  p3.update(1.0, 1);
  p3.update(1.2, 2);
  p3.update(1.2, 3);
  p3.update(1.2, 4);
  EXPECT_FALSE(p3.should_stop());  // 3 bad epochs == patience, keep going
  p3.update(1.2, 5);
  EXPECT_TRUE(p3.should_stop());
  EXPECT_EQ(p3.best_epoch, 1u);
  EXPECT_DOUBLE_EQ(p3.best, 1.0);
}

TEST(TrainConfig, ProtocolDefaults) {
  ctn::TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr, 1e-4);
  EXPECT_EQ(cfg.batch_size, 32u);
  EXPECT_EQ(cfg.patience, 3u);
  EXPECT_DOUBLE_EQ(cfg.model.dropout, 0.2);
  cfg.model.task = ctn::Task::Classify;
  EXPECT_EQ(cfg.resolved_epochs(), 200u);
  cfg.model.task = ctn::Task::Forecast;
  EXPECT_EQ(cfg.resolved_epochs(), 10u);
}

TEST(TrainConfig, JsonRoundTrip) {
  ctn::TrainConfig cfg;
  cfg.model.task = ctn::Task::Forecast;
  cfg.model.plan.kernel_sizes = {7, 7, 19};
  cfg.model.predictor.variant = ctn::PredictorVariant::Mlp;
  cfg.model.instance_norm = false;
  cfg.epochs = 17;
  cfg.lr = 3e-4;
  cfg.split_ratios = {0.6, 0.2, 0.2};
  cfg.data_path = "x.csv";
  ctn::TrainConfig back = ctn::train_config_from_json(ctn::to_json(cfg));
  EXPECT_EQ(back.model.task, ctn::Task::Forecast);
  EXPECT_EQ(back.model.plan.kernel_sizes, (std::vector<std::size_t>{7, 7, 19}));
  EXPECT_EQ(back.model.predictor.variant, ctn::PredictorVariant::Mlp);
  ASSERT_TRUE(back.model.instance_norm.has_value());
  EXPECT_FALSE(*back.model.instance_norm);
  EXPECT_EQ(back.epochs, 17u);
  EXPECT_DOUBLE_EQ(back.lr, 3e-4);
  EXPECT_DOUBLE_EQ(back.split_ratios[1], 0.2);
  EXPECT_EQ(back.data_path, "x.csv");
}

TEST(Train, DeterministicRunsBitwise) {
  auto data = ctn::synth_classification<float>(ctn::SynthKind::Freq3, 60, 3);
  auto [train_file, test_file] = ctn::stratified_split(data, 0.25, 9);
  auto cfg_a = small_classify_cfg(tmp_dir("ctn_det_a"), 5);
  auto cfg_b = small_classify_cfg(tmp_dir("ctn_det_b"), 5);
  auto ra = ctn::train_classify(cfg_a, train_file, test_file);
  auto rb = ctn::train_classify(cfg_b, train_file, test_file);
  ASSERT_EQ(ra.epochs.size(), rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].train_loss, rb.epochs[i].train_loss);
    EXPECT_EQ(ra.epochs[i].val_loss, rb.epochs[i].val_loss);
  }
  EXPECT_EQ(ra.test_metrics.at("accuracy"), rb.test_metrics.at("accuracy"));
  fs::remove_all(tmp_dir("ctn_det_a"));
  fs::remove_all(tmp_dir("ctn_det_b"));
}

TEST(Train, ZeroLrKeepsLossConstant) {
  // Sized so the epoch tiles into equal full batches: otherwise drop-last
  // would evaluate a different subset per epoch and the comparison would be
  // about sampling, not the optimizer.
  auto data = ctn::synth_classification<float>(ctn::SynthKind::Freq3, 120, 4);
  auto [train_file, test_file] = ctn::stratified_split(data, 0.25, 9);  // train 90
  auto cfg = small_classify_cfg(tmp_dir("ctn_lr0"), 1);
  cfg.lr = 0.0;
  cfg.epochs = 4;
  cfg.batch_size = 12;  // 72 training samples after the val carve
  auto report = ctn::train_classify(cfg, train_file, test_file);
  for (std::size_t i = 1; i < report.epochs.size(); ++i)
    EXPECT_NEAR(report.epochs[i].train_loss, report.epochs[0].train_loss, 1e-9);
  fs::remove_all(tmp_dir("ctn_lr0"));
}

TEST(Train, EvaluateReproducesReportBitwise) {
  const std::string train_path = (fs::temp_directory_path() / "ctn_h_train.txt").string();
  const std::string test_path = (fs::temp_directory_path() / "ctn_h_test.txt").string();
  auto data = ctn::synth_classification<float>(ctn::SynthKind::Freq3, 60, 6);
  auto [train_file, test_file] = ctn::stratified_split(data, 0.25, 9);
  ctn::save_classification_file(train_file, train_path);
  ctn::save_classification_file(test_file, test_path);

  auto cfg = small_classify_cfg(tmp_dir("ctn_eval_rep"), 2);
  cfg.train_path = train_path;
  cfg.test_path = test_path;
  auto report = ctn::train<float>(cfg);
  auto metrics = ctn::evaluate_checkpoint<float>(report.checkpoint_path, cfg);
  for (const auto& [k, v] : report.test_metrics) EXPECT_EQ(metrics.at(k), v) << k;
  fs::remove(train_path);
  fs::remove(test_path);
  fs::remove_all(tmp_dir("ctn_eval_rep"));
}

TEST(Train, MergedMetricsStayClose) {
  auto data = ctn::synth_classification<float>(ctn::SynthKind::Freq3, 60, 8);
  auto [train_file, test_file] = ctn::stratified_split(data, 0.25, 9);
  auto cfg = small_classify_cfg(tmp_dir("ctn_merged_eval"), 3);
  cfg.epochs = 5;
  auto report = ctn::train_classify(cfg, train_file, test_file);
  auto loaded = ctn::load_checkpoint<float>(report.checkpoint_path);
  auto dual = ctn::eval_classification(loaded.model, test_file, 32);
  loaded.model.merge_blocks();
  auto merged = ctn::eval_classification(loaded.model, test_file, 32);
  for (const auto& [k, v] : dual) EXPECT_NEAR(merged.at(k), v, 1e-4) << k;
  fs::remove_all(tmp_dir("ctn_merged_eval"));
}

TEST(Train, EvaluateRejectsIncompatibleDataset) {
  auto data = ctn::synth_classification<float>(ctn::SynthKind::Freq3, 60, 12);
  auto [train_file, test_file] = ctn::stratified_split(data, 0.25, 9);
  auto cfg = small_classify_cfg(tmp_dir("ctn_eval_badc"), 4);
  cfg.epochs = 1;
  auto report = ctn::train_classify(cfg, train_file, test_file);

  // dataset with the wrong channel count is rejected up front
  ctn::LabeledDataset<float> wrong;
  wrong.channels = 3;
  wrong.length = 128;
  wrong.num_classes = 3;
  for (int i = 0; i < 3; ++i) {
    wrong.samples.push_back(Tensor<float>({3, 128}));
    wrong.labels.push_back(i);
  }
  const std::string wrong_path = (fs::temp_directory_path() / "ctn_wrongc.txt").string();
  ctn::save_classification_file(wrong, wrong_path);
  ctn::TrainConfig eval_cfg = cfg;
  eval_cfg.test_path = wrong_path;
  EXPECT_THROW(ctn::evaluate_checkpoint<float>(report.checkpoint_path, eval_cfg),
               ctn::ConfigError);
  fs::remove(wrong_path);
  fs::remove_all(tmp_dir("ctn_eval_badc"));
}

TEST(Train, ForecastEarlyStopKeepsBestCheckpoint) {
  auto ds = ctn::synth_forecast_sine2<float>(600);
  ctn::TrainConfig cfg;
  cfg.model.task = ctn::Task::Forecast;
  cfg.model.series_len = 48;
  cfg.model.horizon = 12;
  cfg.model.patch_len = 16;
  cfg.model.patch_stride = 8;
  cfg.model.embed_dim = 16;
  cfg.model.plan = {{7, 13}, 5};
  cfg.epochs = 5;
  cfg.patience = 3;
  cfg.out_dir = tmp_dir("ctn_fc_small");
  auto report = ctn::train_forecast(cfg, ds);
  ASSERT_GT(report.best_epoch, 0);
  // best checkpoint's validation loss matches the recorded best epoch and is
  // never worse than the last epoch's
  auto loaded = ctn::load_checkpoint<float>(report.checkpoint_path);
  ds.window = {48, 12};
  auto parts = ctn::chrono_split(ds);
  ctn::Scaler<float> scaler;
  scaler.fit(ds.values, parts[0]);
  Tensor<float> scaled = scaler.transform(ds.values);
  auto val_ws = ctn::make_windows(scaled, parts[1], 48, 12);
  auto metrics = ctn::eval_forecast(loaded.model, val_ws, scaler, 32);
  EXPECT_EQ(metrics.at("mse_scaled"), report.epochs[report.best_epoch - 1].val_loss);
  EXPECT_LE(metrics.at("mse_scaled"), report.epochs.back().val_loss + 1e-12);
  fs::remove_all(tmp_dir("ctn_fc_small"));
}

TEST(Train, Freq3LossDecreasesOverFirstFiveEpochs) {
  // Default architecture, three seeds. The end-of-epoch loss over the train
  // split is the monotone quantity; the running mean also reported in the
  // epoch records compares different sample subsets and is only trendwise.
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto data = ctn::synth_classification<float>(ctn::SynthKind::Freq3, 300, seed);
    auto [train_file, test_file] = ctn::stratified_split(data, 0.25, seed);
    ctn::TrainConfig cfg;
    cfg.model.task = ctn::Task::Classify;
    cfg.epochs = 5;
    cfg.seed = seed;
    cfg.out_dir = tmp_dir("ctn_mono_" + std::to_string(seed));
    auto report = ctn::train_classify(cfg, train_file, test_file);
    for (std::size_t i = 1; i < report.epochs.size(); ++i)
      EXPECT_LT(report.epochs[i].train_eval_loss, report.epochs[i - 1].train_eval_loss)
          << "seed " << seed << " epoch " << i + 1;
    fs::remove_all(tmp_dir("ctn_mono_" + std::to_string(seed)));
  }
}

TEST(RunReport, JsonRoundTrip) {
  ctn::RunReport r;
  r.epochs = {{1.0, 1.05, 1.1, 0.5}, {0.8, 0.85, 0.9, 0.4}};
  r.test_metrics = {{"accuracy", 0.9}, {"macro_f1", 0.88}};
  r.seed = 42;
  r.best_epoch = 2;
  r.checkpoint_path = "x/best.ctn";
  r.early_stopped = true;
  const std::string path = (fs::temp_directory_path() / "ctn_report.json").string();
  r.save(path);
  auto back = ctn::RunReport::load(path);
  EXPECT_EQ(back.epochs.size(), 2u);
  EXPECT_DOUBLE_EQ(back.epochs[1].train_loss, 0.8);
  EXPECT_DOUBLE_EQ(back.test_metrics.at("accuracy"), 0.9);
  EXPECT_EQ(back.best_epoch, 2);
  EXPECT_TRUE(back.early_stopped);
  fs::remove(path);
}

TEST(Plot, WritesSvgAndTables) {
  ctn::RunReport r;
  r.epochs = {{1.0, 1.05, 1.1, 0.5}, {0.8, 0.85, 0.9, 0.4}, {0.6, 0.65, 0.7, 0.4}};
  const std::string d = tmp_dir("ctn_plots");
  ctn::write_loss_curve_svg(r, d + "/loss.svg");
  ctn::write_loss_table(r, d + "/loss.txt");
  Tensor<float> hist({2, 48});
  Tensor<float> truth({2, 12});
  Tensor<float> pred({2, 12});
  for (std::size_t i = 0; i < hist.numel(); ++i) hist[i] = float(i % 7);
  for (std::size_t i = 0; i < truth.numel(); ++i) {
    truth[i] = float(i % 5);
    pred[i] = truth[i] + 0.1f;
  }
  ctn::write_forecast_overlay_svg(hist, truth, pred, d + "/overlay.svg");
  ctn::write_forecast_overlay_table(truth, pred, d + "/overlay.txt");
  for (const char* f : {"/loss.svg", "/loss.txt", "/overlay.svg", "/overlay.txt"}) {
    std::ifstream is(d + f);
    EXPECT_TRUE(is.good()) << f;
    std::string first;
    std::getline(is, first);
    EXPECT_FALSE(first.empty());
  }
  fs::remove_all(d);
}

TEST(Bench, WellFormedWithOneRepeat) {
  ctn::ModelConfig mc;
  mc.task = ctn::Task::Classify;
  mc.channels = 1;
  mc.series_len = 64;
  mc.embed_dim = 8;
  mc.plan = {{7, 13}, 5};
  mc.num_classes = 2;
  ctn::Model<float> m(mc);
  auto rep = ctn::bench_model(m, 4, 1, 0, 1);
  EXPECT_GT(rep.dual_median_ms, 0.0);
  EXPECT_GT(rep.merged_median_ms, 0.0);
  EXPECT_EQ(rep.repeats, 1u);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("gradcheck --scope layer"), 0);
  EXPECT_EQ(run_cli("gradcheck --scope bogus"), 2);       // config error
  EXPECT_EQ(run_cli("train --task classify"), 2);         // missing data paths
  EXPECT_EQ(run_cli("eval --checkpoint /nonexistent.ctn"), 3);  // I/O error
  EXPECT_EQ(run_cli("definitely-not-a-subcommand"), 2);
}

TEST(Cli, FlagsWinOverConfigFile) {
  const std::string dir = tmp_dir("ctn_cli_cfg");
  auto data = ctn::synth_classification<double>(ctn::SynthKind::Freq3, 60, 3);
  auto [train_file, test_file] = ctn::stratified_split(data, 0.25, 9);
  ctn::save_classification_file(train_file, dir + "/train.txt");
  ctn::save_classification_file(test_file, dir + "/test.txt");
  {
    std::ofstream os(dir + "/cfg.json");
    os << R"({"epochs": 3, "model": {"task": "classify", "embed_dim": 16,
              "plan": {"kernel_sizes": [7, 13], "small_kernel": 5}, "dropout": 0.0},
              "train_path": ")"
       << dir << R"(/train.txt", "test_path": ")" << dir << R"(/test.txt",
              "out_dir": ")"
       << dir << R"(/run"})";
  }
  ASSERT_EQ(run_cli("train --config " + dir + "/cfg.json --epochs 1"), 0);
  auto report = ctn::RunReport::load(dir + "/run/run_report.json");
  EXPECT_EQ(report.epochs.size(), 1u);  // flag beat the file's 3
  fs::remove_all(dir);
}
