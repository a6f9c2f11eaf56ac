#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ctn/data.hpp"
#include "ctn/metrics.hpp"
#include "ctn/rng.hpp"
#include "reference_ops.hpp"

namespace fs = std::filesystem;
using ctn::Tensor;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream os(path);
  os << text;
  return path;
}

}  // namespace

TEST(ForecastCsv, BasicShapeAndTimestampColumn) {
  const std::string path =
      write_temp("ctn_csv_basic.csv", "date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,3,4\nx,5,6\n");
  auto ds = ctn::load_forecast_csv<double>(path);
  EXPECT_EQ(ds.rows(), 3u);
  EXPECT_EQ(ds.channels(), 2u);
  EXPECT_DOUBLE_EQ(ds.values.at2(2, 1), 6.0);
  ASSERT_EQ(ds.channel_names.size(), 2u);
  EXPECT_EQ(ds.channel_names[0], "a");
  fs::remove(path);
}

TEST(ForecastCsv, NumericFirstColumnIsKept) {
  const std::string path = write_temp("ctn_csv_numeric.csv", "a,b\n1,2\n3,4\n");
  auto ds = ctn::load_forecast_csv<double>(path);
  EXPECT_EQ(ds.channels(), 2u);
  EXPECT_DOUBLE_EQ(ds.values.at2(0, 0), 1.0);
  fs::remove(path);
}

TEST(ForecastCsv, DistinctParseErrors) {
  const std::string ragged = write_temp("ctn_csv_ragged.csv", "date,a,b\nx,1,2\ny,3\n");
  try {
    ctn::load_forecast_csv<double>(ragged);
    FAIL();
  } catch (const ctn::ParseError& e) {
    EXPECT_EQ(e.kind(), ctn::ParseError::Kind::Ragged);
    EXPECT_EQ(e.row(), 3u);
  }
  const std::string badnum = write_temp("ctn_csv_badnum.csv", "date,a\nx,1\ny,oops\n");
  try {
    ctn::load_forecast_csv<double>(badnum);
    FAIL();
  } catch (const ctn::ParseError& e) {
    EXPECT_EQ(e.kind(), ctn::ParseError::Kind::BadNumber);
    EXPECT_EQ(e.row(), 3u);
    EXPECT_EQ(e.col(), 2u);
  }
  const std::string empty = write_temp("ctn_csv_empty.csv", "");
  try {
    ctn::load_forecast_csv<double>(empty);
    FAIL();
  } catch (const ctn::ParseError& e) {
    EXPECT_EQ(e.kind(), ctn::ParseError::Kind::Empty);
  }
  fs::remove(ragged);
  fs::remove(badnum);
  fs::remove(empty);
}

TEST(ChronoSplit, DefaultAndCustomRatios) {
  ctn::ForecastDataset<double> ds;
  ds.values = Tensor<double>({100, 1});
  ds.window = {4, 2};
  auto parts = ctn::chrono_split(ds);
  EXPECT_EQ(parts[0].len, 70u);
  EXPECT_EQ(parts[1].len, 10u);
  EXPECT_EQ(parts[2].len, 20u);
  EXPECT_EQ(parts[1].begin, 70u);
  EXPECT_EQ(parts[2].begin, 80u);

  ds.split_ratios = {0.6, 0.2, 0.2};
  auto parts2 = ctn::chrono_split(ds);
  EXPECT_EQ(parts2[0].len, 60u);
  EXPECT_EQ(parts2[1].len, 20u);
}

TEST(ChronoSplit, TooShortSegmentRejected) {
  ctn::ForecastDataset<double> ds;
  ds.values = Tensor<double>({100, 1});
  ds.window = {12, 4};  // val split of 10 rows cannot fit 16
  try {
    ctn::chrono_split(ds);
    FAIL();
  } catch (const ctn::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("val"), std::string::npos);
  }
}

TEST(Scaler, HandValuesAndRoundTrip) {
  Tensor<double> values({3, 1}, {1, 2, 3});
  ctn::Scaler<double> sc;
  sc.fit(values, {0, 3});
  EXPECT_DOUBLE_EQ(sc.mean[0], 2.0);
  EXPECT_NEAR(sc.std[0], std::sqrt(2.0 / 3.0), 1e-12);
  Tensor<double> scaled = sc.transform(values);
  EXPECT_NEAR(scaled.at2(0, 0), -1.2247, 1e-3);
  EXPECT_NEAR(scaled.at2(1, 0), 0.0, 1e-12);
  Tensor<double> back = sc.inverse(scaled);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back[i], values[i], 1e-6);
}

TEST(Scaler, ConstantColumnFloored) {
  Tensor<double> values = Tensor<double>::full({5, 1}, 7.0);
  ctn::Scaler<double> sc;
  sc.fit(values, {0, 5});
  EXPECT_DOUBLE_EQ(sc.std[0], 1e-8);
  Tensor<double> scaled = sc.transform(values);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(scaled[i], 0.0);
}

TEST(Scaler, FitNeverSeesValTestRows) {
  ctn::Rng rng(1);
  Tensor<double> values({50, 2});
  for (std::size_t i = 0; i < values.numel(); ++i) values[i] = rng.normal();
  ctn::Scaler<double> a;
  a.fit(values, {0, 35});
  Tensor<double> mutated = values;
  for (std::size_t r = 35; r < 50; ++r)
    for (std::size_t c = 0; c < 2; ++c) mutated.at2(r, c) += 1000.0;
  ctn::Scaler<double> b;
  b.fit(mutated, {0, 35});
  EXPECT_EQ(0, std::memcmp(a.mean.data(), b.mean.data(), sizeof(double) * 2));
  EXPECT_EQ(0, std::memcmp(a.std.data(), b.std.data(), sizeof(double) * 2));
}

TEST(Windows, CountAndAlignment) {
  Tensor<double> values({10, 1});
  for (std::size_t r = 0; r < 10; ++r) values.at2(r, 0) = double(r);
  auto ws = ctn::make_windows(values, {0, 10}, 4, 2);
  ASSERT_EQ(ws.size(), 5u);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    EXPECT_DOUBLE_EQ(ws[i].input.at2(0, 0), double(i));
    EXPECT_DOUBLE_EQ(ws[i].target.at2(0, 0), double(i + 4));  // target starts at row i+T
  }
  auto one = ctn::make_windows(values, {0, 6}, 4, 2);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_THROW(ctn::make_windows(values, {0, 5}, 4, 2), ctn::ConfigError);
}

TEST(Windows, TileWithoutGaps) {
  ctn::Rng rng(2);
  Tensor<double> values({30, 2});
  for (std::size_t i = 0; i < values.numel(); ++i) values[i] = rng.normal();
  auto ws = ctn::make_windows(values, {5, 20}, 6, 3);
  EXPECT_EQ(ws.size(), 20u - 9u + 1u);
  for (std::size_t i = 0; i + 1 < ws.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 1; t < 6; ++t)
        EXPECT_DOUBLE_EQ(ws[i].input.at2(c, t), ws[i + 1].input.at2(c, t - 1));
}

TEST(ClassificationFile, RoundTripAndValidation) {
  ctn::LabeledDataset<double> ds;
  ds.channels = 2;
  ds.length = 5;
  ds.num_classes = 3;
  ctn::Rng rng(3);
  for (int i = 0; i < 4; ++i) {
    Tensor<double> s({2, 5});
    for (std::size_t j = 0; j < 10; ++j) s[j] = rng.normal();
    ds.samples.push_back(s);
    ds.labels.push_back(i % 3);
  }
  const std::string path = (fs::temp_directory_path() / "ctn_cls.txt").string();
  ctn::save_classification_file(ds, path);
  auto back = ctn::load_classification_file<double>(path);
  EXPECT_EQ(back.size(), 4u);
  EXPECT_EQ(back.channels, 2u);
  EXPECT_EQ(back.length, 5u);
  EXPECT_EQ(back.num_classes, 3u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.labels[i], ds.labels[i]);
    for (std::size_t j = 0; j < 10; ++j)
      EXPECT_NEAR(back.samples[i][j], ds.samples[i][j], 1e-7);
  }
  fs::remove(path);
}

TEST(ClassificationFile, LabelAndValueCountErrors) {
  const std::string bad_label = write_temp(
      "ctn_cls_badlabel.txt", "channels=1 length=3 classes=3\nlabel=3\n1,2,3\n");
  try {
    ctn::load_classification_file<double>(bad_label);
    FAIL();
  } catch (const ctn::ParseError& e) {
    EXPECT_EQ(e.kind(), ctn::ParseError::Kind::BadLabel);
  }
  const std::string bad_count = write_temp(
      "ctn_cls_badcount.txt", "channels=1 length=5 classes=2\nlabel=0\n1,2,3,4\n");
  try {
    ctn::load_classification_file<double>(bad_count);
    FAIL();
  } catch (const ctn::ParseError& e) {
    EXPECT_EQ(e.kind(), ctn::ParseError::Kind::BadValueCount);
    EXPECT_EQ(e.row(), 3u);
  }
  fs::remove(bad_label);
  fs::remove(bad_count);
}

TEST(Synth, DeterministicFromSeed) {
  auto a = ctn::synth_classification<double>(ctn::SynthKind::Freq3, 60, 42);
  auto b = ctn::synth_classification<double>(ctn::SynthKind::Freq3, 60, 42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.labels[i], b.labels[i]);
    EXPECT_EQ(0, std::memcmp(a.samples[i].data(), b.samples[i].data(),
                             sizeof(double) * a.samples[i].numel()));
  }
  auto c = ctn::synth_classification<double>(ctn::SynthKind::Freq3, 60, 43);
  EXPECT_NE(0, std::memcmp(a.samples[0].data(), c.samples[0].data(),
                           sizeof(double) * a.samples[0].numel()));
}

TEST(Synth, Freq3ClassBalance) {
  auto ds = ctn::synth_classification<double>(ctn::SynthKind::Freq3, 100, 0);
  std::size_t counts[3] = {0, 0, 0};
  for (int l : ds.labels) counts[l]++;
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_GE(counts[c], 100 / 3 - 1);
    EXPECT_LE(counts[c], 100 / 3 + 1);
  }
}

TEST(Synth, VarWidthClassesDifferInBumpWidth) {
  auto ds = ctn::synth_classification<double>(ctn::SynthKind::VarWidth, 200, 7);
  auto longest_run = [&](const Tensor<double>& s) {
    std::size_t best = 0, cur = 0;
    for (std::size_t t = 0; t < s.numel(); ++t) {
      cur = s[t] > 0.25 ? cur + 1 : 0;
      best = std::max(best, cur);
    }
    return best;
  };
  double narrow = 0, wide = 0;
  std::size_t n_narrow = 0, n_wide = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double run = double(longest_run(ds.samples[i]));
    if (ds.labels[i] == 0) {
      narrow += run;
      ++n_narrow;
    } else {
      wide += run;
      ++n_wide;
    }
  }
  narrow /= double(n_narrow);
  wide /= double(n_wide);
  EXPECT_LT(narrow, 10.0);
  EXPECT_GT(wide, narrow + 5.0);
}

TEST(Synth, RejectsTinyN) {
  EXPECT_THROW(ctn::synth_classification<double>(ctn::SynthKind::Freq3, 10, 0),
               ctn::ConfigError);
}

TEST(StratifiedSplit, FractionAndClassBalance) {
  auto ds = ctn::synth_classification<double>(ctn::SynthKind::Freq3, 90, 5);
  auto [train, val] = ctn::stratified_split(ds, 0.2, 11);
  EXPECT_EQ(train.size() + val.size(), 90u);
  EXPECT_EQ(val.size(), 18u);
  std::size_t counts[3] = {0, 0, 0};
  for (int l : val.labels) counts[l]++;
  for (auto c : counts) EXPECT_EQ(c, 6u);
}

TEST(Metrics, HandExamples) {
  Tensor<double> same({1, 2}, {1, 2});
  EXPECT_DOUBLE_EQ(ctn::mse(same, same), 0.0);
  Tensor<double> a({1, 2}, {0, 2});
  Tensor<double> b({1, 2}, {1, 1});
  EXPECT_DOUBLE_EQ(ctn::mae(a, b), 1.0);
  std::vector<int> pred = {0, 0, 1, 1};
  std::vector<int> truth = {0, 1, 1, 1};
  EXPECT_DOUBLE_EQ(ctn::accuracy(pred, truth), 0.75);
  EXPECT_NEAR(ctn::macro_f1(pred, truth, 2), (2.0 / 3.0 + 0.8) / 2.0, 1e-12);
}

TEST(Metrics, MatchNaiveReferencesOnRandomData) {
  ctn::Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.below(40);
    Tensor<double> p({n}), t({n});
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.normal();
      t[i] = rng.normal();
    }
    std::vector<double> pv(p.data(), p.data() + n), tv(t.data(), t.data() + n);
    EXPECT_NEAR(ctn::mse(p, t), ctn_ref::mse_naive(pv, tv), 1e-9);
    EXPECT_NEAR(ctn::mae(p, t), ctn_ref::mae_naive(pv, tv), 1e-9);

    const int K = 2 + int(rng.below(5));
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = int(rng.below(K));
      truth[i] = int(rng.below(K));
    }
    EXPECT_NEAR(ctn::accuracy(pred, truth), ctn_ref::accuracy_naive(pred, truth), 1e-9);
    EXPECT_NEAR(ctn::macro_f1(pred, truth, K), ctn_ref::macro_f1_naive(pred, truth, K), 1e-9);
  }
}

TEST(Metrics, EmptyInputsRejected) {
  EXPECT_THROW(ctn::accuracy({}, {}), ctn::ShapeError);
  Tensor<double> empty;
  EXPECT_THROW(ctn::mse(empty, empty), ctn::ShapeError);
}

TEST(SyntheticForecast, Sine2Contract) {
  auto ds = ctn::synth_forecast_sine2<double>(500);
  EXPECT_EQ(ds.rows(), 500u);
  EXPECT_EQ(ds.channels(), 2u);
  // noiseless periodic channel repeats exactly
  for (std::size_t t = 0; t + 24 < 500; ++t)
    EXPECT_NEAR(ds.values.at2(t, 0), ds.values.at2(t + 24, 0), 1e-9);
}
