#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctn/error.hpp"
#include "ctn/rng.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

struct WindowSpec {
  std::size_t lookback = 336;
  std::size_t horizon = 96;
};

/// Multivariate series in row order [T_total, C] with chronological splits.
template <typename T>
struct ForecastDataset {
  Tensor<T> values;  // [T_total, C]
  std::vector<std::string> channel_names;
  WindowSpec window;
  std::array<double, 3> split_ratios{0.7, 0.1, 0.2};

  std::size_t rows() const { return values.extent(0); }
  std::size_t channels() const { return values.extent(1); }
};

/// Contiguous row range [begin, begin+len) of a split.
struct RowRange {
  std::size_t begin = 0;
  std::size_t len = 0;
};

namespace detail {

inline bool parse_number(const std::string& cell, double& out) {
  const char* p = cell.c_str();
  char* end = nullptr;
  out = std::strtod(p, &end);
  while (end && *end == ' ') ++end;
  return end != p && end && *end == '\0';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

/// Header row required; a non-numeric leading column is treated as the
/// timestamp and dropped. Errors carry 1-based row/column locations.
template <typename T>
ForecastDataset<T> load_forecast_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line))
    throw ParseError(ParseError::Kind::Empty, 0, 0, "empty file '" + path + "'");
  std::vector<std::string> header = detail::split_csv_line(line);
  if (header.empty())
    throw ParseError(ParseError::Kind::BadHeader, 1, 0, "missing header in '" + path + "'");

  std::vector<std::vector<double>> rows;
  bool drop_first = false;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(ParseError::Kind::Ragged, lineno, cells.size(),
                       "row " + std::to_string(lineno) + " has " +
                           std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(header.size()));
    if (rows.empty()) {
      double probe;
      drop_first = !detail::parse_number(cells[0], probe);
    }
    std::vector<double> vals;
    vals.reserve(cells.size());
    for (std::size_t c = drop_first ? 1 : 0; c < cells.size(); ++c) {
      double v;
      if (!detail::parse_number(cells[c], v))
        throw ParseError(ParseError::Kind::BadNumber, lineno, c + 1,
                         "non-numeric cell '" + cells[c] + "' at row " +
                             std::to_string(lineno) + ", column " + std::to_string(c + 1));
      vals.push_back(v);
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty())
    throw ParseError(ParseError::Kind::Empty, 1, 0, "no data rows in '" + path + "'");

  ForecastDataset<T> ds;
  const std::size_t C = rows[0].size();
  ds.values = Tensor<T>({rows.size(), C});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < C; ++c) ds.values.at2(r, c) = static_cast<T>(rows[r][c]);
  for (std::size_t c = drop_first ? 1 : 0; c < header.size(); ++c)
    ds.channel_names.push_back(header[c]);
  return ds;
}

/// Contiguous chronological segments, no shuffling. Every segment must fit at
/// least one window.
template <typename T>
std::array<RowRange, 3> chrono_split(const ForecastDataset<T>& ds) {
  const auto& r = ds.split_ratios;
  if (!(r[0] > 0 && r[1] > 0 && r[2] > 0) || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw ConfigError("split ratios must be positive and sum to 1");
  const std::size_t total = ds.rows();
  const auto n_train = static_cast<std::size_t>(std::llround(r[0] * double(total)));
  const auto n_val = static_cast<std::size_t>(std::llround(r[1] * double(total)));
  if (n_train + n_val >= total) throw ConfigError("splits leave no test rows");
  std::array<RowRange, 3> out{RowRange{0, n_train}, RowRange{n_train, n_val},
                              RowRange{n_train + n_val, total - n_train - n_val}};
  const std::size_t need = ds.window.lookback + ds.window.horizon;
  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i)
    if (out[i].len < need)
      throw ConfigError(std::string(names[i]) + " split has " + std::to_string(out[i].len) +
                        " rows, needs lookback+horizon = " + std::to_string(need));
  return out;
}

/// Per-channel z-score fitted on the training rows only (biased variance,
/// matching the batch-norm convention).
template <typename T>
struct Scaler {
  Tensor<T> mean, std;

  void fit(const Tensor<T>& values, RowRange range) {
    const std::size_t C = values.extent(1);
    mean = Tensor<T>({C});
    std = Tensor<T>({C});
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (std::size_t r = range.begin; r < range.begin + range.len; ++r) {
        const double v = values.at2(r, c);
        sum += v;
        sq += v * v;
      }
      const double mu = sum / double(range.len);
      const double var = std::max(0.0, sq / double(range.len) - mu * mu);
      mean[c] = static_cast<T>(mu);
      std[c] = static_cast<T>(std::max(std::sqrt(var), 1e-8));
    }
  }

  Tensor<T> transform(const Tensor<T>& values) const {
    Tensor<T> out(values.shape());
    const std::size_t C = values.extent(1);
    for (std::size_t r = 0; r < values.extent(0); ++r)
      for (std::size_t c = 0; c < C; ++c)
        out.at2(r, c) = (values.at2(r, c) - mean[c]) / std[c];
    return out;
  }

  Tensor<T> inverse(const Tensor<T>& values) const {
    Tensor<T> out(values.shape());
    const std::size_t C = values.extent(1);
    for (std::size_t r = 0; r < values.extent(0); ++r)
      for (std::size_t c = 0; c < C; ++c)
        out.at2(r, c) = values.at2(r, c) * std[c] + mean[c];
    return out;
  }
};

/// One supervised forecasting example: lookback input and horizon target,
/// both channel-major.
template <typename T>
struct Window {
  Tensor<T> input;   // [C, lookback]
  Tensor<T> target;  // [C, horizon]
};

/// Stride-1 sliding windows; count = len - lookback - horizon + 1.
template <typename T>
std::vector<Window<T>> make_windows(const Tensor<T>& values, RowRange range,
                                    std::size_t lookback, std::size_t horizon) {
  const std::size_t need = lookback + horizon;
  if (range.len < need)
    throw ConfigError("split of " + std::to_string(range.len) + " rows cannot fit window " +
                      std::to_string(need));
  const std::size_t C = values.extent(1);
  const std::size_t count = range.len - need + 1;
  std::vector<Window<T>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Window<T> w{Tensor<T>({C, lookback}), Tensor<T>({C, horizon})};
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < lookback; ++t)
        w.input.at2(c, t) = values.at2(range.begin + i + t, c);
      for (std::size_t h = 0; h < horizon; ++h)
        w.target.at2(c, h) = values.at2(range.begin + i + lookback + h, c);
    }
    out.push_back(std::move(w));
  }
  return out;
}

/// Fixed-shape labelled samples for classification.
template <typename T>
struct LabeledDataset {
  std::vector<Tensor<T>> samples;  // each [C, T]
  std::vector<int> labels;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return samples.size(); }
};

// Text format: line 1 "channels=C length=T classes=K"; then per sample one
// "label=<int>" line followed by C lines of T comma-separated values.

template <typename T>
LabeledDataset<T> load_classification_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line))
    throw ParseError(ParseError::Kind::Empty, 0, 0, "empty file '" + path + "'");
  LabeledDataset<T> ds;
  {
    std::istringstream hs(line);
    std::string tok;
    while (hs >> tok) {
      if (tok.rfind("channels=", 0) == 0) ds.channels = std::stoul(tok.substr(9));
      else if (tok.rfind("length=", 0) == 0) ds.length = std::stoul(tok.substr(7));
      else if (tok.rfind("classes=", 0) == 0) ds.num_classes = std::stoul(tok.substr(8));
      else throw ParseError(ParseError::Kind::BadHeader, 1, 0, "bad header token '" + tok + "'");
    }
    if (!ds.channels || !ds.length || !ds.num_classes)
      throw ParseError(ParseError::Kind::BadHeader, 1, 0,
                       "header must give channels=, length=, classes=");
  }
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("label=", 0) != 0)
      throw ParseError(ParseError::Kind::BadLabel, lineno, 0,
                       "expected 'label=<int>' at line " + std::to_string(lineno));
    const int label = std::stoi(line.substr(6));
    if (label < 0 || std::size_t(label) >= ds.num_classes)
      throw ParseError(ParseError::Kind::BadLabel, lineno, 0,
                       "label " + std::to_string(label) + " out of range [0," +
                           std::to_string(ds.num_classes) + ") at line " +
                           std::to_string(lineno));
    Tensor<T> sample({ds.channels, ds.length});
    for (std::size_t c = 0; c < ds.channels; ++c) {
      if (!std::getline(is, line))
        throw ParseError(ParseError::Kind::BadValueCount, lineno + c + 1, 0,
                         "missing channel line");
      ++lineno;
      std::vector<std::string> cells = detail::split_csv_line(line);
      if (cells.size() != ds.length)
        throw ParseError(ParseError::Kind::BadValueCount, lineno, cells.size(),
                         "channel line " + std::to_string(lineno) + " has " +
                             std::to_string(cells.size()) + " values, expected " +
                             std::to_string(ds.length));
      for (std::size_t t = 0; t < ds.length; ++t) {
        double v;
        if (!detail::parse_number(cells[t], v))
          throw ParseError(ParseError::Kind::BadNumber, lineno, t + 1,
                           "non-numeric value at line " + std::to_string(lineno) +
                               ", column " + std::to_string(t + 1));
        sample.at2(c, t) = static_cast<T>(v);
      }
    }
    ds.samples.push_back(std::move(sample));
    ds.labels.push_back(label);
  }
  return ds;
}

template <typename T>
void save_classification_file(const LabeledDataset<T>& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "channels=" << ds.channels << " length=" << ds.length << " classes=" << ds.num_classes
     << "\n";
  os.precision(9);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << "label=" << ds.labels[i] << "\n";
    for (std::size_t c = 0; c < ds.channels; ++c) {
      for (std::size_t t = 0; t < ds.length; ++t)
        os << (t ? "," : "") << double(ds.samples[i].at2(c, t));
      os << "\n";
    }
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

enum class SynthKind { Freq3, VarWidth };

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "freq3") return SynthKind::Freq3;
  if (s == "varwidth") return SynthKind::VarWidth;
  throw ConfigError("unknown synthetic dataset kind '" + s + "'");
}

/// Deterministic synthetic fixtures.
///  - freq3: three sinusoid classes (periods 8/16/32), phase jitter, noise 0.1.
///  - varwidth: two classes split by the width of one localized bump
///    (narrow 5..9 vs wide 15..25) at a random position; fixed patches
///    straddle the bump while deformable ones can adapt to it.
template <typename T>
LabeledDataset<T> synth_classification(SynthKind kind, std::size_t n, std::uint64_t seed) {
  if (n < 30) throw ConfigError("synthetic dataset needs n >= 30");
  LabeledDataset<T> ds;
  ds.channels = 1;
  ds.length = 128;
  Rng rng(splitmix64(seed ^ 0x5f3759df));
  if (kind == SynthKind::Freq3) {
    ds.num_classes = 3;
    const double periods[3] = {8.0, 16.0, 32.0};
    for (std::size_t i = 0; i < n; ++i) {
      const int label = int(i % 3);
      const double phase = rng.uniform(0.0, 6.283185307179586);
      Tensor<T> s({1, ds.length});
      for (std::size_t t = 0; t < ds.length; ++t)
        s.at2(0, t) = static_cast<T>(
            std::sin(6.283185307179586 * double(t) / periods[label] + phase) +
            0.1 * rng.normal());
      ds.samples.push_back(std::move(s));
      ds.labels.push_back(label);
    }
  } else {
    ds.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = int(i % 2);
      const std::size_t width =
          label == 0 ? 5 + rng.below(5) : 15 + rng.below(11);  // narrow vs wide
      const std::size_t pos = width / 2 + rng.below(ds.length - width);
      // energy-normalized amplitude: width is the cue, not bump mass
      const double amp = 3.0 / std::sqrt(double(width));
      Tensor<T> s({1, ds.length});
      for (std::size_t t = 0; t < ds.length; ++t) {
        double v = 0.1 * rng.normal();
        const double d = std::abs(double(t) - double(pos));
        if (d <= double(width) / 2.0)
          v += amp * 0.5 * (1.0 + std::cos(6.283185307179586 * d / (2.0 * double(width))));
        s.at2(0, t) = static_cast<T>(v);
      }
      ds.samples.push_back(std::move(s));
      ds.labels.push_back(label);
    }
  }
  return ds;
}

/// Noiseless two-sinusoid multivariate series for forecasting fixtures.
template <typename T>
ForecastDataset<T> synth_forecast_sine2(std::size_t total_rows = 2000) {
  ForecastDataset<T> ds;
  ds.values = Tensor<T>({total_rows, 2});
  ds.channel_names = {"sine_a", "sine_b"};
  for (std::size_t t = 0; t < total_rows; ++t) {
    ds.values.at2(t, 0) = static_cast<T>(std::sin(6.283185307179586 * double(t) / 24.0));
    ds.values.at2(t, 1) =
        static_cast<T>(0.8 * std::sin(6.283185307179586 * double(t) / 57.0) +
                       0.4 * std::cos(6.283185307179586 * double(t) / 24.0));
  }
  return ds;
}

template <typename T>
void save_forecast_csv(const ForecastDataset<T>& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "date";
  for (const auto& name : ds.channel_names) os << "," << name;
  os << "\n";
  os.precision(9);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    os << 't' << r;  // non-numeric tick label, dropped on load like a date
    for (std::size_t c = 0; c < ds.channels(); ++c) os << "," << double(ds.values.at2(r, c));
    os << "\n";
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

/// Seeded stratified split: `fraction` of each class goes to the second part.
template <typename T>
std::pair<LabeledDataset<T>, LabeledDataset<T>> stratified_split(const LabeledDataset<T>& ds,
                                                                 double fraction,
                                                                 std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  Rng rng(splitmix64(seed ^ 0x517cc1b7));
  std::vector<std::size_t> first, second;
  for (auto& idx : by_class) {
    rng.shuffle(idx);
    const auto take = static_cast<std::size_t>(std::llround(fraction * double(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < take ? second : first).push_back(idx[i]);
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  auto pick = [&](const std::vector<std::size_t>& which) {
    LabeledDataset<T> out;
    out.channels = ds.channels;
    out.length = ds.length;
    out.num_classes = ds.num_classes;
    for (std::size_t i : which) {
      out.samples.push_back(ds.samples[i]);
      out.labels.push_back(ds.labels[i]);
    }
    return out;
  };
  return {pick(first), pick(second)};
}

}  // namespace ctn
