#pragma once

// Plain-SVG and text renderings of run reports and forecast overlays.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ctn/error.hpp"
#include "ctn/tensor.hpp"
#include "ctn/train.hpp"

namespace ctn {

namespace plot_detail {

struct Frame {
  double x0 = 60, y0 = 20, w = 640, h = 320;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

inline void polyline(std::ostream& os, const Frame& f, const std::vector<double>& xs,
                     const std::vector<double>& ys, const char* color) {
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i)
    os << f.px(xs[i]) << ',' << f.py(ys[i]) << ' ';
  os << "\"/>\n";
}

inline void open_svg(std::ostream& os, const Frame& f, const std::string& title,
                     const std::string& xlabel, const std::string& ylabel) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.x0 + f.w + 40 << "\" height=\""
     << f.y0 + f.h + 60 << "\">\n";
  os << "<rect x=\"" << f.x0 << "\" y=\"" << f.y0 << "\" width=\"" << f.w << "\" height=\"" << f.h
     << "\" fill=\"white\" stroke=\"#888\"/>\n";
  os << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"14\" text-anchor=\"middle\" font-size=\"13\">"
     << title << "</text>\n";
  os << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"" << f.y0 + f.h + 36
     << "\" text-anchor=\"middle\" font-size=\"11\">" << xlabel << "</text>\n";
  os << "<text x=\"14\" y=\"" << f.y0 + f.h / 2
     << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 14 " << f.y0 + f.h / 2
     << ")\">" << ylabel << "</text>\n";
  os << "<text x=\"" << f.x0 - 6 << "\" y=\"" << f.py(f.ymax) + 4
     << "\" text-anchor=\"end\" font-size=\"10\">" << f.ymax << "</text>\n";
  os << "<text x=\"" << f.x0 - 6 << "\" y=\"" << f.py(f.ymin) + 4
     << "\" text-anchor=\"end\" font-size=\"10\">" << f.ymin << "</text>\n";
}

}  // namespace plot_detail

/// Train/val loss curves of a run, one polyline each.
inline void write_loss_curve_svg(const RunReport& report, const std::string& path) {
  if (report.epochs.empty()) throw ConfigError("report has no epochs to plot");
  std::vector<double> xs, train, val;
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    xs.push_back(double(i + 1));
    train.push_back(report.epochs[i].train_loss);
    val.push_back(report.epochs[i].val_loss);
    lo = std::min({lo, train.back(), val.back()});
    hi = std::max({hi, train.back(), val.back()});
  }
  if (hi <= lo) hi = lo + 1;
  plot_detail::Frame f;
  f.xmin = 1;
  f.xmax = double(report.epochs.size());
  if (f.xmax <= f.xmin) f.xmax = f.xmin + 1;
  f.ymin = lo - 0.05 * (hi - lo);
  f.ymax = hi + 0.05 * (hi - lo);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  plot_detail::open_svg(os, f, "training and validation loss", "epoch", "loss");
  plot_detail::polyline(os, f, xs, train, "#1f77b4");
  plot_detail::polyline(os, f, xs, val, "#d62728");
  os << "<text x=\"" << f.x0 + 10 << "\" y=\"" << f.y0 + 16
     << "\" font-size=\"11\" fill=\"#1f77b4\">train</text>\n";
  os << "<text x=\"" << f.x0 + 10 << "\" y=\"" << f.y0 + 30
     << "\" font-size=\"11\" fill=\"#d62728\">val</text>\n";
  os << "</svg>\n";
}

inline void write_loss_table(const RunReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << "epoch\ttrain_loss\tval_loss\tseconds\n";
  for (std::size_t i = 0; i < report.epochs.size(); ++i)
    os << (i + 1) << '\t' << report.epochs[i].train_loss << '\t' << report.epochs[i].val_loss
       << '\t' << report.epochs[i].seconds << '\n';
  os << "# best_epoch=" << report.best_epoch << "\n";
  for (const auto& [k, v] : report.test_metrics) os << "# test." << k << "=" << v << "\n";
}

/// Ground truth in black, prediction in orange, one panel per channel. The
/// lookback tail is drawn before the horizon for context.
template <typename T>
void write_forecast_overlay_svg(const Tensor<T>& history, const Tensor<T>& truth,
                                const Tensor<T>& pred, const std::string& path,
                                std::size_t context = 96) {
  const std::size_t C = truth.extent(0), H = truth.extent(1);
  const std::size_t L = history.extent(1);
  const std::size_t ctx = std::min(context, L);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  const double panel_h = 160, panel_w = 640;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel_w + 100 << "\" height=\""
     << C * (panel_h + 40) + 20 << "\">\n";
  for (std::size_t c = 0; c < C; ++c) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t t = L - ctx; t < L; ++t) {
      lo = std::min(lo, double(history.at2(c, t)));
      hi = std::max(hi, double(history.at2(c, t)));
    }
    for (std::size_t h = 0; h < H; ++h) {
      lo = std::min({lo, double(truth.at2(c, h)), double(pred.at2(c, h))});
      hi = std::max({hi, double(truth.at2(c, h)), double(pred.at2(c, h))});
    }
    if (hi <= lo) hi = lo + 1;
    plot_detail::Frame f;
    f.x0 = 60;
    f.y0 = 20 + double(c) * (panel_h + 40);
    f.w = panel_w;
    f.h = panel_h;
    f.xmin = 0;
    f.xmax = double(ctx + H - 1);
    f.ymin = lo - 0.05 * (hi - lo);
    f.ymax = hi + 0.05 * (hi - lo);
    plot_detail::open_svg(os, f, "channel " + std::to_string(c), "step", "value");
    std::vector<double> xs, black, xo, orange;
    for (std::size_t t = 0; t < ctx; ++t) {
      xs.push_back(double(t));
      black.push_back(double(history.at2(c, L - ctx + t)));
    }
    for (std::size_t h = 0; h < H; ++h) {
      xs.push_back(double(ctx + h));
      black.push_back(double(truth.at2(c, h)));
      xo.push_back(double(ctx + h));
      orange.push_back(double(pred.at2(c, h)));
    }
    plot_detail::polyline(os, f, xs, black, "#000000");
    plot_detail::polyline(os, f, xo, orange, "#ff7f0e");
    os << "<line x1=\"" << f.px(double(ctx)) << "\" y1=\"" << f.py(f.ymin) << "\" x2=\""
       << f.px(double(ctx)) << "\" y2=\"" << f.py(f.ymax)
       << "\" stroke=\"#aaa\" stroke-dasharray=\"4 3\"/>\n";
  }
  os << "</svg>\n";
}

template <typename T>
void write_forecast_overlay_table(const Tensor<T>& truth, const Tensor<T>& pred,
                                  const std::string& path) {
  const std::size_t C = truth.extent(0), H = truth.extent(1);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << "step";
  for (std::size_t c = 0; c < C; ++c) os << "\ttruth_c" << c << "\tpred_c" << c;
  os << "\n";
  for (std::size_t h = 0; h < H; ++h) {
    os << h;
    for (std::size_t c = 0; c < C; ++c)
      os << '\t' << double(truth.at2(c, h)) << '\t' << double(pred.at2(c, h));
    os << "\n";
  }
}

}  // namespace ctn
