#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ltcil/data.hpp"
#include "ltcil/error.hpp"
#include "ltcil/io.hpp"
#include "ltcil/metrics.hpp"

namespace ltcil {

struct NamedTrace {
  std::string name;
  GradTrace trace;
};

enum class FigureFormat { Svg, Columnar };
enum class GradStream { Pre, Post };

namespace detail {

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct EpochBand {
  double mean, lo, hi;
};

inline EpochBand band(const EpochGradStats& s, GradStream stream) {
  return stream == GradStream::Pre ? EpochBand{s.grad_norm_mean_pre, s.grad_norm_min_pre, s.grad_norm_max_pre}
                                   : EpochBand{s.grad_norm_mean_post, s.grad_norm_min_post, s.grad_norm_max_post};
}

inline std::string render_svg(const std::vector<NamedTrace>& series, GradStream stream) {
  constexpr double W = 960, H = 420, L = 70, R = 20, T = 40, B = 50;
  std::size_t epochs = 0;
  double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
  for (const auto& s : series) {
    epochs = std::max(epochs, s.trace.size());
    for (const auto& e : s.trace) {
      const auto b = band(e, stream);
      y_lo = std::min(y_lo, b.lo);
      y_hi = std::max(y_hi, b.hi);
    }
  }
  if (!(y_hi > y_lo)) y_hi = y_lo + 1.0;
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo = std::max(0.0, y_lo - pad);
  y_hi += pad;
  const double x_span = std::max<double>(1.0, static_cast<double>(epochs) - 1.0);
  auto px = [&](double i) { return L + (W - L - R) * i / x_span; };
  auto py = [&](double v) { return T + (H - T - B) * (1.0 - (v - y_lo) / (y_hi - y_lo)); };

  std::ostringstream o;
  o.precision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = y_lo + (y_hi - y_lo) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
      << "</text>\n";
  }
  o << "<text x=\"" << (W + L - R) / 2 << "\" y=\"" << H - 12 << "\" font-size=\"13\" text-anchor=\"middle\">epoch</text>\n";
  o << "<text x=\"16\" y=\"" << (H - B + T) / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (H - B + T) / 2 << ")\">gradient norm (" << (stream == GradStream::Pre ? "raw" : "after GCR") << ")</text>\n";

  for (std::size_t b : task_boundaries(series.front().trace)) {
    const double x = px(static_cast<double>(b) - 0.5);
    o << "<line class=\"task-boundary\" x1=\"" << x << "\" y1=\"" << T << "\" x2=\"" << x << "\" y2=\"" << H - B
      << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
  }

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& tr = series[s].trace;
    const char* color = series_color(s);
    o << "<g class=\"series\" data-name=\"" << xml_escape(series[s].name) << "\">\n";
    o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < tr.size(); ++i) o << px(static_cast<double>(i)) << ',' << py(band(tr[i], stream).hi) << ' ';
    for (std::size_t i = tr.size(); i-- > 0;) o << px(static_cast<double>(i)) << ',' << py(band(tr[i], stream).lo) << ' ';
    o << "\"/>\n";
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < tr.size(); ++i) o << px(static_cast<double>(i)) << ',' << py(band(tr[i], stream).mean) << ' ';
    o << "\"/>\n</g>\n";
  }

  o << "<g class=\"legend\">\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = T + 4 + 18.0 * static_cast<double>(s);
    o << "<rect x=\"" << W - R - 170 << "\" y=\"" << y << "\" width=\"14\" height=\"10\" fill=\"" << series_color(s)
      << "\"/>\n";
    o << "<text x=\"" << W - R - 150 << "\" y=\"" << y + 9 << "\" font-size=\"12\">" << xml_escape(series[s].name)
      << "</text>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

inline std::string render_columnar(const std::vector<NamedTrace>& series) {
  std::string out = "series,global_epoch,task,epoch,mean_pre,min_pre,max_pre,mean_post,min_post,max_post\n";
  for (const auto& s : series) {
    if (s.name.find_first_of(",\n") != std::string::npos) throw InvalidInput("figure data: series name contains ',' or newline");
    for (std::size_t i = 0; i < s.trace.size(); ++i) {
      const auto& e = s.trace[i];
      out += s.name + ',' + std::to_string(i) + ',' + std::to_string(e.task) + ',' + std::to_string(e.epoch);
      for (double v : {e.grad_norm_mean_pre, e.grad_norm_min_pre, e.grad_norm_max_pre, e.grad_norm_mean_post,
                       e.grad_norm_min_post, e.grad_norm_max_post}) {
        out += ',';
        append_double(out, v);
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace detail

/// Gradient-norm-per-epoch figure: one mean line and one min-max band per
/// series, dashed rules at task boundaries, and a legend. The columnar form
/// carries the same numbers for external plotting.
inline void emit_figure_data(const std::vector<NamedTrace>& series, FigureFormat format,
                             const std::filesystem::path& path, GradStream stream = GradStream::Pre) {
  if (series.empty()) throw InvalidInput("emit_figure_data: no series to plot");
  for (const auto& s : series) {
    if (s.trace.empty()) throw InvalidInput("emit_figure_data: series '" + s.name + "' has an empty trace");
  }
  write_file_atomic(path, format == FigureFormat::Svg ? detail::render_svg(series, stream)
                                                      : detail::render_columnar(series));
}

/// Parses the columnar figure file back into named traces (norm columns,
/// task and epoch only).
inline std::vector<NamedTrace> read_figure_data(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line.rfind("series,global_epoch,", 0) != 0) throw IoError("figure data: bad header");
  std::vector<NamedTrace> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 10) throw IoError("figure data: wrong field count");
    if (out.empty() || out.back().name != f[0]) out.push_back({std::string(f[0]), {}});
    EpochGradStats e;
    e.task = detail::parse_count(f[2]);
    e.epoch = detail::parse_count(f[3]);
    e.grad_norm_mean_pre = detail::parse_double(f[4]);
    e.grad_norm_min_pre = detail::parse_double(f[5]);
    e.grad_norm_max_pre = detail::parse_double(f[6]);
    e.grad_norm_mean_post = detail::parse_double(f[7]);
    e.grad_norm_min_post = detail::parse_double(f[8]);
    e.grad_norm_max_post = detail::parse_double(f[9]);
    out.back().trace.push_back(e);
  }
  return out;
}

}  // namespace ltcil
