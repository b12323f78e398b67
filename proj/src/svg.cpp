#include "circuitbench/svg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <fmt/chrono.h>
#include <fmt/format.h>

#include "circuitbench/error.hpp"

namespace circuitbench::svg {

namespace {

// Qualitative palette for series and bar groups.
constexpr const char* kPalette[] = {"#1b2a49", "#e8735a", "#3a7d44", "#8e5ba8", "#c9a227",
                                    "#2f8fb3", "#a23b3b", "#6b6b6b"};

const char* palette(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string num(double v) { return fmt::format("{:.2f}", v); }

std::string header(double width, double height, const RenderOptions& options) {
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"Helvetica, Arial, sans-serif\">\n",
      num(width), num(height));
  if (!options.deterministic) {
    const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    out += fmt::format("<!-- generated {:%Y-%m-%dT%H:%M:%SZ} -->\n", now);
  }
  out += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n", num(width),
                     num(height));
  return out;
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle",
                 double size = 12, const char* extra = "") {
  return fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"{}\" text-anchor=\"{}\"{}>{}</text>\n", num(x),
                     num(y), num(size), anchor, extra, escape(s));
}

int channel(double a, double b, double t) { return static_cast<int>(std::lround(a + (b - a) * t)); }

struct Range {
  double lo = 0, hi = 1;
};

Range padded(double lo, double hi) {
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

}  // namespace

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string diverging_color(double v, double scale) {
  // Blue (#2166ac) at -scale, near-white (#f7f7f7) at 0, red (#b2182b) at +scale.
  double t = scale > 0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  if (!std::isfinite(t)) t = 0.0;
  const int mid = 0xf7;
  int r, g, b;
  if (t >= 0) {
    r = channel(mid, 0xb2, t);
    g = channel(mid, 0x18, t);
    b = channel(mid, 0x2b, t);
  } else {
    r = channel(mid, 0x21, -t);
    g = channel(mid, 0x66, -t);
    b = channel(mid, 0xac, -t);
  }
  return fmt::format("#{:02x}{:02x}{:02x}", r, g, b);
}

std::string heatmap(std::size_t rows, std::size_t cols, const std::vector<double>& values,
                    const HeatmapSpec& spec, const RenderOptions& options) {
  if (rows == 0 || cols == 0) throw ConfigError("heatmap needs a nonempty grid");
  if (values.size() != rows * cols) throw ShapeError("heatmap: value count does not match the grid");
  double scale = spec.scale.value_or(0.0);
  if (!spec.scale) {
    for (double v : values) {
      if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
    }
  }
  const double cell = 44, left = 90, top = 56, bottom = 70, right = 110;
  const double width = left + cell * static_cast<double>(cols) + right;
  const double height = top + cell * static_cast<double>(rows) + bottom;
  std::string out = header(width, height, options);
  out += text(width / 2, 24, spec.title, "middle", 15, " font-weight=\"bold\"");

  for (std::size_t r = 0; r < rows; ++r) {
    const double y = top + cell * static_cast<double>(r);
    const std::string label = r < spec.row_labels.size() ? spec.row_labels[r] : std::to_string(r);
    out += text(left - 8, y + cell / 2 + 4, label, "end", 11);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = left + cell * static_cast<double>(c);
      const double v = values[r * cols + c];
      out += fmt::format(
          "<rect class=\"cell\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\" "
          "stroke-width=\"1\"><title>{}</title></rect>\n",
          num(x), num(y), num(cell), num(cell), diverging_color(v, scale), fmt::format("{:+.4f}", v));
      if (std::abs(v) >= spec.annotate_min) {
        const bool dark = scale > 0 && std::abs(v) / scale > 0.6;
        out += text(x + cell / 2, y + cell / 2 + 4, fmt::format("{:+.2f}", v), "middle", 10,
                    dark ? " fill=\"#ffffff\" class=\"annotation\"" : " fill=\"#222222\" class=\"annotation\"");
      }
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    const double x = left + cell * (static_cast<double>(c) + 0.5);
    const double y = top + cell * static_cast<double>(rows) + 14;
    const std::string label = c < spec.col_labels.size() ? spec.col_labels[c] : std::to_string(c);
    out += fmt::format("<text x=\"{0}\" y=\"{1}\" font-size=\"11\" text-anchor=\"end\" "
                       "transform=\"rotate(-40 {0} {1})\">{2}</text>\n",
                       num(x), num(y), escape(label));
  }
  out += text(left + cell * static_cast<double>(cols) / 2, height - 8, spec.x_label, "middle", 12);
  out += fmt::format("<text x=\"16\" y=\"{0}\" font-size=\"12\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                     num(top + cell * static_cast<double>(rows) / 2), escape(spec.y_label));

  // Colour bar.
  const double bx = left + cell * static_cast<double>(cols) + 30;
  const double bh = std::min(cell * static_cast<double>(rows), 240.0);
  for (int i = 0; i < 20; ++i) {
    const double t = 1.0 - 2.0 * (i + 0.5) / 20.0;
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"16\" height=\"{}\" fill=\"{}\"/>\n", num(bx),
                       num(top + bh * i / 20.0), num(bh / 20.0 + 0.5), diverging_color(t, 1.0));
  }
  out += text(bx + 20, top + 8, fmt::format("{:+.2f}", scale), "start", 10);
  out += text(bx + 20, top + bh / 2 + 4, "0", "start", 10);
  out += text(bx + 20, top + bh, fmt::format("{:+.2f}", -scale), "start", 10);
  out += "</svg>\n";
  return out;
}

std::string heatmap(const SweepGrid& grid, const HeatmapSpec& spec, const RenderOptions& options) {
  HeatmapSpec s = spec;
  if (s.col_labels.empty()) s.col_labels = grid.col_labels;
  if (s.row_labels.empty()) {
    for (std::size_t r = 0; r < grid.rows; ++r) s.row_labels.push_back(fmt::format("L{}", r));
  }
  return heatmap(grid.rows, grid.cols, grid.cells, s, options);
}

std::string curves(const std::vector<Series>& series, const CurvesSpec& spec,
                   const RenderOptions& options) {
  if (series.empty()) throw ConfigError("curves: no series");
  constexpr double inf = std::numeric_limits<double>::infinity();
  double x_lo = inf, x_hi = -inf, y_lo = inf, y_hi = -inf;
  for (const auto& s : series) {
    if (s.x.empty()) throw ConfigError(fmt::format("curves: series '{}' is empty", s.label));
    if (s.x.size() != s.y.size()) throw ShapeError(fmt::format("curves: series '{}' x/y mismatch", s.label));
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (spec.log_x && !(s.x[i] > 0)) {
        throw ConfigError(fmt::format("curves: log x axis needs x > 0 (series '{}')", s.label));
      }
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  for (const auto& h : spec.hlines) {
    y_lo = std::min(y_lo, h.y);
    y_hi = std::max(y_hi, h.y);
  }
  const auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
  Range xr = padded(tx(x_lo), tx(x_hi));
  if (tx(x_hi) - tx(x_lo) >= 1e-12) xr = {tx(x_lo), tx(x_hi)};
  Range yr = padded(y_lo, y_hi);
  if (spec.y_min) yr.lo = *spec.y_min;
  if (spec.y_max) yr.hi = *spec.y_max;

  const double width = 640, height = 420, left = 70, right = 180, top = 46, bottom = 56;
  const double pw = width - left - right, ph = height - top - bottom;
  const auto px = [&](double x) { return left + (tx(x) - xr.lo) / (xr.hi - xr.lo) * pw; };
  const auto py = [&](double y) { return top + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string out = header(width, height, options);
  out += text(left + pw / 2, 24, spec.title, "middle", 15, " font-weight=\"bold\"");
  out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444444\"/>\n",
                     num(left), num(top), num(pw), num(ph));
  for (int i = 0; i <= 4; ++i) {
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    out += text(left - 6, py(fy) + 4, fmt::format("{:.3g}", fy), "end", 10);
    const double gx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double label = spec.log_x ? std::pow(10.0, gx) : gx;
    out += text(left + pw * i / 4.0, top + ph + 16, fmt::format("{:.3g}", label), "middle", 10);
  }
  out += text(left + pw / 2, height - 12, spec.x_label + (spec.log_x ? " (log scale)" : ""), "middle", 12);
  out += fmt::format("<text x=\"18\" y=\"{0}\" font-size=\"12\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 18 {0})\">{1}</text>\n",
                     num(top + ph / 2), escape(spec.y_label));

  for (const auto& h : spec.hlines) {
    out += fmt::format("<line class=\"hline\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888888\" "
                       "stroke-dasharray=\"2 3\"/>\n",
                       num(left), num(py(h.y)), num(left + pw), num(py(h.y)));
    out += text(left + pw - 4, py(h.y) - 4, h.label, "end", 10);
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    std::string points;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      points += fmt::format("{}{},{}", k ? " " : "", num(px(s.x[k])), num(py(std::clamp(s.y[k], yr.lo, yr.hi))));
    }
    out += fmt::format("<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
                       points, palette(i), s.dashed ? " stroke-dasharray=\"6 4\"" : "");
    const double ly = top + 14 + 18.0 * static_cast<double>(i);
    out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                       num(left + pw + 12), num(ly), num(left + pw + 32), num(ly), palette(i));
    out += text(left + pw + 38, ly + 4, s.label, "start", 11, " class=\"legend\"");
  }
  for (const auto& m : spec.markers) {
    const double cx = px(m.x), cy = py(m.y);
    std::string star;
    for (int k = 0; k < 10; ++k) {
      const double r = k % 2 == 0 ? 9.0 : 4.0;
      const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
      star += fmt::format("{}{},{}", k ? " " : "", num(cx + r * std::cos(a)), num(cy + r * std::sin(a)));
    }
    out += fmt::format("<polygon class=\"marker\" points=\"{}\" fill=\"#d4a017\" stroke=\"#7a5c00\"/>\n", star);
    out += text(cx + 10, cy - 10, m.label, "start", 10);
  }
  out += "</svg>\n";
  return out;
}

std::string bars(const std::vector<std::vector<double>>& values, const BarsSpec& spec,
                 const RenderOptions& options) {
  if (values.empty() || spec.groups.empty()) throw ConfigError("bars: no data");
  if (values.size() != spec.categories.size()) throw ShapeError("bars: category count mismatch");
  double lo = 0, hi = 0;
  for (const auto& row : values) {
    if (row.size() != spec.groups.size()) throw ShapeError("bars: group count mismatch");
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1;
  const double group_w = 18.0 * static_cast<double>(spec.groups.size()) + 14;
  const double left = 70, right = 170, top = 46, bottom = 90, ph = 280;
  const double pw = group_w * static_cast<double>(values.size());
  const double width = left + pw + right, height = top + ph + bottom;
  const auto py = [&](double v) { return top + ph - (v - lo) / (hi - lo) * ph; };

  std::string out = header(width, height, options);
  out += text(left + pw / 2, 24, spec.title, "middle", 15, " font-weight=\"bold\"");
  out += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#444444\"/>\n", num(left),
                     num(py(0)), num(left + pw), num(py(0)));
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    out += text(left - 6, py(v) + 4, fmt::format("{:.3g}", v), "end", 10);
  }
  out += fmt::format("<text x=\"18\" y=\"{0}\" font-size=\"12\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 18 {0})\">{1}</text>\n",
                     num(top + ph / 2), escape(spec.y_label));
  for (std::size_t c = 0; c < values.size(); ++c) {
    const double gx = left + group_w * static_cast<double>(c) + 7;
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
      const double v = values[c][g];
      const double y0 = py(std::max(v, 0.0)), y1 = py(std::min(v, 0.0));
      out += fmt::format("<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"16\" height=\"{}\" fill=\"{}\">"
                         "<title>{}</title></rect>\n",
                         num(gx + 18.0 * static_cast<double>(g)), num(y0), num(y1 - y0), palette(g),
                         fmt::format("{:.4f}", v));
    }
    const double cx = gx + 9.0 * static_cast<double>(spec.groups.size());
    out += fmt::format("<text x=\"{0}\" y=\"{1}\" font-size=\"11\" text-anchor=\"end\" "
                       "transform=\"rotate(-40 {0} {1})\">{2}</text>\n",
                       num(cx), num(top + ph + 16), escape(spec.categories[c]));
  }
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const double ly = top + 14 + 18.0 * static_cast<double>(g);
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", num(left + pw + 14),
                       num(ly - 9), palette(g));
    out += text(left + pw + 32, ly + 1, spec.groups[g], "start", 11, " class=\"legend\"");
  }
  out += "</svg>\n";
  return out;
}

}  // namespace circuitbench::svg
