#include "sourcerec/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace sourcerec {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape_text(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  int width, height;
  double left, right, top, bottom;  /* margins */
  double x_min, x_max, y_min, y_max;
  bool log_x = false, log_y = false;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
  double tx(double x) const {
    const double v = log_x ? std::log10(x) : x;
    const double lo = log_x ? std::log10(x_min) : x_min;
    const double hi = log_x ? std::log10(x_max) : x_max;
    return left + (v - lo) / (hi - lo) * plot_w();
  }
  double ty(double y) const {
    const double v = log_y ? std::log10(y) : y;
    const double lo = log_y ? std::log10(y_min) : y_min;
    const double hi = log_y ? std::log10(y_max) : y_max;
    return top + plot_h() - (v - lo) / (hi - lo) * plot_h();
  }
};

/* Tick positions: round steps on linear axes, decades on log axes. */
std::vector<double> linear_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  }
  std::vector<double> ticks;
  double t = std::ceil(lo / step) * step;
  for (; t <= hi + 1e-9 * span; t += step) {
    ticks.push_back(std::abs(t) < 1e-12 * span ? 0.0 : t);
  }
  return ticks;
}

std::vector<double> log_ticks(double lo, double hi) {
  std::vector<double> ticks;
  const int k0 = static_cast<int>(std::ceil(std::log10(lo) - 1e-9));
  const int k1 = static_cast<int>(std::floor(std::log10(hi) + 1e-9));
  for (int k = k0; k <= k1; ++k) ticks.push_back(std::pow(10.0, k));
  if (ticks.empty()) {
    ticks.push_back(lo);
    ticks.push_back(hi);
  }
  return ticks;
}

void open_svg(std::ostringstream& out, int width, int height) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n";
}

void draw_text(std::ostringstream& out, double x, double y,
               const std::string& text, const std::string& anchor,
               int size, const std::string& extra = "") {
  out << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y)
      << "\" font-family=\"sans-serif\" font-size=\"" << size
      << "\" text-anchor=\"" << anchor << "\"" << extra << ">"
      << escape_text(text) << "</text>\n";
}

void draw_axes(std::ostringstream& out, const Frame& f, const PlotAxes& axes) {
  /* frame */
  out << "<rect x=\"" << fmt(f.left) << "\" y=\"" << fmt(f.top) << "\" width=\""
      << fmt(f.plot_w()) << "\" height=\"" << fmt(f.plot_h())
      << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
  const auto xticks =
      f.log_x ? log_ticks(f.x_min, f.x_max) : linear_ticks(f.x_min, f.x_max);
  for (double t : xticks) {
    const double px = f.tx(t);
    out << "<line x1=\"" << fmt(px) << "\" y1=\"" << fmt(f.top) << "\" x2=\""
        << fmt(px) << "\" y2=\"" << fmt(f.top + f.plot_h())
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    draw_text(out, px, f.top + f.plot_h() + 16, fmt_label(t), "middle", 11);
  }
  const auto yticks =
      f.log_y ? log_ticks(f.y_min, f.y_max) : linear_ticks(f.y_min, f.y_max);
  for (double t : yticks) {
    const double py = f.ty(t);
    out << "<line x1=\"" << fmt(f.left) << "\" y1=\"" << fmt(py) << "\" x2=\""
        << fmt(f.left + f.plot_w()) << "\" y2=\"" << fmt(py)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    draw_text(out, f.left - 6, py + 4, fmt_label(t), "end", 11);
  }
  if (!axes.title.empty()) {
    draw_text(out, f.left + f.plot_w() / 2, f.top - 12, axes.title, "middle",
              14);
  }
  if (!axes.x_label.empty()) {
    draw_text(out, f.left + f.plot_w() / 2, f.height - 10, axes.x_label,
              "middle", 12);
  }
  if (!axes.y_label.empty()) {
    const double cx = 16;
    const double cy = f.top + f.plot_h() / 2;
    draw_text(out, cx, cy, axes.y_label, "middle", 12,
              " transform=\"rotate(-90 " + fmt(cx) + " " + fmt(cy) + ")\"");
  }
}

/* Five-anchor colormap (dark violet -> teal -> yellow). */
void colormap(double t, int& r, int& g, int& b) {
  static const double anchors[5][4] = {{0.00, 68, 1, 84},
                                       {0.25, 59, 82, 139},
                                       {0.50, 33, 145, 140},
                                       {0.75, 94, 201, 98},
                                       {1.00, 253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    if (t <= anchors[i + 1][0]) {
      const double u = (t - anchors[i][0]) / (anchors[i + 1][0] - anchors[i][0]);
      r = static_cast<int>(std::lround(anchors[i][1] + u * (anchors[i + 1][1] - anchors[i][1])));
      g = static_cast<int>(std::lround(anchors[i][2] + u * (anchors[i + 1][2] - anchors[i][2])));
      b = static_cast<int>(std::lround(anchors[i][3] + u * (anchors[i + 1][3] - anchors[i][3])));
      return;
    }
  }
  r = 253, g = 231, b = 37;
}

std::string color_hex(double t) {
  int r, g, b;
  colormap(t, r, g, b);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string render_line_chart(const PlotAxes& axes,
                              const std::vector<PlotSeries>& series, int width,
                              int height) {
  if (series.empty()) throw ConfigInvalid("line chart needs at least one series");
  double x_min = std::numeric_limits<double>::infinity();
  double x_max = -x_min, y_min = x_min, y_max = -x_min;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) {
      throw ShapeMismatch("series '" + s.label + "': x has " +
                          std::to_string(s.x.size()) + " entries, y has " +
                          std::to_string(s.y.size()));
    }
    for (Eigen::Index i = 0; i < s.x.size(); ++i) {
      const double x = s.x[i], y = s.y[i];
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if ((axes.log_x && x <= 0) || (axes.log_y && y <= 0)) continue;
      x_min = std::min(x_min, x), x_max = std::max(x_max, x);
      y_min = std::min(y_min, y), y_max = std::max(y_max, y);
    }
  }
  if (!std::isfinite(x_min) || !std::isfinite(y_min)) {
    throw ConfigInvalid("line chart has no drawable points");
  }
  /* pad degenerate or tight ranges */
  auto pad = [](double& lo, double& hi, bool log_scale) {
    if (log_scale) {
      lo /= 1.3, hi *= 1.3;
    } else {
      const double span = hi - lo;
      const double margin = span > 0 ? 0.06 * span : std::max(1.0, std::abs(lo));
      lo -= margin, hi += margin;
    }
  };
  pad(x_min, x_max, axes.log_x);
  pad(y_min, y_max, axes.log_y);

  Frame f{width, height, 72, 20, 36, 52, x_min, x_max, y_min, y_max,
          axes.log_x, axes.log_y};
  std::ostringstream out;
  open_svg(out, width, height);
  draw_axes(out, f, axes);
  for (const auto& s : series) {
    if (s.points) {
      for (Eigen::Index i = 0; i < s.x.size(); ++i) {
        const double x = s.x[i], y = s.y[i];
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        if ((axes.log_x && x <= 0) || (axes.log_y && y <= 0)) continue;
        out << "<circle cx=\"" << fmt(f.tx(x)) << "\" cy=\"" << fmt(f.ty(y))
            << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
      }
    } else {
      std::ostringstream pts;
      bool any = false;
      for (Eigen::Index i = 0; i < s.x.size(); ++i) {
        const double x = s.x[i], y = s.y[i];
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        if ((axes.log_x && x <= 0) || (axes.log_y && y <= 0)) continue;
        pts << (any ? " " : "") << fmt(f.tx(x)) << "," << fmt(f.ty(y));
        any = true;
      }
      if (any) {
        out << "<polyline points=\"" << pts.str()
            << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\""
            << fmt(s.width) << "\"/>\n";
      }
    }
  }
  /* legend, top-right inside the frame */
  double ly = f.top + 16;
  for (const auto& s : series) {
    if (s.label.empty()) continue;
    const double lx = f.left + f.plot_w() - 150;
    if (s.points) {
      out << "<circle cx=\"" << fmt(lx + 12) << "\" cy=\"" << fmt(ly - 4)
          << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    } else {
      out << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
          << fmt(lx + 24) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\""
          << s.color << "\" stroke-width=\"2\"/>\n";
    }
    draw_text(out, lx + 30, ly, s.label, "start", 11);
    ly += 16;
  }
  out << "</svg>\n";
  return out.str();
}

Mat downsample_mean(const Mat& values, int max_rows, int max_cols) {
  const Eigen::Index nr = values.rows(), nc = values.cols();
  if (nr <= max_rows && nc <= max_cols) return values;
  const Eigen::Index out_r = std::min<Eigen::Index>(nr, max_rows);
  const Eigen::Index out_c = std::min<Eigen::Index>(nc, max_cols);
  Mat out(out_r, out_c);
  for (Eigen::Index i = 0; i < out_r; ++i) {
    const Eigen::Index r0 = i * nr / out_r;
    const Eigen::Index r1 = std::max(r0 + 1, (i + 1) * nr / out_r);
    for (Eigen::Index j = 0; j < out_c; ++j) {
      const Eigen::Index c0 = j * nc / out_c;
      const Eigen::Index c1 = std::max(c0 + 1, (j + 1) * nc / out_c);
      out(i, j) = values.block(r0, c0, r1 - r0, c1 - c0).mean();
    }
  }
  return out;
}

std::string render_heatmap(const std::string& title, const Mat& raw, double x0,
                           double x1, double y0, double y1,
                           const std::string& x_label,
                           const std::string& y_label, int width, int height) {
  if (raw.rows() == 0 || raw.cols() == 0) {
    throw ConfigInvalid("heatmap needs a non-empty matrix");
  }
  const Mat values = downsample_mean(raw, 200, 320);
  const double v_min = values.minCoeff();
  const double v_max = values.maxCoeff();
  const double span = v_max > v_min ? v_max - v_min : 1.0;

  const double left = 72, right = 88, top = 36, bottom = 52;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const Eigen::Index nr = values.rows(), nc = values.cols();
  const double cw = plot_w / static_cast<double>(nc);
  const double ch = plot_h / static_cast<double>(nr);

  std::ostringstream out;
  open_svg(out, width, height);
  for (Eigen::Index i = 0; i < nr; ++i) {
    /* row 0 maps to y0 (bottom of the plot) */
    const double py = top + plot_h - (i + 1) * ch;
    for (Eigen::Index j = 0; j < nc; ++j) {
      const double t = (values(i, j) - v_min) / span;
      out << "<rect x=\"" << fmt(left + j * cw) << "\" y=\"" << fmt(py)
          << "\" width=\"" << fmt(cw + 0.5) << "\" height=\"" << fmt(ch + 0.5)
          << "\" fill=\"" << color_hex(t) << "\"/>\n";
    }
  }
  out << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\""
      << fmt(plot_w) << "\" height=\"" << fmt(plot_h)
      << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
  for (double t : linear_ticks(x0, x1)) {
    const double px = left + (t - x0) / (x1 - x0) * plot_w;
    draw_text(out, px, top + plot_h + 16, fmt_label(t), "middle", 11);
  }
  for (double t : linear_ticks(y0, y1)) {
    const double py = top + plot_h - (t - y0) / (y1 - y0) * plot_h;
    draw_text(out, left - 6, py + 4, fmt_label(t), "end", 11);
  }
  if (!title.empty()) draw_text(out, left + plot_w / 2, top - 12, title, "middle", 14);
  if (!x_label.empty()) {
    draw_text(out, left + plot_w / 2, height - 10, x_label, "middle", 12);
  }
  if (!y_label.empty()) {
    const double cy = top + plot_h / 2;
    draw_text(out, 16, cy, y_label, "middle", 12,
              " transform=\"rotate(-90 16.00 " + fmt(cy) + ")\"");
  }
  /* color scale bar */
  const double bar_x = width - right + 20, bar_w = 14;
  const int bar_steps = 48;
  for (int k = 0; k < bar_steps; ++k) {
    const double t0 = static_cast<double>(k) / bar_steps;
    const double by = top + plot_h * (1.0 - static_cast<double>(k + 1) / bar_steps);
    out << "<rect x=\"" << fmt(bar_x) << "\" y=\"" << fmt(by) << "\" width=\""
        << fmt(bar_w) << "\" height=\"" << fmt(plot_h / bar_steps + 0.5)
        << "\" fill=\"" << color_hex(t0) << "\"/>\n";
  }
  draw_text(out, bar_x + bar_w + 4, top + plot_h, fmt_label(v_min), "start", 10);
  draw_text(out, bar_x + bar_w + 4, top + 8, fmt_label(v_max), "start", 10);
  out << "</svg>\n";
  return out.str();
}

std::string render_histogram(const std::string& title, const Vec& samples,
                             int bins, const std::vector<CurveOverlay>& overlays,
                             const std::string& x_label, int width, int height) {
  if (samples.size() == 0) throw ConfigInvalid("histogram needs samples");
  if (bins < 1) throw ConfigInvalid("histogram needs at least one bin");
  double lo = samples.minCoeff(), hi = samples.maxCoeff();
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double bin_w = (hi - lo) / bins;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    int b = static_cast<int>((samples[i] - lo) / bin_w);
    b = std::clamp(b, 0, bins - 1);
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  double density_max = 0;
  for (double& c : counts) {
    c /= n * bin_w; /* density normalization */
    density_max = std::max(density_max, c);
  }
  for (const auto& ov : overlays) {
    if (ov.x.size() != ov.density.size()) {
      throw ShapeMismatch("overlay '" + ov.label + "' length mismatch");
    }
    if (ov.density.size() > 0) density_max = std::max(density_max, ov.density.maxCoeff());
  }
  if (density_max <= 0) density_max = 1.0;

  PlotAxes axes;
  axes.title = title;
  axes.x_label = x_label;
  axes.y_label = "density";
  Frame f{width, height, 64, 18, 34, 50, lo, hi, 0.0, density_max * 1.08,
          false, false};
  std::ostringstream out;
  open_svg(out, width, height);
  draw_axes(out, f, axes);
  for (int b = 0; b < bins; ++b) {
    const double x = lo + b * bin_w;
    const double c = counts[static_cast<std::size_t>(b)];
    if (c <= 0) continue;
    out << "<rect x=\"" << fmt(f.tx(x)) << "\" y=\"" << fmt(f.ty(c))
        << "\" width=\"" << fmt(f.tx(x + bin_w) - f.tx(x)) << "\" height=\""
        << fmt(f.ty(0) - f.ty(c))
        << "\" fill=\"#9ecae1\" stroke=\"#5a8db8\" stroke-width=\"0.5\"/>\n";
  }
  double ly = f.top + 16;
  for (const auto& ov : overlays) {
    std::ostringstream pts;
    bool any = false;
    for (Eigen::Index i = 0; i < ov.x.size(); ++i) {
      if (!std::isfinite(ov.x[i]) || !std::isfinite(ov.density[i])) continue;
      if (ov.x[i] < lo || ov.x[i] > hi) continue;
      pts << (any ? " " : "") << fmt(f.tx(ov.x[i])) << ","
          << fmt(f.ty(std::min(ov.density[i], f.y_max)));
      any = true;
    }
    if (any) {
      out << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
          << ov.color << "\" stroke-width=\"1.8\"/>\n";
    }
    if (!ov.label.empty()) {
      const double lx = f.left + f.plot_w() - 130;
      out << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
          << fmt(lx + 24) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\""
          << ov.color << "\" stroke-width=\"2\"/>\n";
      draw_text(out, lx + 30, ly, ov.label, "start", 11);
      ly += 16;
    }
  }
  out << "</svg>\n";
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace sourcerec
