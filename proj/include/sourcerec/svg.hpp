#pragma once

#include <string>
#include <vector>

#include "sourcerec/types.hpp"

namespace sourcerec {

/* Minimal self-contained SVG renderers (inline styling, no external assets).
   CSV outputs remain the machine-readable contract; these are conveniences
   for eyeballing runs. */

struct PlotSeries {
  std::string label;
  Vec x;
  Vec y;
  std::string color = "#1f6fb2";
  bool points = false;  /* markers instead of a connected line */
  double width = 1.6;
};

struct PlotAxes {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

/// Line/scatter chart. On log axes, non-positive coordinates are skipped.
std::string render_line_chart(const PlotAxes& axes,
                              const std::vector<PlotSeries>& series,
                              int width = 760, int height = 500);

/// Colored raster of `values` (row i, column j) over the rectangle
/// [x0,x1] x [y0,y1]; row 0 sits at y0, column 0 at x0.  Large inputs are
/// block-averaged down to a drawable cell count.
std::string render_heatmap(const std::string& title, const Mat& values,
                           double x0, double x1, double y0, double y1,
                           const std::string& x_label,
                           const std::string& y_label, int width = 860,
                           int height = 520);

struct CurveOverlay {
  std::string label;
  Vec x;
  Vec density;
  std::string color = "#c23b22";
};

/// Density-normalized histogram of `samples` with optional curve overlays
/// (e.g. a prior density) drawn on the same axes.
std::string render_histogram(const std::string& title, const Vec& samples,
                             int bins, const std::vector<CurveOverlay>& overlays,
                             const std::string& x_label, int width = 560,
                             int height = 420);

/// Block-mean reduction of a matrix to at most max_rows x max_cols.
Mat downsample_mean(const Mat& values, int max_rows, int max_cols);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace sourcerec
