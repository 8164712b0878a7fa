#include "sourcerec/app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sourcerec/accuracy.hpp"
#include "sourcerec/forward.hpp"
#include "sourcerec/gmrf.hpp"
#include "sourcerec/inference.hpp"
#include "sourcerec/io.hpp"
#include "sourcerec/svg.hpp"

namespace sourcerec {

namespace {

LogLevel active_log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("SOURCEREC_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    if (v != "info") {
      std::cerr << "[sourcerec] error: unknown SOURCEREC_LOG level '" << v
                << "', using info\n";
    }
    return LogLevel::kInfo;
  }();
  return level;
}

}  // namespace

void log_message(LogLevel level, const std::string& text) {
  if (static_cast<int>(level) > static_cast<int>(active_log_level())) return;
  const char* tag = level == LogLevel::kError  ? "error"
                    : level == LogLevel::kInfo ? "info"
                                               : "debug";
  std::cerr << "[sourcerec] " << tag << ": " << text << "\n";
}

namespace {

/* ------------------------------------------------------------------ */
/* shared context and config readers                                   */
/* ------------------------------------------------------------------ */

struct RunContext {
  ConfigMap cfg;
  std::string command;
  std::string kind;  /* steady-1d | steady-2d | spacetime-1d */
  std::filesystem::path out;
  std::uint64_t seed = 1;
  int workers = 0;

  std::string path(const std::string& file) const {
    return (out / file).string();
  }
};

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (tag + 1));
}

RunContext make_context(const CliOptions& opts, ConfigMap cfg,
                        const std::string& default_kind) {
  if (opts.seed) cfg.set("seed", std::to_string(*opts.seed));
  if (opts.workers) cfg.set("workers", std::to_string(*opts.workers));
  if (opts.out_dir) cfg.set("out", *opts.out_dir);

  RunContext ctx;
  ctx.cfg = std::move(cfg);
  ctx.command = opts.command;
  const std::string recorded = ctx.cfg.get_string("command", opts.command);
  if (recorded != opts.command) {
    throw ConfigInvalid("config was written for command '" + recorded +
                        "', not '" + opts.command + "'");
  }
  ctx.kind = default_kind.empty() ? ctx.cfg.require_string("case")
                                  : ctx.cfg.get_string("case", default_kind);
  if (ctx.kind != "steady-1d" && ctx.kind != "steady-2d" &&
      ctx.kind != "spacetime-1d") {
    throw ConfigInvalid("case must be steady-1d, steady-2d, or spacetime-1d "
                        "(got '" + ctx.kind + "')");
  }
  const std::int64_t seed = ctx.cfg.get_int("seed", 1);
  if (seed < 0) throw ConfigInvalid("seed must be nonnegative");
  ctx.seed = static_cast<std::uint64_t>(seed);
  ctx.workers = static_cast<int>(ctx.cfg.get_int("workers", 0));
  if (ctx.workers < 0) throw ConfigInvalid("workers must be nonnegative");
  ctx.out = ctx.cfg.get_string("out", "sourcerec-" + opts.command);
  return ctx;
}

Mesh build_mesh(const RunContext& ctx) {
  const ConfigMap& cfg = ctx.cfg;
  const double buffer = cfg.get_double("mesh.buffer", 0.0);
  if (buffer < 0) throw ConfigInvalid("mesh.buffer must be nonnegative");
  if (ctx.kind == "steady-2d") {
    const double x0 = cfg.require_double("mesh.lo.x");
    const double x1 = cfg.require_double("mesh.hi.x");
    const double y0 = cfg.require_double("mesh.lo.y");
    const double y1 = cfg.require_double("mesh.hi.y");
    const int nx = static_cast<int>(cfg.require_int("mesh.nodes.x"));
    const int ny = static_cast<int>(cfg.require_int("mesh.nodes.y"));
    return build_rect_mesh(x0, x1, y0, y1, nx, ny, buffer);
  }
  const double lo = cfg.require_double("mesh.lo");
  const double hi = cfg.require_double("mesh.hi");
  const int n = static_cast<int>(cfg.require_int("mesh.nodes"));
  return build_interval_mesh(lo, hi, n, buffer);
}

/* Equal-width zones across the region of interest along x; buffer nodes take
   the nearest zone. */
IVec zone_index(const Mesh& mesh, int zones) {
  const double lo = mesh.domain_lo[0];
  const double hi = mesh.domain_hi[0];
  if (!(hi > lo)) throw ConfigInvalid("degenerate region for zone layout");
  IVec z(mesh.n_nodes());
  for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i) {
    const double t = (mesh.nodes(i, 0) - lo) / (hi - lo);
    const int k = static_cast<int>(std::floor(t * zones));
    z[i] = std::clamp(k, 0, zones - 1);
  }
  return z;
}

Mat build_advection(const ConfigMap& cfg, const Mesh& mesh) {
  if (mesh.dimension == 2) {
    const double vx = cfg.get_double("pde.velocity.x", 0.0);
    const double vy = cfg.get_double("pde.velocity.y", 0.0);
    if (vx == 0.0 && vy == 0.0) return Mat();
    Mat v(mesh.n_nodes(), 2);
    v.col(0).setConstant(vx);
    v.col(1).setConstant(vy);
    return v;
  }
  if (cfg.has("pde.velocity.zones")) {
    const std::vector<double> vals = cfg.require_list("pde.velocity.zones");
    const IVec z = zone_index(mesh, static_cast<int>(vals.size()));
    Mat v(mesh.n_nodes(), 1);
    for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i) {
      v(i, 0) = vals[static_cast<std::size_t>(z[i])];
    }
    return v;
  }
  const double v0 = cfg.get_double("pde.velocity", 0.0);
  if (v0 == 0.0) return Mat();
  Mat v(mesh.n_nodes(), 1);
  v.setConstant(v0);
  return v;
}

FemSystem build_system(const RunContext& ctx, const Mesh& mesh) {
  PdeCoefficients coeffs;
  coeffs.diffusion = ctx.cfg.get_double("pde.diffusion", 1.0);
  coeffs.reaction = ctx.cfg.get_double("pde.reaction", 0.0);
  if (coeffs.diffusion < 0 || coeffs.reaction < 0) {
    throw ConfigInvalid("pde.diffusion and pde.reaction must be nonnegative");
  }
  coeffs.advection = build_advection(ctx.cfg, mesh);
  return assemble(mesh, coeffs);
}

MaternHyper read_matern(const ConfigMap& cfg) {
  MaternHyper h;
  h.range = cfg.require_double("source.range");
  h.variance = cfg.get_double("source.variance", 1.0);
  h.alpha = static_cast<int>(cfg.get_int("source.alpha", 2));
  if (!(h.range > 0) || !(h.variance > 0)) {
    throw ConfigInvalid("source.range and source.variance must be positive");
  }
  return h;
}

/* Space-time source field parameters. `tau` drives the temporal dynamics;
   when `source.variance` is also given, the field is rescaled so a fixed-time
   slice has exactly that pointwise variance. Without `tau`, the variance key
   determines it. */
struct StParams {
  double tau = 1.0;
  double kappa = 1.0;
  int alpha = 2;
  double dt = 0.0;
  int steps = 0;
  double scale = 1.0;
};

StParams read_st_params(const ConfigMap& cfg, int dim) {
  StParams p;
  p.dt = cfg.require_double("time.dt");
  p.steps = static_cast<int>(cfg.require_int("time.steps"));
  if (!(p.dt > 0) || p.steps < 1) {
    throw ConfigInvalid("time.dt must be positive and time.steps at least 1");
  }
  p.alpha = static_cast<int>(cfg.get_int("source.alpha", 2));
  if (cfg.has("source.kappa")) {
    p.kappa = cfg.require_double("source.kappa");
  } else {
    MaternHyper h;
    h.alpha = p.alpha;
    h.range = cfg.require_double("source.range");
    if (!(h.range > 0)) throw ConfigInvalid("source.range must be positive");
    p.kappa = h.kappa(dim);
  }
  if (!(p.kappa > 0)) throw ConfigInvalid("source.kappa must be positive");
  if (cfg.has("source.tau")) {
    p.tau = cfg.require_double("source.tau");
    if (!(p.tau > 0)) throw ConfigInvalid("source.tau must be positive");
    if (cfg.has("source.variance")) {
      const double target = cfg.require_double("source.variance");
      if (!(target > 0)) throw ConfigInvalid("source.variance must be positive");
      p.scale = std::sqrt(target / st_slice_variance(p.tau, p.kappa, p.alpha, dim));
    }
  } else {
    const double target = cfg.require_double("source.variance");
    if (!(target > 0)) throw ConfigInvalid("source.variance must be positive");
    p.tau = st_tau_for_variance(target, p.kappa, p.alpha, dim);
  }
  return p;
}

GmrfPrior build_st_prior(const Mesh& mesh, const StParams& p) {
  GmrfPrior prior = st_matern_source(mesh, p.tau, p.kappa, p.alpha, p.dt, p.steps);
  if (p.scale != 1.0) prior.Q *= 1.0 / (p.scale * p.scale);
  return prior;
}

Vec sample_st(const Mesh& mesh, const StParams& p, RandomStream& rng) {
  Vec field = sample_st_matern(mesh, p.tau, p.kappa, p.alpha, p.dt, p.steps, rng);
  if (p.scale != 1.0) field *= p.scale;
  return field;
}

std::optional<RegressionDesign> read_design(const ConfigMap& cfg,
                                            const Mesh& mesh) {
  if (!cfg.has("regression.zones")) return std::nullopt;
  const int zones = static_cast<int>(cfg.require_int("regression.zones"));
  if (zones < 1) throw ConfigInvalid("regression.zones must be at least 1");
  const double s2b = cfg.require_double("regression.sigma2_beta");
  if (!(s2b > 0)) throw ConfigInvalid("regression.sigma2_beta must be positive");
  RegressionDesign d;
  const IVec z = zone_index(mesh, zones);
  d.X = Mat::Zero(mesh.n_nodes(), zones);
  for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i) d.X(i, z[i]) = 1.0;
  SpMat id(zones, zones);
  id.setIdentity();
  d.Q_beta = id;
  d.variance_scale = std::sqrt(s2b);
  return d;
}

/* ------------------------------------------------------------------ */
/* observation plans                                                   */
/* ------------------------------------------------------------------ */

struct ObsPlan {
  bool simulated = false;
  Mat locations;  /* rows x space-dim */
  Vec times;      /* spacetime only, paired with rows */
  Vec values;     /* from-file only */
  double sigma2 = 1.0;
};

Vec column_by_name(const CsvTable& table, const std::string& path,
                   const std::string& name) {
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (table.header[j] == name) {
      return table.columns.col(static_cast<Eigen::Index>(j));
    }
  }
  throw ConfigInvalid("observation file '" + path + "' has no column '" +
                      name + "'");
}

/* Midpoint placements: N points evenly distributed over an extent. */
Vec midpoints(double lo, double hi, Eigen::Index n) {
  Vec x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = lo + (static_cast<double>(i) + 0.5) * (hi - lo) / static_cast<double>(n);
  }
  return x;
}

ObsPlan read_observations(const RunContext& ctx, const Mesh& mesh,
                          bool spacetime, double dt, int steps) {
  const ConfigMap& cfg = ctx.cfg;
  const bool from_file = cfg.has("obs.file");
  const bool from_sim = spacetime ? (cfg.has("obs.simulate.sensors") ||
                                     cfg.has("obs.simulate.times"))
                                  : cfg.has("obs.simulate.count");
  if (from_file == from_sim) {
    throw ConfigInvalid(spacetime
            ? "give exactly one observation source: obs.file, or "
              "obs.simulate.sensors with obs.simulate.times"
            : "give exactly one observation source: obs.file or "
              "obs.simulate.count");
  }

  ObsPlan plan;
  plan.sigma2 = cfg.require_double("obs.sigma2");
  if (!(plan.sigma2 > 0)) throw ConfigInvalid("obs.sigma2 must be positive");

  if (from_file) {
    const std::string path = cfg.require_string("obs.file");
    const CsvTable table = read_csv(path);
    const Eigen::Index m = table.columns.rows();
    if (spacetime) {
      plan.locations = column_by_name(table, path, "x");
      plan.times = column_by_name(table, path, "t");
      (void)dt;
      (void)steps;
    } else if (mesh.dimension == 2) {
      plan.locations.resize(m, 2);
      plan.locations.col(0) = column_by_name(table, path, "x");
      plan.locations.col(1) = column_by_name(table, path, "y");
    } else {
      plan.locations = column_by_name(table, path, "x");
    }
    plan.values = column_by_name(table, path, "value");
    return plan;
  }

  plan.simulated = true;
  if (spacetime) {
    const auto sensors = cfg.require_int("obs.simulate.sensors");
    const auto n_times = cfg.require_int("obs.simulate.times");
    if (sensors < 0 || n_times < 0) {
      throw ConfigInvalid("obs.simulate.sensors and obs.simulate.times must "
                          "be nonnegative");
    }
    const Vec xs = midpoints(mesh.domain_lo[0], mesh.domain_hi[0], sensors);
    const Vec ts = midpoints(0.0, dt * steps, n_times);
    plan.locations.resize(sensors * n_times, 1);
    plan.times.resize(sensors * n_times);
    for (Eigen::Index s = 0; s < sensors; ++s) {
      for (Eigen::Index t = 0; t < n_times; ++t) {
        plan.locations(s * n_times + t, 0) = xs[s];
        plan.times[s * n_times + t] = ts[t];
      }
    }
    return plan;
  }

  const auto count = cfg.require_int("obs.simulate.count");
  if (count < 0) throw ConfigInvalid("obs.simulate.count must be nonnegative");
  if (mesh.dimension == 2) {
    const auto g = static_cast<Eigen::Index>(
        std::ceil(std::sqrt(static_cast<double>(count))));
    plan.locations.resize(g * g, 2);
    const Vec xs = midpoints(mesh.domain_lo[0], mesh.domain_hi[0], g);
    const Vec ys = midpoints(mesh.domain_lo[1], mesh.domain_hi[1], g);
    for (Eigen::Index i = 0; i < g; ++i) {
      for (Eigen::Index j = 0; j < g; ++j) {
        plan.locations(i * g + j, 0) = xs[i];
        plan.locations(i * g + j, 1) = ys[j];
      }
    }
  } else {
    plan.locations = midpoints(mesh.domain_lo[0], mesh.domain_hi[0], count);
  }
  return plan;
}

/* ------------------------------------------------------------------ */
/* simulation (shared by the simulate and krige commands)              */
/* ------------------------------------------------------------------ */

struct SimOutput {
  Vec f, u;
  ObservationSet obs;
  Vec beta;  /* empty without fixed effects */
};

/* Draw order is fixed (field, fixed effects, then noise) so a seed pins the
   whole dataset. */
SimOutput run_steady_simulation(GmrfPrior& f_prior, const FemSystem& sys,
                                const std::optional<RegressionDesign>& design,
                                const Mat& locations, double sigma2,
                                RandomStream& rng) {
  SimOutput out;
  out.f = sample_gaussian(ensure_factor(f_prior), f_prior.mean, rng);
  if (design) {
    out.beta = design->variance_scale * rng.normal_vector(design->X.cols());
    out.f += design->X * out.beta;
  }
  out.u = steady_solve(sys, out.f);
  const SpMat A = observation_matrix(sys.mesh, locations);
  const Vec noise = std::sqrt(sigma2) * rng.normal_vector(A.rows());
  out.obs = ObservationSet{A, A * out.u + noise, sigma2};
  return out;
}

SimOutput run_st_simulation(const Mesh& mesh, const StParams& p,
                            const SpaceTimeOperator& op, const Mat& locations,
                            const Vec& times, double sigma2,
                            RandomStream& rng) {
  SimOutput out;
  out.f = sample_st(mesh, p, rng);
  out.u = spacetime_solve(op, out.f);
  const SpMat A =
      observation_matrix_spacetime(mesh, p.dt, p.steps, locations, times);
  const Vec noise = std::sqrt(sigma2) * rng.normal_vector(A.rows());
  out.obs = ObservationSet{A, A * out.u + noise, sigma2};
  return out;
}

/* ------------------------------------------------------------------ */
/* CSV and SVG emitters                                                */
/* ------------------------------------------------------------------ */

using NamedVecs = std::vector<std::pair<std::string, Vec>>;

void write_node_table(const std::string& path, const Mesh& mesh,
                      const NamedVecs& fields) {
  std::vector<std::string> header;
  header.emplace_back("x");
  if (mesh.dimension == 2) header.emplace_back("y");
  Mat columns(mesh.n_nodes(), mesh.dimension + static_cast<int>(fields.size()));
  columns.col(0) = mesh.nodes.col(0);
  if (mesh.dimension == 2) columns.col(1) = mesh.nodes.col(1);
  Eigen::Index c = mesh.dimension;
  for (const auto& [name, values] : fields) {
    if (values.size() != mesh.n_nodes()) {
      throw ShapeMismatch("field '" + name + "' length " +
                          std::to_string(values.size()) + " != node count " +
                          std::to_string(mesh.n_nodes()));
    }
    header.push_back(name);
    columns.col(c++) = values;
  }
  write_csv(path, header, columns);
}

/* Stacked space-time fields: one row per (slice, node), slice s at time
   (s+1)*dt. */
void write_st_table(const std::string& path, const Mesh& mesh, double dt,
                    int steps, const NamedVecs& fields) {
  const Eigen::Index n = mesh.n_nodes();
  const Eigen::Index rows = n * steps;
  std::vector<std::string> header = {"s", "t"};
  Mat columns(rows, 2 + static_cast<Eigen::Index>(fields.size()));
  for (int t = 0; t < steps; ++t) {
    columns.block(t * n, 0, n, 1) = mesh.nodes.col(0);
    columns.block(t * n, 1, n, 1).setConstant((t + 1) * dt);
  }
  Eigen::Index c = 2;
  for (const auto& [name, values] : fields) {
    if (values.size() != rows) {
      throw ShapeMismatch("stacked field '" + name + "' length " +
                          std::to_string(values.size()) + " != " +
                          std::to_string(rows));
    }
    header.push_back(name);
    columns.col(c++) = values;
  }
  write_csv(path, header, columns);
}

void write_observation_table(const std::string& path, const Mesh& mesh,
                             bool spacetime, const ObsPlan& plan,
                             const Vec& values) {
  std::vector<std::string> header;
  Mat columns;
  const Eigen::Index m = plan.locations.rows();
  if (spacetime) {
    header = {"x", "t", "value"};
    columns.resize(m, 3);
    columns.col(0) = plan.locations.col(0);
    columns.col(1) = plan.times;
    columns.col(2) = values;
  } else if (mesh.dimension == 2) {
    header = {"x", "y", "value"};
    columns.resize(m, 3);
    columns.leftCols(2) = plan.locations;
    columns.col(2) = values;
  } else {
    header = {"x", "value"};
    columns.resize(m, 2);
    columns.col(0) = plan.locations.col(0);
    columns.col(1) = values;
  }
  write_csv(path, header, columns);
}

/* Space-time stacked vector -> (interior-space x time) matrix for heatmaps. */
Mat st_field_matrix(const Mesh& mesh, int steps, const Vec& stacked,
                    std::vector<Eigen::Index>* kept_nodes = nullptr) {
  const Eigen::Index n = mesh.n_nodes();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mesh.interior[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  if (keep.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) keep.push_back(i);
  }
  Mat grid(static_cast<Eigen::Index>(keep.size()), steps);
  for (int t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < keep.size(); ++j) {
      grid(static_cast<Eigen::Index>(j), t) = stacked[t * n + keep[j]];
    }
  }
  if (kept_nodes != nullptr) *kept_nodes = keep;
  return grid;
}

void write_st_heatmap(const std::string& path, const std::string& title,
                      const Mesh& mesh, double dt, int steps,
                      const Vec& stacked) {
  const Mat grid = st_field_matrix(mesh, steps, stacked);
  write_text_file(
      path, render_heatmap(title, grid, 0.0, dt * steps, mesh.domain_lo[0],
                           mesh.domain_hi[0], "t", "s"));
}

std::string fmt_fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

/* 1-D posterior overlay: mean, +/-2 sd band edges, optional truth/points. */
void write_band_chart(const std::string& path, const std::string& title,
                      const Mesh& mesh, const Vec& mean, const Vec& sd,
                      const Vec* truth, const Mat* pts_x, const Vec* pts_y) {
  PlotAxes axes;
  axes.title = title;
  axes.x_label = "x";
  std::vector<PlotSeries> series;
  const Vec x = mesh.nodes.col(0);
  series.push_back({"mean", x, mean, "#1f6fb2", false, 1.8});
  series.push_back({"mean + 2 sd", x, Vec(mean + 2.0 * sd), "#9ecae1", false, 1.0});
  series.push_back({"mean - 2 sd", x, Vec(mean - 2.0 * sd), "#9ecae1", false, 1.0});
  if (truth != nullptr) {
    series.push_back({"truth", x, *truth, "#c23b22", false, 1.4});
  }
  if (pts_x != nullptr && pts_y != nullptr && pts_x->rows() > 0) {
    series.push_back({"data", pts_x->col(0), *pts_y, "#444444", true, 1.0});
  }
  write_text_file(path, render_line_chart(axes, series));
}

void write_2d_heatmaps(const RunContext& ctx, const std::string& stem,
                       const Mesh& mesh, const ConfigMap& cfg, const Vec& field,
                       const std::string& title) {
  /* nodes of build_rect_mesh form an nx x ny lattice in row-major x order */
  const auto nx = static_cast<Eigen::Index>(cfg.require_int("mesh.nodes.x"));
  const auto ny = static_cast<Eigen::Index>(cfg.require_int("mesh.nodes.y"));
  if (nx * ny != mesh.n_nodes()) {
    throw ShapeMismatch("mesh.nodes.x * mesh.nodes.y != node count");
  }
  Mat grid(ny, nx);
  for (Eigen::Index iy = 0; iy < ny; ++iy) {
    for (Eigen::Index ix = 0; ix < nx; ++ix) {
      grid(iy, ix) = field[iy * nx + ix];
    }
  }
  const double x0 = mesh.nodes.col(0).minCoeff();
  const double x1 = mesh.nodes.col(0).maxCoeff();
  const double y0 = mesh.nodes.col(1).minCoeff();
  const double y1 = mesh.nodes.col(1).maxCoeff();
  write_text_file(ctx.path(stem + ".svg"),
                  render_heatmap(title, grid, x0, x1, y0, y1, "x", "y"));
}

/* ------------------------------------------------------------------ */
/* commands                                                            */
/* ------------------------------------------------------------------ */

void cmd_simulate(RunContext& ctx) {
  const Mesh mesh = build_mesh(ctx);
  const bool spacetime = ctx.kind == "spacetime-1d";
  const FemSystem sys = build_system(ctx, mesh);

  if (!spacetime) {
    GmrfPrior f_prior = matern_precision(sys, read_matern(ctx.cfg));
    const auto design = read_design(ctx.cfg, mesh);
    const ObsPlan plan = read_observations(ctx, mesh, false, 0.0, 0);
    if (!plan.simulated) {
      throw ConfigInvalid("simulate draws synthetic data; configure "
                          "obs.simulate.count instead of obs.file");
    }
    ctx.cfg.reject_unused();

    RandomStream rng(sub_seed(ctx.seed, 1));
    const SimOutput sim = run_steady_simulation(f_prior, sys, design,
                                                plan.locations, plan.sigma2,
                                                rng);
    write_mesh_csv(mesh, ctx.path("nodes.csv"), ctx.path("cells.csv"));
    NamedVecs truth = {{"f", sim.f}, {"u", sim.u}};
    if (design) {
      const IVec z = zone_index(mesh, static_cast<int>(design->X.cols()));
      truth.emplace_back("zone", z.cast<double>());
      Mat beta_cols(sim.beta.size(), 2);
      for (Eigen::Index k = 0; k < sim.beta.size(); ++k) {
        beta_cols(k, 0) = static_cast<double>(k);
        beta_cols(k, 1) = sim.beta[k];
      }
      write_csv(ctx.path("beta_true.csv"), {"zone", "beta"}, beta_cols);
    }
    write_node_table(ctx.path("truth.csv"), mesh, truth);
    write_observation_table(ctx.path("observations.csv"), mesh, false, plan,
                            sim.obs.y);
    if (mesh.dimension == 1) {
      PlotAxes axes;
      axes.title = "simulated source and solution";
      axes.x_label = "x";
      std::vector<PlotSeries> series = {
          {"f (source)", mesh.nodes.col(0), sim.f, "#c23b22", false, 1.6},
          {"u (solution)", mesh.nodes.col(0), sim.u, "#1f6fb2", false, 1.6},
          {"data", plan.locations.col(0), sim.obs.y, "#444444", true, 1.0}};
      write_text_file(ctx.path("truth.svg"), render_line_chart(axes, series));
    } else {
      write_2d_heatmaps(ctx, "truth_f", mesh, ctx.cfg, sim.f, "simulated source f");
      write_2d_heatmaps(ctx, "truth_u", mesh, ctx.cfg, sim.u, "simulated solution u");
    }
    log_message(LogLevel::kInfo,
                "simulate: " + std::to_string(sim.obs.y.size()) +
                    " observations over " + std::to_string(mesh.n_nodes()) +
                    " nodes");
    return;
  }

  const StParams p = read_st_params(ctx.cfg, mesh.dimension);
  const ObsPlan plan = read_observations(ctx, mesh, true, p.dt, p.steps);
  if (!plan.simulated) {
    throw ConfigInvalid("simulate draws synthetic data; configure "
                        "obs.simulate.sensors/times instead of obs.file");
  }
  ctx.cfg.reject_unused();

  const SpaceTimeOperator op = build_spacetime_operator(sys, p.dt, p.steps);
  RandomStream rng(sub_seed(ctx.seed, 1));
  const SimOutput sim = run_st_simulation(mesh, p, op, plan.locations,
                                          plan.times, plan.sigma2, rng);
  write_mesh_csv(mesh, ctx.path("nodes.csv"), ctx.path("cells.csv"));
  write_st_table(ctx.path("truth.csv"), mesh, p.dt, p.steps,
                 {{"f", sim.f}, {"u", sim.u}});
  write_observation_table(ctx.path("observations.csv"), mesh, true, plan,
                          sim.obs.y);
  write_st_heatmap(ctx.path("truth_f.svg"), "simulated source f", mesh, p.dt,
                   p.steps, sim.f);
  write_st_heatmap(ctx.path("truth_u.svg"), "simulated solution u", mesh, p.dt,
                   p.steps, sim.u);
  log_message(LogLevel::kInfo,
              "simulate: " + std::to_string(sim.obs.y.size()) +
                  " observations over " + std::to_string(mesh.n_nodes()) +
                  " nodes x " + std::to_string(p.steps) + " steps");
}

void cmd_krige(RunContext& ctx) {
  const Mesh mesh = build_mesh(ctx);
  const bool spacetime = ctx.kind == "spacetime-1d";
  const FemSystem sys = build_system(ctx, mesh);

  if (!spacetime) {
    GmrfPrior f_prior = matern_precision(sys, read_matern(ctx.cfg));
    const auto design = read_design(ctx.cfg, mesh);
    const ObsPlan plan = read_observations(ctx, mesh, false, 0.0, 0);
    ctx.cfg.reject_unused();

    ObservationSet obs;
    std::optional<SimOutput> sim;
    if (plan.simulated) {
      RandomStream rng(sub_seed(ctx.seed, 1));
      sim = run_steady_simulation(f_prior, sys, design, plan.locations,
                                  plan.sigma2, rng);
      obs = sim->obs;
      NamedVecs truth = {{"f", sim->f}, {"u", sim->u}};
      write_node_table(ctx.path("truth.csv"), mesh, truth);
      if (design) {
        Mat beta_cols(sim->beta.size(), 2);
        for (Eigen::Index k = 0; k < sim->beta.size(); ++k) {
          beta_cols(k, 0) = static_cast<double>(k);
          beta_cols(k, 1) = sim->beta[k];
        }
        write_csv(ctx.path("beta_true.csv"), {"zone", "beta"}, beta_cols);
      }
    } else {
      obs.A = observation_matrix(mesh, plan.locations);
      obs.y = plan.values;
      obs.sigma2_eps = plan.sigma2;
    }
    write_observation_table(ctx.path("observations.csv"), mesh, false, plan,
                            obs.y);

    Vec u_mean, u_sd, f_mean, f_sd;
    if (design) {
      const GmrfPrior joint_prior =
          regression_joint_precision(sys, f_prior, *design);
      const JointRegressionPosterior jr =
          krige_joint_regression(sys, joint_prior, obs);
      const Vec joint_var = marginal_variances(jr.joint.factor);
      const Eigen::Index n_u = jr.n_u;
      const Eigen::Index k = joint_var.size() - n_u;
      u_mean = jr.joint.mean.head(n_u);
      u_sd = joint_var.head(n_u).cwiseMax(0.0).cwiseSqrt();
      f_mean = jr.source.mean;
      f_sd = pushforward_variances(jr.source).cwiseMax(0.0).cwiseSqrt();
      Mat beta_cols(k, 3);
      beta_cols.col(0) = Vec::LinSpaced(k, 0, static_cast<double>(k - 1));
      beta_cols.col(1) = jr.beta_mean;
      beta_cols.col(2) = joint_var.tail(k).cwiseMax(0.0).cwiseSqrt();
      write_csv(ctx.path("beta.csv"), {"zone", "mean", "sd"}, beta_cols);
    } else {
      const GmrfPrior prior_u = steady_solution_prior(sys, f_prior);
      const PosteriorGaussian post = krige_solution(prior_u, obs);
      const PushforwardPosterior src = krige_source(sys, post);
      u_mean = post.mean;
      u_sd = marginal_variances(post.factor).cwiseMax(0.0).cwiseSqrt();
      f_mean = src.mean;
      f_sd = pushforward_variances(src).cwiseMax(0.0).cwiseSqrt();
    }

    write_node_table(ctx.path("posterior_u.csv"), mesh,
                     {{"mean", u_mean}, {"sd", u_sd}});
    write_node_table(ctx.path("posterior_f.csv"), mesh,
                     {{"mean", f_mean}, {"sd", f_sd}});
    if (mesh.dimension == 1) {
      const Vec* truth_u = sim ? &sim->u : nullptr;
      const Vec* truth_f = sim ? &sim->f : nullptr;
      write_band_chart(ctx.path("posterior_u.svg"), "solution posterior", mesh,
                       u_mean, u_sd, truth_u, &plan.locations, &obs.y);
      write_band_chart(ctx.path("posterior_f.svg"), "source posterior", mesh,
                       f_mean, f_sd, truth_f, nullptr, nullptr);
    } else {
      write_2d_heatmaps(ctx, "posterior_u_mean", mesh, ctx.cfg, u_mean,
                        "posterior mean of u");
      write_2d_heatmaps(ctx, "posterior_u_sd", mesh, ctx.cfg, u_sd,
                        "posterior sd of u");
      write_2d_heatmaps(ctx, "posterior_f_mean", mesh, ctx.cfg, f_mean,
                        "posterior mean of f");
      write_2d_heatmaps(ctx, "posterior_f_sd", mesh, ctx.cfg, f_sd,
                        "posterior sd of f");
    }
    log_message(LogLevel::kInfo,
                "krige: conditioned on " + std::to_string(obs.y.size()) +
                    " observations");
    return;
  }

  /* space-time kriging */
  if (ctx.cfg.has("regression.zones")) {
    throw ConfigInvalid("regression fixed effects are only supported for "
                        "steady cases");
  }
  const StParams p = read_st_params(ctx.cfg, mesh.dimension);
  const ObsPlan plan = read_observations(ctx, mesh, true, p.dt, p.steps);
  const auto sd_samples = ctx.cfg.get_int("krige.sd_samples", 200);
  if (sd_samples < 2) throw ConfigInvalid("krige.sd_samples must be >= 2");
  ctx.cfg.reject_unused();

  const SpaceTimeOperator op = build_spacetime_operator(sys, p.dt, p.steps);
  GmrfPrior f_prior = build_st_prior(mesh, p);

  ObservationSet obs;
  std::optional<SimOutput> sim;
  if (plan.simulated) {
    RandomStream rng(sub_seed(ctx.seed, 1));
    sim = run_st_simulation(mesh, p, op, plan.locations, plan.times,
                            plan.sigma2, rng);
    obs = sim->obs;
    write_st_table(ctx.path("truth.csv"), mesh, p.dt, p.steps,
                   {{"f", sim->f}, {"u", sim->u}});
    write_st_heatmap(ctx.path("truth_f.svg"), "simulated source f", mesh, p.dt,
                     p.steps, sim->f);
  } else {
    obs.A = observation_matrix_spacetime(mesh, p.dt, p.steps, plan.locations,
                                         plan.times);
    obs.y = plan.values;
    obs.sigma2_eps = plan.sigma2;
  }
  write_observation_table(ctx.path("observations.csv"), mesh, true, plan,
                          obs.y);

  const GmrfPrior prior_u = spacetime_solution_prior(op, f_prior);
  const PosteriorGaussian post = krige_solution(prior_u, obs);
  const PushforwardPosterior src = krige_source_spacetime(op, post);

  /* Pointwise posterior sd by Monte Carlo over exact posterior draws; the
     stacked dimension makes the column-sweep variance too expensive here. */
  const Eigen::Index n = post.mean.size();
  Vec u_ss = Vec::Zero(n), f_ss = Vec::Zero(n);
  RandomStream sd_rng(sub_seed(ctx.seed, 2));
  const Vec zero = Vec::Zero(n);
  for (std::int64_t s = 0; s < sd_samples; ++s) {
    const Vec dev = sample_gaussian(post.factor, zero, sd_rng);
    u_ss += dev.cwiseAbs2();
    f_ss += Vec(src.push * dev).cwiseAbs2();
  }
  const double inv = 1.0 / static_cast<double>(sd_samples);
  const Vec u_sd = (u_ss * inv).cwiseSqrt();
  const Vec f_sd = (f_ss * inv).cwiseSqrt();

  write_st_table(ctx.path("posterior_fields.csv"), mesh, p.dt, p.steps,
                 {{"u_mean", post.mean},
                  {"u_sd", u_sd},
                  {"f_mean", src.mean},
                  {"f_sd", f_sd}});
  write_st_heatmap(ctx.path("posterior_u_mean.svg"), "posterior mean of u",
                   mesh, p.dt, p.steps, post.mean);
  write_st_heatmap(ctx.path("posterior_u_sd.svg"), "posterior sd of u", mesh,
                   p.dt, p.steps, u_sd);
  write_st_heatmap(ctx.path("posterior_f_mean.svg"), "posterior mean of f",
                   mesh, p.dt, p.steps, src.mean);
  write_st_heatmap(ctx.path("posterior_f_sd.svg"), "posterior sd of f", mesh,
                   p.dt, p.steps, f_sd);
  log_message(LogLevel::kInfo,
              "krige: conditioned " + std::to_string(n) +
                  " space-time unknowns on " + std::to_string(obs.y.size()) +
                  " observations");
}

GammaPrior read_gamma_prior(const ConfigMap& cfg, const std::string& stem,
                            GammaPrior fallback) {
  GammaPrior p;
  p.shape = cfg.get_double(stem + ".shape", fallback.shape);
  p.rate = cfg.get_double(stem + ".rate", fallback.rate);
  if (!(p.shape > 0) || !(p.rate > 0)) {
    throw ConfigInvalid(stem + ".shape and " + stem + ".rate must be positive");
  }
  return p;
}

void write_param_histogram(const RunContext& ctx, const std::string& name,
                           const Vec& samples, bool inverse_gamma, double a,
                           double b) {
  if (samples.size() == 0) return;
  const double lo = samples.minCoeff();
  const double hi = samples.maxCoeff();
  CurveOverlay prior;
  prior.label = "prior";
  const int grid = 160;
  prior.x.resize(grid);
  prior.density.resize(grid);
  const double span = hi > lo ? hi - lo : std::max(1.0, std::abs(lo));
  for (int i = 0; i < grid; ++i) {
    const double x = lo + (i + 0.5) * span / grid;
    prior.x[i] = x;
    if (x <= 0) {
      prior.density[i] = 0.0;
      continue;
    }
    const double logpdf = inverse_gamma ? InverseGammaPrior{a, b}.log_density(x)
                                        : GammaPrior{a, b}.log_density(x);
    prior.density[i] = std::exp(logpdf);
  }
  write_text_file(ctx.path("hist_" + name + ".svg"),
                  render_histogram("posterior of " + name, samples, 40, {prior},
                                   name));
}

void cmd_mcmc(RunContext& ctx) {
  if (ctx.kind == "spacetime-1d") {
    throw ConfigInvalid("mcmc supports steady cases only");
  }
  const Mesh mesh = build_mesh(ctx);
  const FemSystem sys = build_system(ctx, mesh);
  const MaternHyper hyper = read_matern(ctx.cfg);
  if (hyper.alpha != 2) {
    throw ConfigInvalid("mcmc fixes the source smoothness at source.alpha = 2");
  }
  GmrfPrior f_prior = matern_precision(sys, hyper);
  const auto design = read_design(ctx.cfg, mesh);
  const ObsPlan plan = read_observations(ctx, mesh, false, 0.0, 0);

  McmcConfig mc;
  mc.range_prior = read_gamma_prior(ctx.cfg, "mcmc.prior.range", {2.0, 1.0});
  mc.diffusion_prior =
      read_gamma_prior(ctx.cfg, "mcmc.prior.diffusion", {2.0, 1.0});
  mc.decay_prior = read_gamma_prior(ctx.cfg, "mcmc.prior.decay", {2.0, 1.0});
  mc.ratio_prior = read_gamma_prior(ctx.cfg, "mcmc.prior.ratio", {2.0, 1.0});
  mc.sigma2_prior.shape = ctx.cfg.get_double("mcmc.prior.sigma2_f.shape", 3.0);
  mc.sigma2_prior.scale = ctx.cfg.get_double("mcmc.prior.sigma2_f.scale", 20.0);
  if (!(mc.sigma2_prior.shape > 0) || !(mc.sigma2_prior.scale > 0)) {
    throw ConfigInvalid("mcmc.prior.sigma2_f.shape/scale must be positive");
  }
  if (design) {
    mc.beta_ratio_prior =
        read_gamma_prior(ctx.cfg, "mcmc.prior.beta_ratio", {2.0, 1.0});
  }

  mc.chains = static_cast<int>(ctx.cfg.get_int("mcmc.chains", 4));
  mc.iterations = static_cast<int>(ctx.cfg.get_int("mcmc.iterations", 2000));
  mc.burn_in =
      static_cast<int>(ctx.cfg.get_int("mcmc.burn_in", mc.iterations / 2));
  mc.thinning = static_cast<int>(ctx.cfg.get_int("mcmc.thinning", 1));
  mc.step_range = ctx.cfg.get_double("mcmc.step.range", 0.3);
  mc.step_diffusion = ctx.cfg.get_double("mcmc.step.diffusion", 0.3);
  mc.step_decay = ctx.cfg.get_double("mcmc.step.decay", 0.3);
  mc.step_ratio = ctx.cfg.get_double("mcmc.step.ratio", 0.3);
  mc.step_beta = ctx.cfg.get_double("mcmc.step.beta", 0.3);
  mc.sample_sigma2 = ctx.cfg.get_bool("mcmc.sample_sigma2", true);
  mc.adapt = ctx.cfg.get_bool("mcmc.adapt", true);
  mc.second_stage = ctx.cfg.get_bool("mcmc.second_stage", true);
  mc.workers = ctx.workers;
  mc.seed = sub_seed(ctx.seed, 3);
  if (mc.chains < 1 || mc.iterations < 1 || mc.burn_in < 0 ||
      mc.burn_in >= mc.iterations || mc.thinning < 1) {
    throw ConfigInvalid("mcmc.chains/iterations/burn_in/thinning must satisfy "
                        "chains >= 1, 0 <= burn_in < iterations, thinning >= 1");
  }

  mc.init.range = ctx.cfg.get_double("mcmc.init.range", hyper.range);
  mc.init.sigma2_f = ctx.cfg.get_double("mcmc.init.sigma2_f", hyper.variance);
  mc.init.diffusion = ctx.cfg.get_double("mcmc.init.diffusion", sys.diffusion);
  mc.init.decay = ctx.cfg.get_double("mcmc.init.decay", sys.reaction);
  mc.init.noise_ratio =
      ctx.cfg.get_double("mcmc.init.ratio", plan.sigma2 / mc.init.sigma2_f);
  if (design) {
    const double s2b = design->variance_scale * design->variance_scale;
    mc.init.beta_ratio =
        ctx.cfg.get_double("mcmc.init.beta_ratio", s2b / mc.init.sigma2_f);
  }
  if (!(mc.init.range > 0) || !(mc.init.sigma2_f > 0) ||
      !(mc.init.diffusion > 0) || !(mc.init.decay > 0) ||
      !(mc.init.noise_ratio > 0) ||
      (mc.init.beta_ratio && !(*mc.init.beta_ratio > 0))) {
    throw ConfigInvalid("mcmc initial values must be positive; set mcmc.init.* "
                        "when a pde/source coefficient is zero");
  }
  ctx.cfg.reject_unused();

  McmcModel model;
  model.sys = sys;
  model.design = design;
  std::optional<SimOutput> sim;
  if (plan.simulated) {
    RandomStream rng(sub_seed(ctx.seed, 1));
    sim = run_steady_simulation(f_prior, sys, design, plan.locations,
                                plan.sigma2, rng);
    model.obs = sim->obs;
    write_node_table(ctx.path("truth.csv"), mesh,
                     {{"f", sim->f}, {"u", sim->u}});
  } else {
    model.obs.A = observation_matrix(mesh, plan.locations);
    model.obs.y = plan.values;
    model.obs.sigma2_eps = plan.sigma2;
  }
  write_observation_table(ctx.path("observations.csv"), mesh, false, plan,
                          model.obs.y);

  const McmcResult result = run_mcmc(model, mc);

  /* chains.csv: chain, sample, parameters..., log_marginal */
  const auto n_params = static_cast<Eigen::Index>(result.param_names.size());
  Eigen::Index total = 0;
  for (const auto& chain : result.chains) total += chain.samples.rows();
  std::vector<std::string> header = {"chain", "sample"};
  header.insert(header.end(), result.param_names.begin(),
                result.param_names.end());
  header.emplace_back("log_marginal");
  Mat chain_cols(total, 2 + n_params + 1);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    const McmcChain& chain = result.chains[c];
    const Eigen::Index r = chain.samples.rows();
    chain_cols.block(row, 0, r, 1).setConstant(static_cast<double>(c));
    chain_cols.block(row, 1, r, 1) =
        Vec::LinSpaced(r, 0, static_cast<double>(r - 1));
    chain_cols.block(row, 2, r, n_params) = chain.samples;
    chain_cols.block(row, 2 + n_params, r, 1) = chain.log_marginal;
    row += r;
  }
  write_csv(ctx.path("chains.csv"), header, chain_cols);

  /* acceptance.csv: post-burn-in acceptance rate per walk parameter */
  std::vector<std::string> acc_header = {"chain"};
  acc_header.insert(acc_header.end(), result.walk_names.begin(),
                    result.walk_names.end());
  Mat acc(static_cast<Eigen::Index>(result.chains.size()),
          1 + static_cast<Eigen::Index>(result.walk_names.size()));
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    acc(static_cast<Eigen::Index>(c), 0) = static_cast<double>(c);
    acc.block(static_cast<Eigen::Index>(c), 1, 1,
              acc.cols() - 1) = result.chains[c].acceptance_rate.transpose();
  }
  write_csv(ctx.path("acceptance.csv"), acc_header, acc);

  /* pooled summary with quantiles */
  std::ostringstream summary;
  summary << "param,mean,sd,q05,q50,q95\n";
  for (Eigen::Index j = 0; j < n_params; ++j) {
    Vec pooled(total);
    Eigen::Index at = 0;
    for (const auto& chain : result.chains) {
      pooled.segment(at, chain.samples.rows()) = chain.samples.col(j);
      at += chain.samples.rows();
    }
    std::sort(pooled.data(), pooled.data() + pooled.size());
    auto quantile = [&](double q) {
      const double pos = q * static_cast<double>(pooled.size() - 1);
      const auto lo = static_cast<Eigen::Index>(std::floor(pos));
      const auto hi = std::min(lo + 1, pooled.size() - 1);
      const double w = pos - static_cast<double>(lo);
      return (1.0 - w) * pooled[lo] + w * pooled[hi];
    };
    const double mean = pooled.mean();
    const double sd =
        pooled.size() > 1
            ? std::sqrt((pooled.array() - mean).square().sum() /
                        static_cast<double>(pooled.size() - 1))
            : 0.0;
    summary << result.param_names[static_cast<std::size_t>(j)] << ","
            << format_double(mean) << "," << format_double(sd) << ","
            << format_double(quantile(0.05)) << ","
            << format_double(quantile(0.50)) << ","
            << format_double(quantile(0.95)) << "\n";

    /* histogram with the prior overlaid */
    const std::string& name = result.param_names[static_cast<std::size_t>(j)];
    bool inverse_gamma = false;
    double a = 2.0, b = 1.0;
    if (name == "range") {
      a = mc.range_prior.shape, b = mc.range_prior.rate;
    } else if (name == "diffusion") {
      a = mc.diffusion_prior.shape, b = mc.diffusion_prior.rate;
    } else if (name == "decay") {
      a = mc.decay_prior.shape, b = mc.decay_prior.rate;
    } else if (name == "noise_ratio") {
      a = mc.ratio_prior.shape, b = mc.ratio_prior.rate;
    } else if (name == "sigma2_f") {
      inverse_gamma = true;
      a = mc.sigma2_prior.shape, b = mc.sigma2_prior.scale;
    } else if (name == "beta_ratio" && mc.beta_ratio_prior) {
      a = mc.beta_ratio_prior->shape, b = mc.beta_ratio_prior->rate;
    }
    Vec pooled_again(total);
    at = 0;
    for (const auto& chain : result.chains) {
      pooled_again.segment(at, chain.samples.rows()) = chain.samples.col(j);
      at += chain.samples.rows();
    }
    write_param_histogram(ctx, name, pooled_again, inverse_gamma, a, b);
  }
  write_text_file(ctx.path("summary.csv"), summary.str());

  if (mc.second_stage) {
    write_node_table(ctx.path("posterior_u.csv"), mesh,
                     {{"mean", result.u_mean}, {"sd", result.u_sd}});
    write_node_table(ctx.path("posterior_f.csv"), mesh,
                     {{"mean", result.f_mean}, {"sd", result.f_sd}});
    if (design && result.beta_mean.size() > 0) {
      Mat beta_cols(result.beta_mean.size(), 3);
      beta_cols.col(0) = Vec::LinSpaced(result.beta_mean.size(), 0,
                                        static_cast<double>(
                                            result.beta_mean.size() - 1));
      beta_cols.col(1) = result.beta_mean;
      beta_cols.col(2) = result.beta_sd;
      write_csv(ctx.path("beta.csv"), {"zone", "mean", "sd"}, beta_cols);
    }
  }
  log_message(LogLevel::kInfo,
              "mcmc: " + std::to_string(result.chains.size()) + " chains x " +
                  std::to_string(total / static_cast<Eigen::Index>(
                                             result.chains.size())) +
                  " retained samples");
}

void cmd_accuracy(RunContext& ctx) {
  if (ctx.kind != "steady-1d") {
    throw ConfigInvalid("accuracy sweeps support case = steady-1d only");
  }
  const Mesh mesh = build_mesh(ctx);
  const FemSystem sys = build_system(ctx, mesh);
  const MaternHyper hyper = read_matern(ctx.cfg);
  const double sigma2 = ctx.cfg.require_double("obs.sigma2");
  if (!(sigma2 > 0)) throw ConfigInvalid("obs.sigma2 must be positive");

  std::vector<double> sizes;
  if (ctx.cfg.has("accuracy.sizes")) {
    sizes = ctx.cfg.require_list("accuracy.sizes");
  } else {
    const double lo = ctx.cfg.get_double("accuracy.sizes.min", 1.0);
    const double hi = ctx.cfg.get_double("accuracy.sizes.max", 200000.0);
    const auto count = ctx.cfg.get_int("accuracy.sizes.count", 30);
    if (!(lo >= 1.0) || !(hi >= lo) || count < 1) {
      throw ConfigInvalid("accuracy.sizes.min/max/count must satisfy "
                          "1 <= min <= max, count >= 1");
    }
    for (std::int64_t i = 0; i < count; ++i) {
      const double t = count == 1 ? 0.0
                                  : static_cast<double>(i) /
                                        static_cast<double>(count - 1);
      const double n = std::round(lo * std::pow(hi / lo, t));
      if (sizes.empty() || n > sizes.back()) sizes.push_back(n);
    }
  }
  const int replicates =
      static_cast<int>(ctx.cfg.get_int("accuracy.replicates", 30));
  const bool no_buffer = ctx.cfg.get_bool("accuracy.no_buffer", false);
  const double fit_min = ctx.cfg.get_double("accuracy.fit.min", 100.0);
  const double fit_max = ctx.cfg.get_double("accuracy.fit.max", 10000.0);
  ctx.cfg.reject_unused();

  SweepCase spec;
  spec.sys = sys;
  spec.source_hyper = hyper;
  spec.sigma2_eps = sigma2;
  spec.no_buffer = no_buffer;
  spec.workers = ctx.workers;
  spec.seed = sub_seed(ctx.seed, 4);
  const SweepResult res = convergence_sweep(spec, sizes, replicates);

  auto write_curve = [&](const std::string& file, const ErrorCurve& curve) {
    Mat cols(curve.sample_sizes.size(), 4);
    cols.col(0) = curve.sample_sizes;
    cols.col(1) = curve.empirical;
    cols.col(2) = curve.approx;
    cols.col(3) = curve.slope;
    write_csv(ctx.path(file), {"N", "empirical", "approx", "slope"}, cols);
  };
  write_curve("error_solution.csv", res.solution);
  write_curve("error_source.csv", res.source);

  double slope_u = std::numeric_limits<double>::quiet_NaN();
  double slope_f = std::numeric_limits<double>::quiet_NaN();
  std::string fit_note;
  try {
    slope_u = fit_loglog_slope(res.solution.sample_sizes,
                               res.solution.empirical, fit_min, fit_max);
    slope_f = fit_loglog_slope(res.source.sample_sizes, res.source.empirical,
                               fit_min, fit_max);
  } catch (const ConfigInvalid& e) {
    fit_note = e.what();
    log_message(LogLevel::kInfo,
                std::string("accuracy: slope fit skipped (") + e.what() + ")");
  }
  std::ostringstream slopes;
  slopes << "target,fitted_slope,fit_min,fit_max\n"
         << "solution," << format_double(slope_u) << ","
         << format_double(fit_min) << "," << format_double(fit_max) << "\n"
         << "source," << format_double(slope_f) << "," << format_double(fit_min)
         << "," << format_double(fit_max) << "\n";
  write_text_file(ctx.path("slopes.csv"), slopes.str());

  PlotAxes axes;
  axes.title = "L2 error vs sample size (fits: u " + fmt_fixed(slope_u, 3) +
               ", f " + fmt_fixed(slope_f, 3) + ")";
  axes.x_label = "observations N";
  axes.y_label = "L2 error";
  axes.log_x = true;
  axes.log_y = true;
  std::vector<PlotSeries> series = {
      {"u empirical", res.solution.sample_sizes, res.solution.empirical,
       "#1f6fb2", true, 1.0},
      {"u approx", res.solution.sample_sizes, res.solution.approx, "#1f6fb2",
       false, 1.6},
      {"f empirical", res.source.sample_sizes, res.source.empirical, "#c23b22",
       true, 1.0},
      {"f approx", res.source.sample_sizes, res.source.approx, "#c23b22",
       false, 1.6}};
  write_text_file(ctx.path("accuracy.svg"), render_line_chart(axes, series));
  log_message(LogLevel::kInfo,
              "accuracy: fitted slopes u " + fmt_fixed(slope_u, 4) + ", f " +
                  fmt_fixed(slope_f, 4));
}

void cmd_st_demo(RunContext& ctx) {
  if (ctx.kind != "spacetime-1d") {
    throw ConfigInvalid("st-demo requires case = spacetime-1d");
  }
  const Mesh mesh = build_mesh(ctx);
  const StParams p = read_st_params(ctx.cfg, mesh.dimension);
  ctx.cfg.reject_unused();

  RandomStream rng(sub_seed(ctx.seed, 5));
  const Vec field = sample_st(mesh, p, rng);

  std::vector<Eigen::Index> kept;
  const Mat grid = st_field_matrix(mesh, p.steps, field, &kept);
  write_text_file(ctx.path("field.svg"),
                  render_heatmap("space-time source field", grid, 0.0,
                                 p.dt * p.steps, mesh.domain_lo[0],
                                 mesh.domain_hi[0], "t", "s"));

  /* per-window mean square over interior nodes: the ramp-up from the zero
     initial state shows up as a depressed first window */
  const int win_steps =
      std::max(1, static_cast<int>(std::lround(p.tau / p.dt)));
  const int n_windows = std::max(1, p.steps / win_steps);
  Mat window_cols(n_windows, 4);
  for (int w = 0; w < n_windows; ++w) {
    const int t0 = w * win_steps;
    const int t1 = w + 1 == n_windows ? p.steps : (w + 1) * win_steps;
    window_cols(w, 0) = static_cast<double>(w);
    window_cols(w, 1) = t0 * p.dt;
    window_cols(w, 2) = t1 * p.dt;
    window_cols(w, 3) = grid.middleCols(t0, t1 - t0).array().square().mean();
  }
  write_csv(ctx.path("window_stats.csv"),
            {"window", "t_start", "t_end", "mean_square"}, window_cols);

  /* numeric raster, block-averaged to a manageable size */
  const Mat small = downsample_mean(grid, 150, 400);
  Vec s_coord(small.rows());
  for (Eigen::Index i = 0; i < small.rows(); ++i) {
    const Eigen::Index j0 = i * static_cast<Eigen::Index>(kept.size()) / small.rows();
    s_coord[i] = mesh.nodes(kept[static_cast<std::size_t>(j0)], 0);
  }
  Vec t_coord(small.cols());
  for (Eigen::Index j = 0; j < small.cols(); ++j) {
    const Eigen::Index t0 = j * p.steps / small.cols();
    t_coord[j] = (t0 + 1) * p.dt;
  }
  Mat cells(small.rows() * small.cols(), 3);
  for (Eigen::Index j = 0; j < small.cols(); ++j) {
    for (Eigen::Index i = 0; i < small.rows(); ++i) {
      const Eigen::Index r = j * small.rows() + i;
      cells(r, 0) = s_coord[i];
      cells(r, 1) = t_coord[j];
      cells(r, 2) = small(i, j);
    }
  }
  write_csv(ctx.path("field_grid.csv"), {"s", "t", "value"}, cells);
  log_message(LogLevel::kInfo,
              "st-demo: sampled " + std::to_string(mesh.n_nodes()) +
                  " nodes x " + std::to_string(p.steps) + " steps");
}

void dispatch(RunContext& ctx) {
  if (ctx.command == "simulate") {
    cmd_simulate(ctx);
  } else if (ctx.command == "krige") {
    cmd_krige(ctx);
  } else if (ctx.command == "mcmc") {
    cmd_mcmc(ctx);
  } else if (ctx.command == "accuracy") {
    cmd_accuracy(ctx);
  } else if (ctx.command == "st-demo") {
    cmd_st_demo(ctx);
  } else {
    throw ConfigInvalid("unknown command '" + ctx.command +
                        "'; expected simulate, krige, mcmc, accuracy, or "
                        "st-demo");
  }
}

}  // namespace

int run_command(const CliOptions& opts) {
  ConfigMap cfg;
  try {
    cfg = ConfigMap::from_file(opts.config_path);
  } catch (const std::exception& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  }
  return run_command(opts, std::move(cfg));
}

int run_command(const CliOptions& opts, ConfigMap cfg) {
  const auto start = std::chrono::steady_clock::now();
  try {
    std::string default_kind;
    if (opts.command == "st-demo") default_kind = "spacetime-1d";
    if (opts.command == "accuracy") default_kind = "steady-1d";
    RunContext ctx = make_context(opts, std::move(cfg), default_kind);
    std::filesystem::create_directories(ctx.out);
    dispatch(ctx);
    write_text_file(ctx.path("manifest.txt"), ctx.cfg.manifest());
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    log_message(LogLevel::kInfo,
                opts.command + " finished in " +
                    std::to_string(elapsed / 1000.0) + " s; outputs in " +
                    ctx.out.string());
    return 0;
  } catch (const ConfigInvalid& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const InvalidExtent& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const UnsupportedAlpha& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const InvalidStep& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const ShapeMismatch& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const LocationOutsideMesh& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    log_message(LogLevel::kError, e.what());
    return 2;
  } catch (const NotPositiveDefinite& e) {
    log_message(LogLevel::kError, e.what());
    return 3;
  } catch (const SingularOperator& e) {
    log_message(LogLevel::kError, e.what());
    return 3;
  } catch (const std::exception& e) {
    log_message(LogLevel::kError, e.what());
    return 3;
  }
}

}  // namespace sourcerec
