#include "sourcerec/accuracy.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "sourcerec/types.hpp"

namespace sourcerec {

namespace {

/* Integral of the linear shape going from 1 at `peak` to 0 at `other`,
   restricted to [lo, hi] intersected with the segment. */
double clipped_half_hat(double peak, double other, double lo, double hi) {
  const double a = std::min(peak, other);
  const double b = std::max(peak, other);
  const double c = std::max(a, lo);
  const double d = std::min(b, hi);
  if (d <= c) return 0.0;
  const double len = b - a;
  if (len <= 0.0) return 0.0;
  /* shape(x) = (b - x)/len when peak < other is false? Normalize: value is
     1 at peak and 0 at other, i.e. |x - other| / len. */
  const double ic = std::abs(c - other);
  const double id = std::abs(d - other);
  /* integral of |x - other|/len over [c, d]; |x - other| is monotone on the
     segment, so it is the average of the endpoint values times the width. */
  return 0.5 * (ic + id) * (d - c) / len;
}

using Point2 = Eigen::Vector2d;
using Poly2 = std::vector<Point2>;

/* Sutherland-Hodgman clip against the half-plane keep_sign*(p[axis]-bound)>=0. */
Poly2 clip_halfplane(const Poly2& poly, int axis, double bound,
                     double keep_sign) {
  Poly2 out;
  const std::size_t n = poly.size();
  if (n == 0) return out;
  out.reserve(n + 2);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& cur = poly[i];
    const Point2& nxt = poly[(i + 1) % n];
    const double dc = keep_sign * (cur[axis] - bound);
    const double dn = keep_sign * (nxt[axis] - bound);
    if (dc >= 0.0) out.push_back(cur);
    if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

double cross2(const Point2& a, const Point2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

/* Barycentric coordinates of q in triangle (p0, p1, p2). */
Eigen::Vector3d barycentric(const Point2& p0, const Point2& p1,
                            const Point2& p2, const Point2& q) {
  const double area2 = cross2(p1 - p0, p2 - p0);
  Eigen::Vector3d lambda;
  lambda[0] = cross2(p1 - q, p2 - q) / area2;
  lambda[1] = cross2(p2 - q, p0 - q) / area2;
  lambda[2] = cross2(p0 - q, p1 - q) / area2;
  return lambda;
}

InteriorWeights build_weights(const Mesh& mesh, const Vec& lo, const Vec& hi) {
  if (lo.size() != mesh.dimension || hi.size() != mesh.dimension)
    throw ShapeMismatch("region box dimension does not match the mesh");
  const Eigen::Index n = mesh.n_nodes();
  Vec quad = Vec::Zero(n);
  Vec full = Vec::Zero(n);

  if (mesh.dimension == 1) {
    for (Eigen::Index c = 0; c < mesh.n_cells(); ++c) {
      const int i = mesh.cells(c, 0);
      const int j = mesh.cells(c, 1);
      const double xi = mesh.nodes(i, 0);
      const double xj = mesh.nodes(j, 0);
      const double len = std::abs(xj - xi);
      quad[i] += clipped_half_hat(xi, xj, lo[0], hi[0]);
      quad[j] += clipped_half_hat(xj, xi, lo[0], hi[0]);
      full[i] += 0.5 * len;
      full[j] += 0.5 * len;
    }
  } else if (mesh.dimension == 2) {
    for (Eigen::Index c = 0; c < mesh.n_cells(); ++c) {
      std::array<Point2, 3> p;
      for (int v = 0; v < 3; ++v)
        p[static_cast<std::size_t>(v)] = mesh.nodes.row(mesh.cells(c, v)).transpose();
      const double area = 0.5 * cross2(p[1] - p[0], p[2] - p[0]);
      for (int v = 0; v < 3; ++v) full[mesh.cells(c, v)] += area / 3.0;

      Poly2 poly{p[0], p[1], p[2]};
      poly = clip_halfplane(poly, 0, lo[0], +1.0);
      poly = clip_halfplane(poly, 0, hi[0], -1.0);
      poly = clip_halfplane(poly, 1, lo[1], +1.0);
      poly = clip_halfplane(poly, 1, hi[1], -1.0);
      if (poly.size() < 3) continue;
      for (std::size_t t = 1; t + 1 < poly.size(); ++t) {
        const Point2& q0 = poly[0];
        const Point2& q1 = poly[t];
        const Point2& q2 = poly[t + 1];
        const double sub_area = 0.5 * cross2(q1 - q0, q2 - q0);
        if (sub_area <= 0.0) continue;
        /* The basis functions are linear, so their integral over the
           subtriangle is its area times the mean of the corner values. */
        const Eigen::Vector3d b0 = barycentric(p[0], p[1], p[2], q0);
        const Eigen::Vector3d b1 = barycentric(p[0], p[1], p[2], q1);
        const Eigen::Vector3d b2 = barycentric(p[0], p[1], p[2], q2);
        const Eigen::Vector3d mean = (b0 + b1 + b2) / 3.0;
        for (int v = 0; v < 3; ++v)
          quad[mesh.cells(c, v)] += sub_area * mean[v];
      }
    }
  } else {
    throw ConfigInvalid("interior weights support 1-D and 2-D meshes only");
  }

  InteriorWeights w;
  w.quadrature = quad;
  w.fraction = Vec::Zero(n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (full[i] <= 0.0) continue;
    const double frac = std::clamp(quad[i] / full[i], 0.0, 1.0);
    if (frac <= 0.0) continue;
    w.fraction[i] = frac;
    trips.emplace_back(static_cast<int>(i), static_cast<int>(i), frac);
  }
  w.I_int.resize(n, n);
  w.I_int.setFromTriplets(trips.begin(), trips.end());
  w.volume = quad.sum();
  w.mass = w.fraction.sum();
  if (!(w.volume > 0.0) || !(w.mass > 0.0))
    throw ConfigInvalid("interior region does not overlap the mesh");
  return w;
}

/* Shared trace-ratio core: -1/2 * coeff * tr(I S P' G P S I)/tr(I S I) for
   S = factor^-1, G = obs pattern, I = diag(fraction), P optional pushforward. */
double slope_from_factor(const CholeskyFactor& factor, const SpMat& obs_pattern,
                         const InteriorWeights& w, double coeff,
                         const SpMat* push) {
  const SpMat sweep = push == nullptr
                          ? w.I_int
                          : SpMat(push->transpose() * w.I_int);
  double numer = 0.0;
  double denom = 0.0;
  const Eigen::Index n = sweep.cols();
  constexpr Eigen::Index kBlock = 128;
  for (Eigen::Index j0 = 0; j0 < n; j0 += kBlock) {
    const Eigen::Index k = std::min(kBlock, n - j0);
    const Mat rhs = Mat(sweep.middleCols(j0, k));
    if (rhs.isZero(0.0)) continue;
    const Mat x = solve(factor, rhs);
    denom += (rhs.array() * x.array()).sum();
    numer += (x.array() * (obs_pattern * x).array()).sum();
  }
  if (!(denom > 0.0))
    throw ConfigInvalid("interior weights select no degrees of freedom");
  return -0.5 * coeff * numer / denom;
}

}  // namespace

InteriorWeights interior_weights(const Mesh& mesh) {
  return build_weights(mesh, mesh.domain_lo, mesh.domain_hi);
}

InteriorWeights interior_weights(const Mesh& mesh, const Vec& lo,
                                 const Vec& hi) {
  return build_weights(mesh, lo, hi);
}

double l2_error_empirical(const Vec& truth, const Vec& estimate,
                          const InteriorWeights& w) {
  if (truth.size() != estimate.size() || truth.size() != w.quadrature.size())
    throw ShapeMismatch("field length does not match the interior weights");
  const Vec diff = truth - estimate;
  return std::sqrt(w.quadrature.dot(diff.cwiseAbs2()));
}

double l2_error_empirical(const Vec& truth, const PosteriorGaussian& post,
                          const InteriorWeights& w) {
  return l2_error_empirical(truth, post.mean, w);
}

double l2_error_approx(const CholeskyFactor& factor, const InteriorWeights& w,
                       const SpMat* pushforward) {
  double trace = 0.0;
  if (pushforward == nullptr) {
    trace = selected_trace(factor, w.I_int, w.I_int);
  } else {
    const SpMat left = SpMat(w.I_int * (*pushforward));
    const SpMat right = SpMat(pushforward->transpose() * w.I_int);
    trace = selected_trace(factor, left, right);
  }
  trace = std::max(trace, 0.0);
  return std::sqrt(w.volume / w.mass * trace);
}

double local_convergence_slope(const GmrfPrior& prior_u, const FemSystem& sys,
                               const SpMat& obs_pattern,
                               const InteriorWeights& w, double zeta,
                               double m_rows, double sigma2_eps,
                               ErrorTarget target) {
  if (!(m_rows > 0.0) || !(sigma2_eps > 0.0))
    throw ConfigInvalid("slope needs positive row count and noise variance");
  if (obs_pattern.rows() != prior_u.Q.rows() ||
      obs_pattern.cols() != prior_u.Q.cols())
    throw ShapeMismatch("observation pattern does not match the prior");
  const double coeff = std::exp(zeta) / (m_rows * sigma2_eps);
  const SpMat posterior_precision = prior_u.Q + coeff * obs_pattern;
  const CholeskyFactor factor = cholesky(posterior_precision);
  if (target == ErrorTarget::kSolution)
    return slope_from_factor(factor, obs_pattern, w, coeff, nullptr);
  const SpMat push = source_pushforward(sys);
  return slope_from_factor(factor, obs_pattern, w, coeff, &push);
}

namespace {

/* Everything shared across the per-density sweep tasks (read-only). */
struct SweepShared {
  const SweepCase& spec;
  const std::vector<double>& sizes;
  int replicates;
  InteriorWeights weights;
  GmrfPrior f_prior;
  GmrfPrior u_prior;
  SpMat push;
  double region_lo = 0.0;
  double region_hi = 0.0;
  double m_rows = 0.0;
};

void run_density(SweepShared& sh, std::size_t idx, SweepResult& out) {
  const auto n_obs =
      std::max<long long>(1, std::llround(sh.sizes[idx]));
  const double n_real = static_cast<double>(n_obs);

  /* Evenly spread points across the region of interest. */
  Mat locations(n_obs, 1);
  for (long long i = 0; i < n_obs; ++i)
    locations(i, 0) = sh.region_lo + (static_cast<double>(i) + 0.5) *
                                         (sh.region_hi - sh.region_lo) / n_real;

  const SpMat A = observation_matrix(sh.spec.sys.mesh, locations);
  const SpMat normal = SpMat(A.transpose() * A) / sh.spec.sigma2_eps;
  const CholeskyFactor post_factor = cholesky(SpMat(sh.u_prior.Q + normal));

  double emp_u = 0.0;
  double emp_f = 0.0;
  for (int r = 0; r < sh.replicates; ++r) {
    RandomStream rng(sh.spec.seed +
                     0x9E3779B97F4A7C15ULL *
                         (idx * static_cast<std::size_t>(sh.replicates) +
                          static_cast<std::size_t>(r) + 1));
    const SimulationResult sim =
        simulate(sh.f_prior, sh.spec.sys, locations, sh.spec.sigma2_eps, rng);
    const Vec rhs = A.transpose() * sim.obs.y / sh.spec.sigma2_eps;
    const Vec mean_u = solve(post_factor, rhs);
    emp_u += l2_error_empirical(sim.u, mean_u, sh.weights);
    emp_f += l2_error_empirical(sim.f, Vec(sh.push * mean_u), sh.weights);
  }
  out.solution.empirical[static_cast<Eigen::Index>(idx)] =
      emp_u / sh.replicates;
  out.source.empirical[static_cast<Eigen::Index>(idx)] = emp_f / sh.replicates;

  /* Trace approximation and local rate under the uniform-node pattern
     A^T A = I_int observed n = N/m fractional times. */
  const double coeff = n_real / (sh.m_rows * sh.spec.sigma2_eps);
  const CholeskyFactor apx_factor =
      cholesky(SpMat(sh.u_prior.Q + coeff * sh.weights.I_int));
  out.solution.approx[static_cast<Eigen::Index>(idx)] =
      l2_error_approx(apx_factor, sh.weights);
  out.source.approx[static_cast<Eigen::Index>(idx)] =
      l2_error_approx(apx_factor, sh.weights, &sh.push);
  out.solution.slope[static_cast<Eigen::Index>(idx)] = slope_from_factor(
      apx_factor, sh.weights.I_int, sh.weights, coeff, nullptr);
  out.source.slope[static_cast<Eigen::Index>(idx)] = slope_from_factor(
      apx_factor, sh.weights.I_int, sh.weights, coeff, &sh.push);

  out.solution.sample_sizes[static_cast<Eigen::Index>(idx)] = n_real;
  out.source.sample_sizes[static_cast<Eigen::Index>(idx)] = n_real;
}

}  // namespace

SweepResult convergence_sweep(const SweepCase& spec,
                              const std::vector<double>& sample_sizes,
                              int replicates) {
  if (sample_sizes.empty())
    throw ConfigInvalid("convergence sweep needs at least one sample size");
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    if (!(sample_sizes[i] > 0.0))
      throw ConfigInvalid("sample sizes must be positive");
    if (i > 0 && !(sample_sizes[i] > sample_sizes[i - 1]))
      throw ConfigInvalid("sample sizes must be strictly increasing");
  }
  if (replicates < 1) throw ConfigInvalid("sweep needs at least one replicate");
  if (!(spec.sigma2_eps > 0.0))
    throw ConfigInvalid("observation noise variance must be positive");
  if (spec.sys.mesh.dimension != 1)
    throw ConfigInvalid("the convergence sweep places points on 1-D meshes");

  SweepShared sh{spec, sample_sizes, replicates, {}, {}, {}, {}, 0, 0, 0};
  if (spec.no_buffer) {
    Vec lo(1), hi(1);
    lo[0] = spec.sys.mesh.nodes.col(0).minCoeff();
    hi[0] = spec.sys.mesh.nodes.col(0).maxCoeff();
    sh.weights = interior_weights(spec.sys.mesh, lo, hi);
    sh.region_lo = lo[0];
    sh.region_hi = hi[0];
  } else {
    sh.weights = interior_weights(spec.sys.mesh);
    sh.region_lo = spec.sys.mesh.domain_lo[0];
    sh.region_hi = spec.sys.mesh.domain_hi[0];
  }
  sh.m_rows = static_cast<double>((sh.weights.fraction.array() > 0.0).count());

  sh.f_prior = matern_precision(spec.sys, spec.source_hyper);
  ensure_factor(sh.f_prior);  // cache before the tasks share it read-only
  sh.u_prior = steady_solution_prior(spec.sys, sh.f_prior);
  sh.push = source_pushforward(spec.sys);

  const Eigen::Index n_sizes = static_cast<Eigen::Index>(sample_sizes.size());
  SweepResult out;
  for (ErrorCurve* curve : {&out.solution, &out.source}) {
    curve->sample_sizes = Vec::Zero(n_sizes);
    curve->empirical = Vec::Zero(n_sizes);
    curve->approx = Vec::Zero(n_sizes);
    curve->slope = Vec::Zero(n_sizes);
  }

  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  const unsigned n_workers = std::min<unsigned>(
      spec.workers > 0 ? static_cast<unsigned>(spec.workers) : hw,
      static_cast<unsigned>(sample_sizes.size()));

  if (n_workers <= 1) {
    for (std::size_t i = 0; i < sample_sizes.size(); ++i)
      run_density(sh, i, out);
    return out;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (unsigned t = 0; t < n_workers; ++t) {
    pool.emplace_back([&]() {
      try {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= sample_sizes.size()) break;
          run_density(sh, i, out);
        }
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

double fit_loglog_slope(const Vec& sample_sizes, const Vec& err, double n_min,
                        double n_max) {
  if (sample_sizes.size() != err.size())
    throw ShapeMismatch("sample sizes and errors differ in length");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int m = 0;
  for (Eigen::Index i = 0; i < sample_sizes.size(); ++i) {
    const double n = sample_sizes[i];
    const double e = err[i];
    if (n < n_min || n > n_max || !(e > 0.0)) continue;
    const double x = std::log(n);
    const double y = std::log(e);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 2)
    throw ConfigInvalid("slope fit needs at least two sizes in the window");
  const double denom = m * sxx - sx * sx;
  return (m * sxy - sx * sy) / denom;
}

}  // namespace sourcerec
