#pragma once

#include <cstdint>
#include <vector>

#include "sourcerec/forward.hpp"
#include "sourcerec/inference.hpp"

namespace sourcerec {

/// Diagonal weighting of the mesh basis functions by the region of interest
/// (the declared domain box, i.e. the mesh extent minus any buffer).
/// `fraction[i]` is the share of basis function i's integral that falls inside
/// the region; `quadrature[i]` is that integral itself, so the quadrature
/// entries sum to the region volume and `sum(fraction)` counts effective
/// interior nodes.
struct InteriorWeights {
  SpMat I_int;        ///< diag(fraction)
  Vec fraction;       ///< per-node share in [0, 1]
  Vec quadrature;     ///< integral of each basis function over the region
  double volume = 0.0;  ///< V = sum(quadrature), the region measure
  double mass = 0.0;    ///< M = tr(I_int) = sum(fraction)
};

/// Exact basis-function overlap with the mesh's declared domain box
/// (half-hat integrals in 1-D, polygon-clipped subtriangle integration in
/// 2-D).
InteriorWeights interior_weights(const Mesh& mesh);

/// Same, against an explicit box [lo, hi] (e.g. the full mesh extent, to
/// probe the effect of dropping the buffer from the error integral).
InteriorWeights interior_weights(const Mesh& mesh, const Vec& lo,
                                 const Vec& hi);

/// sqrt( integral over the region of (truth - estimate)^2 ), evaluated by
/// basis-weighted quadrature of the nodal difference.
double l2_error_empirical(const Vec& truth, const Vec& estimate,
                          const InteriorWeights& w);

/// Convenience overload measuring the posterior mean against a known truth.
double l2_error_empirical(const Vec& truth, const PosteriorGaussian& post,
                          const InteriorWeights& w);

/// Root expected squared error sqrt((V/M) tr(I_int Sigma I_int)) where Sigma
/// is the covariance whose precision `factor` factors. When `pushforward` is
/// given (rows map the factored field to the target field, e.g. Ltilde^-1 K),
/// the trace is of the pushed-forward covariance instead.
double l2_error_approx(const CholeskyFactor& factor, const InteriorWeights& w,
                       const SpMat* pushforward = nullptr);

/// Which field an error or rate refers to.
enum class ErrorTarget { kSolution, kSource };

/// Local polynomial convergence rate d log L2 / d zeta at data weight
/// exp(zeta)/(m_rows * sigma2_eps) on the observation pattern A^T A:
///   -1/2 * c * tr(I S(c) P^T A^T A P S(c) I) / tr(I S(c) I),
/// with S(c) = (Q_u + c A^T A)^-1 and P the source pushforward (identity for
/// the solution target). Always in (-1/2 - eps, 0]; tends to -1/2 as zeta
/// grows when the pattern is full rank and there is no buffer.
double local_convergence_slope(const GmrfPrior& prior_u, const FemSystem& sys,
                               const SpMat& obs_pattern,
                               const InteriorWeights& w, double zeta,
                               double m_rows, double sigma2_eps,
                               ErrorTarget target);

/// One error-vs-sample-size curve: empirical mean L2 over replicates, the
/// trace approximation, and the analytic local slope at each size.
struct ErrorCurve {
  Vec sample_sizes;
  Vec empirical;
  Vec approx;
  Vec slope;
};

/// Simulation setup for a convergence sweep over observation densities.
struct SweepCase {
  FemSystem sys;                 ///< steady dynamics on a buffered mesh
  MaternHyper source_hyper;      ///< prior for the latent source field
  double sigma2_eps = 1.0;       ///< observation noise variance
  bool no_buffer = false;        ///< integrate errors over the full extent
  int workers = 0;               ///< density-level threads; 0 = hardware
  std::uint64_t seed = 1;
};

/// Paired curves for the solution field and the reconstructed source.
struct SweepResult {
  ErrorCurve solution;
  ErrorCurve source;
};

/// For each sample size N: places N evenly spaced interior observation
/// points, simulates `replicates` independent datasets, records the mean
/// empirical L2 of the kriging means, and evaluates the trace approximation
/// and local slope under the uniform-node pattern A^T A = I_int observed
/// n = N/m fractional times (m = count of interior nodes).
SweepResult convergence_sweep(const SweepCase& spec,
                              const std::vector<double>& sample_sizes,
                              int replicates = 30);

/// Least-squares slope of log(err) against log(N) over sizes in
/// [n_min, n_max]; requires at least two points in the window.
double fit_loglog_slope(const Vec& sample_sizes, const Vec& err, double n_min,
                        double n_max);

}  // namespace sourcerec
