#pragma once

#include <optional>

#include "sourcerec/fem.hpp"
#include "sourcerec/rng.hpp"
#include "sourcerec/sparse.hpp"
#include "sourcerec/types.hpp"

namespace sourcerec {

/// Matern-field hyperparameters. `range` is the distance at which spatial
/// correlation has decayed to roughly 0.14; `variance` is the pointwise
/// marginal variance; `alpha` (2 or 4) controls smoothness.
struct MaternHyper {
  double range = 1.0;
  double variance = 1.0;
  int alpha = 2;

  double nu(int dim) const { return alpha - 0.5 * dim; }
  double kappa(int dim) const { return std::sqrt(8.0 * nu(dim)) / range; }
};

/// Gaussian field in precision form, with a lazily computed factorization.
struct GmrfPrior {
  Vec mean;
  SpMat Q;
  std::optional<CholeskyFactor> factor;
};

/// Factors `p.Q` on first use (fill-reducing ordering) and caches the result.
CholeskyFactor& ensure_factor(GmrfPrior& p);

/// Normalization constant tau^2 for the finite element Matern precision, such
/// that the continuum field has pointwise variance `hyper.variance`.
double matern_tau_squared(const MaternHyper& hyper, int dim);

/// Finite element Matern precision on the mesh underlying `sys`:
/// Q = tau^2 * B (Minv B)^(alpha-1) with B = kappa^2 Ltilde + G, where G is
/// the unit-diffusion stiffness part and Ltilde the lumped mass. Mean zero.
GmrfPrior matern_precision(const FemSystem& sys, const MaternHyper& hyper);

/// Fixed-effect block attached to the latent field: u = K^-1 (Ltilde f + X beta
/// contributions); `Q_beta / variance_ratio^2` is the prior precision of beta.
struct RegressionDesign {
  Mat X;
  SpMat Q_beta;
  double variance_scale = 1.0;  ///< prior sd multiplier for beta
};

/// Joint precision of (u, beta) when f = Ltilde^-1 K u - X beta is a priori
/// `f_prior` and beta has prior N(0, variance_scale^2 * Q_beta^-1).
GmrfPrior regression_joint_precision(const FemSystem& sys,
                                     const GmrfPrior& f_prior,
                                     const RegressionDesign& design);

/// Separable space-time Matern source on `n_steps` time slices of the mesh:
/// Q = tau^alpha * dt * (R^T)^(alpha/2) (Ltilde x I) R^(alpha/2) where R is the
/// backward-Euler transport operator of the damped heat flow with precision
/// parameter `tau` and spatial scale `kappa`.
GmrfPrior st_matern_source(const Mesh& mesh, double tau, double kappa,
                           int alpha, double dt, int n_steps);

/// Stationary variance of a fixed-time slice of the space-time Matern field.
double st_slice_variance(double tau, double kappa, int alpha, int dim);

/// The `tau` giving a stationary slice variance of `sigma2`.
double st_tau_for_variance(double sigma2, double kappa, int alpha, int dim);

/// Draws one sample path of the space-time Matern field by time stepping from
/// a zero initial condition (the ramp-up transient is part of the sample),
/// without assembling the space-time precision. Output is the stacked vector
/// (time-major), suitable for meshes x steps too large to factor jointly.
Vec sample_st_matern(const Mesh& mesh, double tau, double kappa, int alpha,
                     double dt, int n_steps, RandomStream& rng);

/// Condensed source prior on the interior nodes of `cs` when the boundary
/// trace is fixed (or Gaussian: `cs.boundary.precision` set). The interior
/// prior `interior_f` must already live on the kept nodes.
GmrfPrior condensed_source_prior(const CondensedSystem& cs,
                                 const GmrfPrior& interior_f);

}  // namespace sourcerec
