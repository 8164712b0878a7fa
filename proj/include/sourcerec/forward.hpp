#pragma once

#include <vector>

#include "sourcerec/gmrf.hpp"

namespace sourcerec {

/// Backward-Euler time discretization of du/dt + K u = f on a fixed mesh.
/// The block-bidiagonal operator R maps stacked solution slices to stacked
/// sources; `step` holds the per-step solve matrices Ltilde + dt*K_t (one
/// entry when the dynamics are constant in time).
struct SpaceTimeOperator {
  SpMat R;
  std::vector<SpMat> step;
  SpMat lumped;
  Mesh mesh;
  double dt = 0.0;
  int n_steps = 0;
  Eigen::Index n_space = 0;

  const SpMat& step_matrix(int t) const {
    return step.size() == 1 ? step.front() : step.at(static_cast<std::size_t>(t));
  }
};

/// Linear observations y = A u + noise with i.i.d. variance sigma2_eps.
struct ObservationSet {
  SpMat A;
  Vec y;
  double sigma2_eps = 1.0;
};

/// Solves K u = Ltilde f. Throws SingularOperator when K is not invertible.
Vec steady_solve(const FemSystem& sys, const Vec& f);

/// Distribution of u = K^-1 Ltilde f when f has the given prior:
/// mean K^-1 Ltilde mu_f, precision K^T Ltilde^-1 Q_f Ltilde^-1 K.
GmrfPrior steady_solution_prior(const FemSystem& sys, const GmrfPrior& f_prior);

/// Time-constant dynamics over `n_steps` backward-Euler steps of size dt.
SpaceTimeOperator build_spacetime_operator(const FemSystem& sys, double dt,
                                           int n_steps);

/// Time-varying dynamics: one system per step (all sharing the mesh).
SpaceTimeOperator build_spacetime_operator(const std::vector<FemSystem>& per_step,
                                           double dt);

/// Integrates the stacked source step by step from a zero initial condition.
Vec spacetime_solve(const SpaceTimeOperator& op, const Vec& f_stacked);

/// Distribution of the stacked solution: mean by stepping, precision R^T Q_f R.
GmrfPrior spacetime_solution_prior(const SpaceTimeOperator& op,
                                   const GmrfPrior& f_prior);

/// Rows interpolate point values at `locations` (rows) with barycentric
/// weights; weights in each row sum to 1.
SpMat observation_matrix(const Mesh& mesh, const Mat& locations);

/// Space-time interpolation: barycentric in space, linear between the two
/// nearest time slices (slice s lives at time (s+1)*dt; values before the
/// first slice interpolate against the zero initial condition).
SpMat observation_matrix_spacetime(const Mesh& mesh, double dt, int n_steps,
                                   const Mat& locations, const Vec& times);

struct SimulationResult {
  Vec f;
  Vec u;
  ObservationSet obs;
};

/// Draws f from its prior, solves for u, and observes it at `locations` with
/// noise variance sigma2_eps (exact observations when zero).
SimulationResult simulate(GmrfPrior& f_prior, const FemSystem& sys,
                          const Mat& locations, double sigma2_eps,
                          RandomStream& rng);

/// Space-time analogue; `times` pairs with the rows of `locations`.
SimulationResult simulate_spacetime(GmrfPrior& f_prior,
                                    const SpaceTimeOperator& op,
                                    const Mat& locations, const Vec& times,
                                    double sigma2_eps, RandomStream& rng);

}  // namespace sourcerec
