#include "sourcerec/forward.hpp"

#include <Eigen/SparseLU>
#include <cmath>

namespace sourcerec {

namespace {

Vec inverse_diagonal(const SpMat& lumped) {
  Vec inv(lumped.rows());
  for (Eigen::Index i = 0; i < lumped.rows(); ++i) {
    const double l = lumped.coeff(i, i);
    if (!(l > 0.0)) throw NotPositiveDefinite(static_cast<int>(i));
    inv[i] = 1.0 / l;
  }
  return inv;
}

}  // namespace

Vec steady_solve(const FemSystem& sys, const Vec& f) {
  if (f.size() != sys.dim()) throw ShapeMismatch("source length mismatch");
  Eigen::SparseLU<SpMat> lu;
  lu.compute(sys.stiffness);
  if (lu.info() != Eigen::Success)
    throw SingularOperator("stiffness factorization failed");
  const Vec b = sys.lumped_mass * f;
  const Vec u = lu.solve(b);
  const double rel = (sys.stiffness * u - b).norm() /
                     std::max(b.norm(), 1e-300);
  if (!(rel <= 1e-6)) throw SingularOperator("stiffness is numerically singular");
  return u;
}

GmrfPrior steady_solution_prior(const FemSystem& sys, const GmrfPrior& f_prior) {
  if (f_prior.Q.rows() != sys.dim())
    throw ShapeMismatch("source prior dimension must match node count");
  const Vec linv = inverse_diagonal(sys.lumped_mass);
  const SpMat T = linv.asDiagonal() * sys.stiffness;
  const SpMat QT = f_prior.Q * T;

  GmrfPrior out;
  out.Q = SpMat(T.transpose()) * QT;
  if (f_prior.mean.isZero(0.0)) {
    out.mean = Vec::Zero(sys.dim());
    // Still reject singular dynamics up front rather than at first use.
    Eigen::SparseLU<SpMat> lu;
    lu.compute(sys.stiffness);
    if (lu.info() != Eigen::Success)
      throw SingularOperator("stiffness factorization failed");
    const Vec probe = lu.solve(Vec(sys.lumped_mass * Vec::Ones(sys.dim())));
    if (!probe.allFinite())
      throw SingularOperator("stiffness is numerically singular");
  } else {
    out.mean = steady_solve(sys, f_prior.mean);
  }
  return out;
}

namespace {

SpaceTimeOperator build_operator(const std::vector<const FemSystem*>& sys,
                                 double dt, int n_steps, bool constant) {
  if (!(dt > 0.0) || n_steps < 1)
    throw InvalidStep("require dt > 0 and at least one step");
  const FemSystem& first = *sys.front();
  const Eigen::Index n = first.dim();
  for (const FemSystem* s : sys)
    if (s->dim() != n || s->mesh.dimension != first.mesh.dimension)
      throw ShapeMismatch("per-step systems must share the mesh");

  SpaceTimeOperator op;
  op.dt = dt;
  op.n_steps = n_steps;
  op.n_space = n;
  op.lumped = first.lumped_mass;
  op.mesh = first.mesh;
  const Vec linv = inverse_diagonal(first.lumped_mass);

  std::vector<SpMat> minv;
  minv.reserve(sys.size());
  for (const FemSystem* s : sys) {
    op.step.push_back(s->lumped_mass + dt * s->stiffness);
    SpMat ident(n, n);
    ident.setIdentity();
    minv.push_back(ident + dt * SpMat(linv.asDiagonal() * s->stiffness));
  }

  std::vector<Triplet> rt;
  for (int t = 0; t < n_steps; ++t) {
    const SpMat& m = constant ? minv.front() : minv[static_cast<std::size_t>(t)];
    const int off = static_cast<int>(n) * t;
    for (Eigen::Index j = 0; j < n; ++j)
      for (SpMat::InnerIterator it(m, j); it; ++it)
        rt.emplace_back(off + static_cast<int>(it.row()), off + static_cast<int>(j),
                        it.value() / dt);
    if (t > 0)
      for (Eigen::Index i = 0; i < n; ++i)
        rt.emplace_back(off + static_cast<int>(i),
                        off - static_cast<int>(n) + static_cast<int>(i), -1.0 / dt);
  }
  op.R.resize(n * n_steps, n * n_steps);
  op.R.setFromTriplets(rt.begin(), rt.end());
  return op;
}

}  // namespace

SpaceTimeOperator build_spacetime_operator(const FemSystem& sys, double dt,
                                           int n_steps) {
  return build_operator({&sys}, dt, n_steps, true);
}

SpaceTimeOperator build_spacetime_operator(const std::vector<FemSystem>& per_step,
                                           double dt) {
  if (per_step.empty()) throw InvalidStep("need at least one step system");
  std::vector<const FemSystem*> ptrs;
  ptrs.reserve(per_step.size());
  for (const FemSystem& s : per_step) ptrs.push_back(&s);
  return build_operator(ptrs, dt, static_cast<int>(per_step.size()),
                        per_step.size() == 1);
}

Vec spacetime_solve(const SpaceTimeOperator& op, const Vec& f_stacked) {
  const Eigen::Index n = op.n_space;
  if (f_stacked.size() != n * op.n_steps)
    throw ShapeMismatch("stacked source length mismatch");

  std::vector<Eigen::SparseLU<SpMat>> lus(op.step.size());
  for (std::size_t i = 0; i < op.step.size(); ++i) {
    lus[i].compute(op.step[i]);
    if (lus[i].info() != Eigen::Success)
      throw SingularOperator("time-step matrix factorization failed");
  }

  Vec u(n * op.n_steps);
  Vec prev = Vec::Zero(n);
  for (int t = 0; t < op.n_steps; ++t) {
    const Vec rhs = op.lumped * Vec(prev + op.dt * f_stacked.segment(n * t, n));
    auto& lu = lus[op.step.size() == 1 ? 0 : static_cast<std::size_t>(t)];
    prev = lu.solve(rhs);
    if (!prev.allFinite())
      throw SingularOperator("time-step matrix is numerically singular");
    u.segment(n * t, n) = prev;
  }
  return u;
}

GmrfPrior spacetime_solution_prior(const SpaceTimeOperator& op,
                                   const GmrfPrior& f_prior) {
  const Eigen::Index nt = op.n_space * op.n_steps;
  if (f_prior.Q.rows() != nt)
    throw ShapeMismatch("source prior dimension must match stacked size");
  GmrfPrior out;
  out.Q = SpMat(op.R.transpose()) * SpMat(f_prior.Q * op.R);
  out.mean = f_prior.mean.isZero(0.0) ? Vec(Vec::Zero(nt))
                                      : spacetime_solve(op, f_prior.mean);
  return out;
}

SpMat observation_matrix(const Mesh& mesh, const Mat& locations) {
  if (locations.cols() != mesh.dimension)
    throw ShapeMismatch("location columns must match mesh dimension");
  std::vector<Triplet> t;
  for (Eigen::Index r = 0; r < locations.rows(); ++r) {
    const CellHit hit = locate(mesh, Vec(locations.row(r)));
    for (Eigen::Index k = 0; k < hit.weights.size(); ++k)
      if (hit.weights[k] > 1e-14)
        t.emplace_back(static_cast<int>(r), mesh.cells(hit.cell, k), hit.weights[k]);
  }
  SpMat A(locations.rows(), mesh.n_nodes());
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

SpMat observation_matrix_spacetime(const Mesh& mesh, double dt, int n_steps,
                                   const Mat& locations, const Vec& times) {
  if (locations.rows() != times.size())
    throw ShapeMismatch("one time per observation location required");
  if (!(dt > 0.0) || n_steps < 1)
    throw InvalidStep("require dt > 0 and at least one step");
  const Eigen::Index n = mesh.n_nodes();
  const double t_end = dt * n_steps;
  std::vector<Triplet> trip;
  for (Eigen::Index r = 0; r < locations.rows(); ++r) {
    const double tt = times[r];
    if (!(tt >= -1e-9 * t_end) || !(tt <= t_end * (1.0 + 1e-9)))
      throw LocationOutsideMesh("observation time outside the represented window");
    const CellHit hit = locate(mesh, Vec(locations.row(r)));
    const double g = std::min(tt / dt - 1.0, static_cast<double>(n_steps - 1));
    const int s0 = static_cast<int>(std::floor(g));
    const double w1 = g - s0;
    const double w0 = 1.0 - w1;
    for (Eigen::Index k = 0; k < hit.weights.size(); ++k) {
      const double wsp = hit.weights[k];
      if (wsp <= 1e-14) continue;
      const int node = mesh.cells(hit.cell, k);
      if (s0 >= 0 && w0 > 1e-14)
        trip.emplace_back(static_cast<int>(r),
                          static_cast<int>(n) * s0 + node, w0 * wsp);
      if (s0 + 1 <= n_steps - 1 && w1 > 1e-14)
        trip.emplace_back(static_cast<int>(r),
                          static_cast<int>(n) * (s0 + 1) + node, w1 * wsp);
    }
  }
  SpMat A(locations.rows(), n * n_steps);
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

namespace {

ObservationSet observe(const SpMat& A, const Vec& u, double sigma2_eps,
                       RandomStream& rng) {
  ObservationSet obs;
  obs.A = A;
  obs.sigma2_eps = sigma2_eps;
  obs.y = A * u;
  if (sigma2_eps > 0.0) {
    const double sd = std::sqrt(sigma2_eps);
    for (Eigen::Index i = 0; i < obs.y.size(); ++i) obs.y[i] += sd * rng.normal();
  }
  return obs;
}

}  // namespace

SimulationResult simulate(GmrfPrior& f_prior, const FemSystem& sys,
                          const Mat& locations, double sigma2_eps,
                          RandomStream& rng) {
  SimulationResult out;
  out.f = sample_gaussian(ensure_factor(f_prior), f_prior.mean, rng);
  out.u = steady_solve(sys, out.f);
  out.obs = observe(observation_matrix(sys.mesh, locations), out.u, sigma2_eps, rng);
  return out;
}

SimulationResult simulate_spacetime(GmrfPrior& f_prior,
                                    const SpaceTimeOperator& op,
                                    const Mat& locations, const Vec& times,
                                    double sigma2_eps, RandomStream& rng) {
  SimulationResult out;
  out.f = sample_gaussian(ensure_factor(f_prior), f_prior.mean, rng);
  out.u = spacetime_solve(op, out.f);
  const SpMat A =
      observation_matrix_spacetime(op.mesh, op.dt, op.n_steps, locations, times);
  out.obs = observe(A, out.u, sigma2_eps, rng);
  return out;
}

}  // namespace sourcerec
