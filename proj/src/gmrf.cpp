#include "sourcerec/gmrf.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <vector>

namespace sourcerec {

namespace {

constexpr double kPi = 3.14159265358979323846;

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

CholeskyFactor& ensure_factor(GmrfPrior& p) {
  if (!p.factor) p.factor = cholesky(p.Q, Ordering::Amd);
  return *p.factor;
}

double matern_tau_squared(const MaternHyper& hyper, int dim) {
  if (hyper.alpha != 2 && hyper.alpha != 4)
    throw UnsupportedAlpha("smoothness exponent must be 2 or 4");
  if (!(hyper.range > 0.0) || !(hyper.variance > 0.0))
    throw ConfigInvalid("range and variance must be positive");
  const double nu = hyper.nu(dim);
  const double kappa = hyper.kappa(dim);
  return std::tgamma(nu) /
         (std::tgamma(nu + 0.5 * dim) * std::pow(4.0 * kPi, 0.5 * dim) *
          std::pow(kappa, 2.0 * nu) * hyper.variance);
}

GmrfPrior matern_precision(const FemSystem& sys, const MaternHyper& hyper) {
  const int dim = sys.mesh.dimension;
  const double tau2 = matern_tau_squared(hyper, dim);
  const double kappa = hyper.kappa(dim);

  const SpMat B = kappa * kappa * sys.lumped_mass + sys.diffusion_part;
  const Vec linv = inverse_diagonal(sys.lumped_mass);
  const SpMat C = linv.asDiagonal() * B;  // Minv B

  SpMat Q = B * C;
  for (int k = 2; k < hyper.alpha; k += 2) Q = (Q * C) * C;
  Q *= tau2;

  GmrfPrior out;
  out.mean = Vec::Zero(sys.dim());
  out.Q = std::move(Q);
  return out;
}

GmrfPrior regression_joint_precision(const FemSystem& sys,
                                     const GmrfPrior& f_prior,
                                     const RegressionDesign& design) {
  const Eigen::Index n = sys.dim();
  const Eigen::Index p = design.X.cols();
  if (f_prior.Q.rows() != n)
    throw ShapeMismatch("field prior dimension must match node count");
  if (p > 0 && design.X.rows() != n)
    throw ShapeMismatch("covariate rows must match node count");
  if (design.Q_beta.rows() != p || design.Q_beta.cols() != p)
    throw ShapeMismatch("coefficient prior must be square over covariates");
  if (!(design.variance_scale > 0.0))
    throw ShapeMismatch("coefficient variance scale must be positive");

  const Vec linv = inverse_diagonal(sys.lumped_mass);
  const SpMat T = linv.asDiagonal() * sys.stiffness;
  const SpMat QT = f_prior.Q * T;
  const SpMat Quu = SpMat(T.transpose()) * QT;

  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(Quu.nonZeros()) +
            2 * static_cast<std::size_t>(n * p) +
            static_cast<std::size_t>(p * p));
  for (Eigen::Index j = 0; j < n; ++j)
    for (SpMat::InnerIterator it(Quu, j); it; ++it)
      t.emplace_back(static_cast<int>(it.row()), static_cast<int>(j), it.value());

  if (p > 0) {
    const Mat QX = f_prior.Q * design.X;
    const Mat cross = -(T.transpose() * QX);
    const double v2 = design.variance_scale * design.variance_scale;
    const Mat bb = Mat(design.Q_beta) / v2 + design.X.transpose() * QX;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < p; ++c) {
        t.emplace_back(static_cast<int>(i), static_cast<int>(n + c), cross(i, c));
        t.emplace_back(static_cast<int>(n + c), static_cast<int>(i), cross(i, c));
      }
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b)
        t.emplace_back(static_cast<int>(n + a), static_cast<int>(n + b), bb(a, b));
  }

  GmrfPrior out;
  out.mean = Vec::Zero(n + p);
  out.Q.resize(n + p, n + p);
  out.Q.setFromTriplets(t.begin(), t.end());
  return out;
}

namespace {

struct StStepParts {
  SpMat lumped;     // spatial lumped mass
  SpMat step;       // Ltilde + (dt/tau) (kappa^2 Ltilde + G)
  SpMat minv;       // I + (dt/tau) Ltilde^-1 (kappa^2 Ltilde + G)
  Vec linv;
};

StStepParts st_step_parts(const Mesh& mesh, double tau, double kappa,
                          int alpha, double dt, int n_steps) {
  if (alpha != 2 && alpha != 4)
    throw UnsupportedAlpha("smoothness exponent must be 2 or 4");
  if (!(dt > 0.0) || n_steps < 1)
    throw InvalidStep("require dt > 0 and at least one step");
  if (!(tau > 0.0) || !(kappa > 0.0))
    throw InvalidStep("time constant and spatial scale must be positive");

  FemSystem sys = assemble(mesh, PdeCoefficients{});
  StStepParts parts;
  parts.lumped = sys.lumped_mass;
  parts.linv = inverse_diagonal(sys.lumped_mass);
  const SpMat B = kappa * kappa * sys.lumped_mass + sys.diffusion_part;
  parts.step = sys.lumped_mass + (dt / tau) * B;
  SpMat ident(mesh.n_nodes(), mesh.n_nodes());
  ident.setIdentity();
  parts.minv = ident + (dt / tau) * SpMat(parts.linv.asDiagonal() * B);
  return parts;
}

}  // namespace

GmrfPrior st_matern_source(const Mesh& mesh, double tau, double kappa,
                           int alpha, double dt, int n_steps) {
  const StStepParts parts = st_step_parts(mesh, tau, kappa, alpha, dt, n_steps);
  const Eigen::Index n = mesh.n_nodes();
  const Eigen::Index nt = n * n_steps;

  std::vector<Triplet> rt;
  rt.reserve(static_cast<std::size_t>(n_steps) *
             (static_cast<std::size_t>(parts.minv.nonZeros()) + static_cast<std::size_t>(n)));
  for (int s = 0; s < n_steps; ++s) {
    const int off = static_cast<int>(n) * s;
    for (Eigen::Index j = 0; j < n; ++j)
      for (SpMat::InnerIterator it(parts.minv, j); it; ++it)
        rt.emplace_back(off + static_cast<int>(it.row()), off + static_cast<int>(j),
                        it.value() / dt);
    if (s > 0)
      for (Eigen::Index i = 0; i < n; ++i)
        rt.emplace_back(off + static_cast<int>(i),
                        off - static_cast<int>(n) + static_cast<int>(i), -1.0 / dt);
  }
  SpMat R(nt, nt);
  R.setFromTriplets(rt.begin(), rt.end());

  SpMat Rp = (alpha == 2) ? R : SpMat(R * R);
  Vec lbig(nt);
  const Vec ldiag = parts.lumped.diagonal();
  for (int s = 0; s < n_steps; ++s) lbig.segment(n * s, n) = ldiag;

  SpMat LR = lbig.asDiagonal() * Rp;
  SpMat Q = SpMat(Rp.transpose()) * LR;
  Q *= std::pow(tau, alpha) * dt;

  GmrfPrior out;
  out.mean = Vec::Zero(nt);
  out.Q = std::move(Q);
  return out;
}

double st_slice_variance(double tau, double kappa, int alpha, int dim) {
  if (alpha != 2 && alpha != 4)
    throw UnsupportedAlpha("smoothness exponent must be 2 or 4");
  const double nu_sp = (alpha - 1.0) - 0.5 * dim;
  if (!(nu_sp > 0.0))
    throw UnsupportedAlpha("slice variance requires alpha - 1 - dim/2 > 0");
  if (!(tau > 0.0) || !(kappa > 0.0))
    throw InvalidStep("time constant and spatial scale must be positive");
  const double temporal = std::sqrt(kPi) * std::tgamma(0.5 * (alpha - 1.0)) /
                          (2.0 * kPi * std::tgamma(0.5 * alpha));
  const double spatial = std::tgamma(nu_sp) /
                         (std::pow(4.0 * kPi, 0.5 * dim) * std::tgamma(alpha - 1.0) *
                          std::pow(kappa, 2.0 * (alpha - 1.0) - dim));
  return temporal * spatial / tau;
}

double st_tau_for_variance(double sigma2, double kappa, int alpha, int dim) {
  if (!(sigma2 > 0.0)) throw ConfigInvalid("target variance must be positive");
  return st_slice_variance(1.0, kappa, alpha, dim) / sigma2;
}

Vec sample_st_matern(const Mesh& mesh, double tau, double kappa, int alpha,
                     double dt, int n_steps, RandomStream& rng) {
  const StStepParts parts = st_step_parts(mesh, tau, kappa, alpha, dt, n_steps);
  const Eigen::Index n = mesh.n_nodes();
  const CholeskyFactor step = cholesky(parts.step, Ordering::Amd);
  const Vec ldiag = parts.lumped.diagonal();

  // White-noise load: stacked precision dt * (Ltilde x I).
  Vec x(n * n_steps);
  for (int s = 0; s < n_steps; ++s)
    for (Eigen::Index i = 0; i < n; ++i)
      x[n * s + i] = rng.normal() / std::sqrt(dt * ldiag[i]);

  // Each sweep applies R^-1 in place: x_t = M (x_{t-1} + dt b_t) with x_0 = 0,
  // where M z solves (Ltilde + (dt/tau) B) x = Ltilde z.
  const int sweeps = alpha / 2;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    Vec prev = Vec::Zero(n);
    for (int s = 0; s < n_steps; ++s) {
      Vec rhs = prev + dt * x.segment(n * s, n);
      prev = solve(step, Vec(ldiag.cwiseProduct(rhs)));
      x.segment(n * s, n) = prev;
    }
  }
  x /= std::pow(tau, 0.5 * alpha);
  return x;
}

GmrfPrior condensed_source_prior(const CondensedSystem& cs,
                                 const GmrfPrior& interior_f) {
  const Eigen::Index n2 = cs.keep.size();
  if (interior_f.Q.rows() != n2 || interior_f.mean.size() != n2)
    throw ShapeMismatch("interior prior dimension must match kept node count");

  const Vec linv = inverse_diagonal(cs.reduced.lumped_mass);
  const Mat V = linv.asDiagonal() * Mat(cs.coupling);  // Ltilde22^-1 K21

  GmrfPrior out;
  out.mean = interior_f.mean - V * cs.boundary.value;
  if (!cs.boundary.precision) {
    out.Q = interior_f.Q;
    out.factor = interior_f.factor;
    return out;
  }

  // Random boundary trace: the effective source gains covariance V Qc^-1 V^T;
  // its precision is the Woodbury downdate of the interior precision.
  const Mat QV = interior_f.Q * V;
  Mat S = Mat(*cs.boundary.precision) + V.transpose() * QV;
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite(0);
  const Mat W = llt.matrixL().solve(QV.transpose()).transpose();

  Mat dense = Mat(interior_f.Q) - W * W.transpose();
  out.Q = dense.sparseView(1.0, 1e-300);
  GmrfPrior base = interior_f;
  out.factor = lowrank_update(ensure_factor(base), SpMat(W.sparseView()), -1.0);
  return out;
}

}  // namespace sourcerec
