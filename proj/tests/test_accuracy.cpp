#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sourcerec/accuracy.hpp"

using namespace sourcerec;
using oracles::dense;

namespace {

FemSystem interval_system(double a, double b, int n_nodes, double buffer,
                          double diffusion, double reaction) {
  const Mesh mesh = build_interval_mesh(a, b, n_nodes, buffer);
  PdeCoefficients coeffs;
  coeffs.diffusion = diffusion;
  coeffs.reaction = reaction;
  return assemble(mesh, coeffs);
}

/* Reference basis integrals over the box by centroid quadrature on s^2
   congruent subtriangles per cell (exact for the linear basis except on
   subtriangles straddling the box edge). */
Vec rasterized_quadrature(const Mesh& mesh, const Vec& lo, const Vec& hi,
                          int s) {
  Vec quad = Vec::Zero(mesh.n_nodes());
  for (Eigen::Index c = 0; c < mesh.n_cells(); ++c) {
    const Eigen::Vector2d p0 = mesh.nodes.row(mesh.cells(c, 0)).transpose();
    const Eigen::Vector2d p1 = mesh.nodes.row(mesh.cells(c, 1)).transpose();
    const Eigen::Vector2d p2 = mesh.nodes.row(mesh.cells(c, 2)).transpose();
    const Eigen::Vector2d e1 = p1 - p0;
    const Eigen::Vector2d e2 = p2 - p0;
    const double area = 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
    const double sub_area = area / (s * s);
    const double step = 1.0 / s;
    for (int a = 0; a < s; ++a) {
      for (int b = 0; b + a < s; ++b) {
        for (int kind = 0; kind < 2; ++kind) {
          if (kind == 1 && a + b > s - 2) continue;
          const double off = kind == 0 ? step / 3.0 : 2.0 * step / 3.0;
          const double x = a * step + off;
          const double y = b * step + off;
          const Eigen::Vector2d pt = p0 + x * e1 + y * e2;
          const bool in = pt.x() >= lo[0] && pt.x() <= hi[0] &&
                          pt.y() >= lo[1] && pt.y() <= hi[1];
          if (!in) continue;
          const double l0 = 1.0 - x - y;
          quad[mesh.cells(c, 0)] += sub_area * l0;
          quad[mesh.cells(c, 1)] += sub_area * x;
          quad[mesh.cells(c, 2)] += sub_area * y;
        }
      }
    }
  }
  return quad;
}

SpMat sparse_identity(Eigen::Index n) {
  SpMat eye(n, n);
  eye.setIdentity();
  return eye;
}

/* Dense evaluation of -1/2 c tr(W P S G S P^T W)/tr(W P S P^T W). */
double dense_slope(const Mat& sigma, const Mat& pattern, const Vec& fraction,
                   double coeff, const Mat* push) {
  const Mat w = fraction.asDiagonal();
  Mat p = Mat::Identity(sigma.rows(), sigma.cols());
  if (push != nullptr) p = *push;
  const double numer =
      (w * p * sigma * pattern * sigma * p.transpose() * w).trace();
  const double denom = (w * p * sigma * p.transpose() * w).trace();
  return -0.5 * coeff * numer / denom;
}

}  // namespace

TEST_CASE("interior weights clip hat functions exactly on a buffered interval") {
  /* nodes -5,-3,...,15 with h=2; region [0,10] */
  const Mesh mesh = build_interval_mesh(0.0, 10.0, 11, 5.0);
  const InteriorWeights w = interior_weights(mesh);

  CHECK(w.volume == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(w.mass == doctest::Approx(5.0).epsilon(1e-12));

  auto node_at = [&](double x) {
    for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i)
      if (std::abs(mesh.nodes(i, 0) - x) < 1e-9) return i;
    REQUIRE(false);
    return Eigen::Index{0};
  };

  CHECK(w.quadrature[node_at(1.0)] == doctest::Approx(1.75).epsilon(1e-12));
  CHECK(w.fraction[node_at(1.0)] == doctest::Approx(0.875).epsilon(1e-12));
  CHECK(w.quadrature[node_at(-1.0)] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(w.fraction[node_at(-1.0)] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(w.fraction[node_at(5.0)] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.fraction[node_at(-5.0)] == 0.0);
  CHECK(w.fraction[node_at(15.0)] == 0.0);
  CHECK(w.fraction.minCoeff() >= 0.0);
  CHECK(w.fraction.maxCoeff() <= 1.0);

  /* the diagonal matrix mirrors the fraction vector */
  for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i)
    CHECK(w.I_int.coeff(i, i) == doctest::Approx(w.fraction[i]).epsilon(1e-14));
}

TEST_CASE("interior weights are all-ones when the box spans the mesh") {
  const Mesh mesh = build_interval_mesh(0.0, 10.0, 11, 5.0);
  Vec lo(1), hi(1);
  lo[0] = -5.0;
  hi[0] = 15.0;
  const InteriorWeights w = interior_weights(mesh, lo, hi);
  CHECK(w.fraction.minCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.volume == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(w.mass == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("rectangle weights integrate to the region area and match a raster") {
  const Mesh mesh = build_rect_mesh(0.0, 4.0, 0.0, 3.0, 9, 8, 1.0);
  const InteriorWeights w = interior_weights(mesh);

  CHECK(w.volume == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(w.fraction.minCoeff() >= 0.0);
  CHECK(w.fraction.maxCoeff() <= 1.0 + 1e-14);

  /* a node well inside the region keeps its whole basis function */
  Eigen::Index deep = -1;
  for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i)
    if (mesh.nodes(i, 0) > 1.0 && mesh.nodes(i, 0) < 3.0 &&
        mesh.nodes(i, 1) > 1.0 && mesh.nodes(i, 1) < 2.0)
      deep = i;
  REQUIRE(deep >= 0);
  CHECK(w.fraction[deep] == doctest::Approx(1.0).epsilon(1e-12));

  /* scale() grants slivers the raster's own absolute resolution limit */
  const Vec oracle =
      rasterized_quadrature(mesh, mesh.domain_lo, mesh.domain_hi, 256);
  for (Eigen::Index i = 0; i < mesh.n_nodes(); ++i) {
    if (oracle[i] < 1e-3 && w.quadrature[i] < 1e-3) continue;
    CHECK(w.quadrature[i] ==
          doctest::Approx(oracle[i]).epsilon(0.01).scale(0.01));
  }
}

TEST_CASE("empirical error is a clipped quadrature of the nodal difference") {
  const Mesh mesh = build_interval_mesh(0.0, 10.0, 21, 4.0);
  const InteriorWeights w = interior_weights(mesh);
  RandomStream rng(3);
  const Vec truth = rng.normal_vector(mesh.n_nodes());

  CHECK(l2_error_empirical(truth, truth, w) == 0.0);

  const double c = 0.8;
  const Vec shifted = truth.array() + c;
  CHECK(l2_error_empirical(truth, shifted, w) ==
        doctest::Approx(c * std::sqrt(w.volume)).epsilon(1e-12));

  PosteriorGaussian post;
  post.mean = shifted;
  CHECK(l2_error_empirical(truth, post, w) ==
        doctest::Approx(l2_error_empirical(truth, shifted, w)).epsilon(1e-14));

  const Vec bad = Vec::Zero(mesh.n_nodes() + 1);
  CHECK_THROWS_AS(l2_error_empirical(truth, bad, w), ShapeMismatch);
}

TEST_CASE("empirical error matches a fine midpoint rule on a smooth field") {
  const int n = 25;
  const Mesh mesh = build_interval_mesh(0.0, 10.0, n, 0.0);
  const InteriorWeights w = interior_weights(mesh);

  Vec diff(n);
  for (int i = 0; i < n; ++i)
    diff[i] = std::sin(M_PI * mesh.nodes(i, 0) / 10.0);

  /* midpoint rule over 10 subintervals per cell on the piecewise-linear
     interpolant of the nodal difference */
  double integral = 0.0;
  for (int c = 0; c + 1 < n; ++c) {
    const double xa = mesh.nodes(c, 0), xb = mesh.nodes(c + 1, 0);
    const double h = (xb - xa) / 10.0;
    for (int k = 0; k < 10; ++k) {
      const double t = (k + 0.5) / 10.0;
      const double v = (1.0 - t) * diff[c] + t * diff[c + 1];
      integral += h * v * v;
    }
  }
  const double expected = std::sqrt(integral);
  const double got = l2_error_empirical(diff, Vec::Zero(n), w);
  CHECK(got == doctest::Approx(expected).epsilon(0.01));
}

TEST_CASE("trace approximation reduces to closed forms") {
  /* identity covariance, no buffer: sqrt(V) */
  const Mesh mesh = build_interval_mesh(0.0, 6.0, 7, 0.0);
  const InteriorWeights w = interior_weights(mesh);
  const CholeskyFactor eye = cholesky(sparse_identity(7));
  CHECK(l2_error_approx(eye, w) ==
        doctest::Approx(std::sqrt(6.0)).epsilon(1e-12));

  /* diagonal covariance against the explicit sum */
  const Mesh buffered = build_interval_mesh(0.0, 10.0, 15, 3.0);
  const InteriorWeights wb = interior_weights(buffered);
  RandomStream rng(11);
  Vec q(buffered.n_nodes());
  for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = 0.5 + rng.uniform();
  SpMat diag(q.size(), q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i)
    diag.insert(i, i) = q[i];
  const CholeskyFactor fd = cholesky(diag);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i)
    sum += wb.fraction[i] * wb.fraction[i] / q[i];
  CHECK(l2_error_approx(fd, wb) ==
        doctest::Approx(std::sqrt(wb.volume / wb.mass * sum)).epsilon(1e-12));
}

TEST_CASE("trace approximation and local slope match dense evaluations") {
  const FemSystem sys = interval_system(0.0, 10.0, 21, 3.0, 0.6, 0.25);
  const InteriorWeights w = interior_weights(sys.mesh);
  GmrfPrior f_prior = matern_precision(sys, MaternHyper{2.0, 4.0, 2});
  const GmrfPrior u_prior = steady_solution_prior(sys, f_prior);
  const SpMat push = source_pushforward(sys);
  const Mat push_d = dense(push);
  const Mat pattern_d = dense(SpMat(w.I_int));

  const double sigma2 = 5.0;
  const double m_rows = (w.fraction.array() > 0.0).count();

  for (const double zeta : {-1.0, 1.0, 3.0}) {
    const double coeff = std::exp(zeta) / (m_rows * sigma2);
    const SpMat post_q = u_prior.Q + coeff * w.I_int;
    const CholeskyFactor factor = cholesky(post_q);
    const Mat sigma = dense(post_q).inverse();

    /* approximation against the dense trace */
    const Mat iwsi = Mat(w.fraction.asDiagonal()) * sigma *
                     Mat(w.fraction.asDiagonal());
    const double tr_u = iwsi.trace();
    CHECK(l2_error_approx(factor, w) ==
          doctest::Approx(std::sqrt(w.volume / w.mass * tr_u))
              .epsilon(1e-10));
    const Mat pushed = Mat(w.fraction.asDiagonal()) * push_d * sigma *
                       push_d.transpose() * Mat(w.fraction.asDiagonal());
    CHECK(l2_error_approx(factor, w, &push) ==
          doctest::Approx(std::sqrt(w.volume / w.mass * pushed.trace()))
              .epsilon(1e-10));

    /* local slope against the dense trace ratio */
    const double got_u = local_convergence_slope(
        u_prior, sys, w.I_int, w, zeta, m_rows, sigma2, ErrorTarget::kSolution);
    const double want_u = dense_slope(sigma, pattern_d, w.fraction, coeff,
                                      nullptr);
    CHECK(got_u == doctest::Approx(want_u).epsilon(1e-10));

    const double got_f = local_convergence_slope(
        u_prior, sys, w.I_int, w, zeta, m_rows, sigma2, ErrorTarget::kSource);
    const double want_f =
        dense_slope(sigma, pattern_d, w.fraction, coeff, &push_d);
    CHECK(got_f == doctest::Approx(want_f).epsilon(1e-10));
  }
}

TEST_CASE("local slope equals the finite difference of the implemented error") {
  const FemSystem sys = interval_system(0.0, 10.0, 41, 3.0, 0.75, 0.2);
  const InteriorWeights w = interior_weights(sys.mesh);
  GmrfPrior f_prior = matern_precision(sys, MaternHyper{2.0, 10.0, 2});
  const GmrfPrior u_prior = steady_solution_prior(sys, f_prior);
  const SpMat push = source_pushforward(sys);
  const double sigma2 = 5.0;
  const double m_rows = (w.fraction.array() > 0.0).count();

  const auto log_err = [&](double zeta, const SpMat* p) {
    const double coeff = std::exp(zeta) / (m_rows * sigma2);
    const CholeskyFactor factor =
        cholesky(SpMat(u_prior.Q + coeff * w.I_int));
    return std::log(l2_error_approx(factor, w, p));
  };

  const double h = 1e-3;
  for (const double zeta : {-2.0, 0.0, 2.0, 4.0}) {
    const double fd_u = (log_err(zeta + h, nullptr) - log_err(zeta - h, nullptr)) / (2 * h);
    const double got_u = local_convergence_slope(
        u_prior, sys, w.I_int, w, zeta, m_rows, sigma2, ErrorTarget::kSolution);
    CHECK(std::abs(got_u - fd_u) < 1e-4);

    const double fd_f = (log_err(zeta + h, &push) - log_err(zeta - h, &push)) / (2 * h);
    const double got_f = local_convergence_slope(
        u_prior, sys, w.I_int, w, zeta, m_rows, sigma2, ErrorTarget::kSource);
    CHECK(std::abs(got_f - fd_f) < 1e-4);
  }
}

TEST_CASE("local slope is bounded and vanishes without data") {
  const FemSystem sys = interval_system(0.0, 10.0, 41, 3.0, 0.75, 0.2);
  const InteriorWeights w = interior_weights(sys.mesh);
  GmrfPrior f_prior = matern_precision(sys, MaternHyper{2.0, 10.0, 2});
  const GmrfPrior u_prior = steady_solution_prior(sys, f_prior);
  const double m_rows = (w.fraction.array() > 0.0).count();

  for (const double zeta : {-6.0, -3.0, 0.0, 3.0, 6.0, 9.0}) {
    for (const ErrorTarget target :
         {ErrorTarget::kSolution, ErrorTarget::kSource}) {
      const double s = local_convergence_slope(u_prior, sys, w.I_int, w, zeta,
                                               m_rows, 5.0, target);
      CHECK(s <= 0.0);
      CHECK(s >= -0.52);
    }
  }

  const double flat = local_convergence_slope(
      u_prior, sys, w.I_int, w, -40.0, m_rows, 5.0, ErrorTarget::kSolution);
  CHECK(std::abs(flat) < 1e-10);
}

TEST_CASE("slope approaches -1/2 under full observation with no buffer") {
  /* coarse mesh and mild dynamics keep the prior spectrum far below the
     1e4 data weight, so the asymptote is already reached there */
  const FemSystem sys = interval_system(0.0, 10.0, 11, 0.0, 0.3, 0.3);
  const InteriorWeights w = interior_weights(sys.mesh);
  REQUIRE(w.fraction.minCoeff() == doctest::Approx(1.0));
  GmrfPrior f_prior = matern_precision(sys, MaternHyper{3.0, 1.0, 2});
  const GmrfPrior u_prior = steady_solution_prior(sys, f_prior);
  const SpMat eye = sparse_identity(sys.dim());
  const double n = static_cast<double>(sys.dim());

  for (const double weight : {1e4, 1e6}) {
    const double zeta = std::log(weight * n);  // exp(zeta)/(n*1) = weight
    for (const ErrorTarget target :
         {ErrorTarget::kSolution, ErrorTarget::kSource}) {
      const double s =
          local_convergence_slope(u_prior, sys, eye, w, zeta, n, 1.0, target);
      CHECK(std::abs(s + 0.5) < 0.02);
    }
  }
}

TEST_CASE("convergence sweep tracks its own trace predictions") {
  SweepCase spec;
  spec.sys = interval_system(0.0, 10.0, 141, 4.0, 0.75, 0.2);
  spec.source_hyper = MaternHyper{2.0, 10.0, 2};
  spec.sigma2_eps = 5.0;
  spec.workers = 3;
  spec.seed = 7;
  const std::vector<double> sizes{1, 3, 10, 32, 100, 316, 1000};

  const SweepResult res = convergence_sweep(spec, sizes, 30);

  for (const ErrorCurve* curve : {&res.solution, &res.source}) {
    REQUIRE(curve->sample_sizes.size() == 7);
    for (Eigen::Index i = 0; i < 7; ++i) {
      CHECK(curve->sample_sizes[i] == doctest::Approx(sizes[(size_t)i]));
      CHECK(std::isfinite(curve->empirical[i]));
      CHECK(curve->empirical[i] >= 0.0);
      CHECK(curve->approx[i] > 0.0);
      CHECK(curve->slope[i] <= 0.0);
      CHECK(curve->slope[i] >= -0.52);
    }
    /* nonincreasing up to one Monte Carlo inversion */
    int inversions = 0;
    for (Eigen::Index i = 1; i < 7; ++i)
      if (curve->empirical[i] > curve->empirical[i - 1]) ++inversions;
    CHECK(inversions <= 1);
    /* approximation validity for N >= 10 */
    for (Eigen::Index i = 2; i < 7; ++i) {
      const double rel =
          std::abs(curve->empirical[i] - curve->approx[i]) / curve->approx[i];
      CHECK(rel <= 0.10);
    }
  }

  /* the solution is recovered faster than the source at high density */
  CHECK(res.solution.slope[6] < res.source.slope[6]);
  /* and estimated much more accurately */
  CHECK(res.solution.empirical[6] < res.source.empirical[6]);
}

TEST_CASE("dense data beats the prior-only error") {
  SweepCase spec;
  spec.sys = interval_system(0.0, 10.0, 101, 3.0, 0.75, 0.2);
  spec.source_hyper = MaternHyper{2.0, 10.0, 2};
  spec.sigma2_eps = 1e-4;
  spec.workers = 1;
  spec.seed = 21;

  const SweepResult res = convergence_sweep(spec, {200.0}, 10);

  const InteriorWeights w = interior_weights(spec.sys.mesh);
  GmrfPrior f_prior = matern_precision(spec.sys, spec.source_hyper);
  GmrfPrior u_prior = steady_solution_prior(spec.sys, f_prior);
  const double prior_u = l2_error_approx(ensure_factor(u_prior), w);
  const SpMat push = source_pushforward(spec.sys);
  const double prior_f = l2_error_approx(ensure_factor(u_prior), w, &push);

  CHECK(res.solution.empirical[0] < prior_u);
  CHECK(res.source.empirical[0] < prior_f);
}

TEST_CASE("sweep can integrate over the full extent when asked") {
  SweepCase spec;
  spec.sys = interval_system(0.0, 10.0, 61, 3.0, 0.75, 0.2);
  spec.source_hyper = MaternHyper{2.0, 10.0, 2};
  spec.sigma2_eps = 5.0;
  spec.workers = 1;

  const SweepResult buffered = convergence_sweep(spec, {20.0}, 3);
  spec.no_buffer = true;
  const SweepResult full = convergence_sweep(spec, {20.0}, 3);

  CHECK(std::isfinite(full.solution.approx[0]));
  /* integrating over the larger region changes the error level */
  CHECK(full.solution.approx[0] != buffered.solution.approx[0]);
}

TEST_CASE("sweep validates its configuration") {
  SweepCase spec;
  spec.sys = interval_system(0.0, 10.0, 31, 2.0, 0.75, 0.2);
  spec.source_hyper = MaternHyper{2.0, 10.0, 2};
  spec.sigma2_eps = 5.0;

  CHECK_THROWS_AS(convergence_sweep(spec, {}, 5), ConfigInvalid);
  CHECK_THROWS_AS(convergence_sweep(spec, {0.0, 5.0}, 5), ConfigInvalid);
  CHECK_THROWS_AS(convergence_sweep(spec, {10.0, 5.0}, 5), ConfigInvalid);
  CHECK_THROWS_AS(convergence_sweep(spec, {5.0}, 0), ConfigInvalid);

  SweepCase bad_noise = spec;
  bad_noise.sigma2_eps = 0.0;
  CHECK_THROWS_AS(convergence_sweep(bad_noise, {5.0}, 3), ConfigInvalid);

  SweepCase rect = spec;
  rect.sys = assemble(build_rect_mesh(0, 2, 0, 2, 5, 5, 0.5),
                      PdeCoefficients{0.75, 0.2, {}});
  CHECK_THROWS_AS(convergence_sweep(rect, {5.0}, 3), ConfigInvalid);
}

TEST_CASE("log-log slope fit recovers an exact power law") {
  Vec sizes(6), err(6);
  for (int i = 0; i < 6; ++i) {
    sizes[i] = std::pow(10.0, 1 + 0.8 * i);
    err[i] = 3.0 * std::pow(sizes[i], -0.37);
  }
  CHECK(fit_loglog_slope(sizes, err, 10.0, 1e5) ==
        doctest::Approx(-0.37).epsilon(1e-12));

  /* points outside the window are ignored */
  Vec sizes2(7), err2(7);
  sizes2 << 5.0, sizes;
  err2 << 100.0, err;
  CHECK(fit_loglog_slope(sizes2, err2, 10.0, 1e5) ==
        doctest::Approx(-0.37).epsilon(1e-12));

  CHECK_THROWS_AS(fit_loglog_slope(sizes, err, 1e6, 1e7), ConfigInvalid);
  Vec short_err(5);
  short_err.setOnes();
  CHECK_THROWS_AS(fit_loglog_slope(sizes, short_err, 10.0, 1e5), ShapeMismatch);
}
