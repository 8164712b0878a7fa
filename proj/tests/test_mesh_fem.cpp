#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "sourcerec/fem.hpp"
#include "sourcerec/gmrf.hpp"
#include "sourcerec/io.hpp"
#include "sourcerec/mesh.hpp"

using namespace sourcerec;

namespace {
constexpr double kPi = 3.14159265358979323846;

Mesh unit_triangle() {
  Mesh m;
  m.dimension = 2;
  m.nodes.resize(3, 2);
  m.nodes << 0, 0, 1, 0, 0, 1;
  m.cells.resize(1, 3);
  m.cells << 0, 1, 2;
  m.interior = {1, 1, 1};
  m.boundary_nodes.resize(0);
  m.domain_lo = Vec::Zero(2);
  m.domain_hi = Vec::Ones(2);
  return m;
}
}  // namespace

TEST_CASE("interval mesh basic examples") {
  {
    const Mesh m = build_interval_mesh(0.0, 1.0, 3, 0.0);
    REQUIRE(m.n_nodes() == 3);
    CHECK(m.nodes(0, 0) == doctest::Approx(0.0));
    CHECK(m.nodes(1, 0) == doctest::Approx(0.5));
    CHECK(m.nodes(2, 0) == doctest::Approx(1.0));
    for (char f : m.interior) CHECK(f == 1);
    CHECK(m.n_cells() == 2);
  }
  {
    const Mesh m = build_interval_mesh(0.0, 10.0, 11, 5.0);
    REQUIRE(m.n_nodes() == 11);
    CHECK(m.nodes(0, 0) == doctest::Approx(-5.0));
    CHECK(m.nodes(10, 0) == doctest::Approx(15.0));
    int n_int = 0;
    for (Eigen::Index i = 0; i < 11; ++i) {
      const bool inside = m.nodes(i, 0) >= -1e-12 && m.nodes(i, 0) <= 10.0 + 1e-12;
      CHECK(static_cast<bool>(m.interior[static_cast<std::size_t>(i)]) == inside);
      n_int += m.interior[static_cast<std::size_t>(i)];
    }
    CHECK(n_int == 5);
  }
  {
    const Mesh m = build_interval_mesh(0.0, 50.0, 751, 15.0);
    REQUIRE(m.n_nodes() == 751);
    CHECK(m.nodes(0, 0) == doctest::Approx(-15.0));
    CHECK(m.nodes(750, 0) == doctest::Approx(65.0));
    for (Eigen::Index i = 1; i < 751; ++i) CHECK(m.nodes(i, 0) > m.nodes(i - 1, 0));
    CHECK(m.boundary_nodes.size() == 2);
  }
  CHECK_THROWS_AS(build_interval_mesh(1.0, 0.0, 5, 0.0), InvalidExtent);
  CHECK_THROWS_AS(build_interval_mesh(0.0, 1.0, 1, 0.0), InvalidExtent);
  CHECK_THROWS_AS(build_interval_mesh(0.0, 1.0, 5, -1.0), InvalidExtent);
}

TEST_CASE("rectangle mesh counting and area") {
  {
    const Mesh m = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 2, 2, 0.0);
    CHECK(m.n_nodes() == 4);
    CHECK(m.n_cells() == 2);
  }
  {
    const Mesh m = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 3, 3, 0.0);
    CHECK(m.n_nodes() == 9);
    CHECK(m.n_cells() == 8);
  }
  for (auto [nx, ny, buf] : {std::tuple{4, 3, 0.5}, std::tuple{7, 5, 0.0},
                             std::tuple{2, 9, 1.25}}) {
    const Mesh m = build_rect_mesh(0.0, 2.0, -1.0, 1.0, nx, ny, buf);
    double area = 0.0;
    for (Eigen::Index c = 0; c < m.n_cells(); ++c) {
      const Eigen::Vector2d p0 = m.nodes.row(m.cells(c, 0)),
                            p1 = m.nodes.row(m.cells(c, 1)),
                            p2 = m.nodes.row(m.cells(c, 2));
      const double signed2 =
          (p1 - p0).x() * (p2 - p0).y() - (p2 - p0).x() * (p1 - p0).y();
      CHECK(signed2 > 0.0);  // consistent orientation
      area += 0.5 * signed2;
    }
    const double expect = (2.0 + 2 * buf) * (2.0 + 2 * buf);
    CHECK(area == doctest::Approx(expect).epsilon(1e-12));
    // hull nodes flagged as boundary
    for (Eigen::Index k = 0; k < m.boundary_nodes.size(); ++k) {
      const auto r = m.nodes.row(m.boundary_nodes[k]);
      const bool on_hull =
          std::abs(r.x() - m.nodes.col(0).minCoeff()) < 1e-12 ||
          std::abs(r.x() - m.nodes.col(0).maxCoeff()) < 1e-12 ||
          std::abs(r.y() - m.nodes.col(1).minCoeff()) < 1e-12 ||
          std::abs(r.y() - m.nodes.col(1).maxCoeff()) < 1e-12;
      CHECK(on_hull);
    }
  }
}

TEST_CASE("point location and barycentric weights") {
  const Mesh m1 = build_interval_mesh(0.0, 4.0, 5, 0.0);
  const CellHit h = locate(m1, Vec::Constant(1, 2.5));
  CHECK(h.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  const double x = h.weights[0] * m1.nodes(m1.cells(h.cell, 0), 0) +
                   h.weights[1] * m1.nodes(m1.cells(h.cell, 1), 0);
  CHECK(x == doctest::Approx(2.5).epsilon(1e-14));
  CHECK_THROWS_AS(locate(m1, Vec::Constant(1, 4.5)), LocationOutsideMesh);

  const Mesh m2 = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 4, 4, 0.0);
  Vec p(2);
  p << 0.37, 0.61;
  const CellHit h2 = locate(m2, p);
  CHECK(h2.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
  Eigen::Vector2d rec = Eigen::Vector2d::Zero();
  for (int k = 0; k < 3; ++k)
    rec += h2.weights[k] * m2.nodes.row(m2.cells(h2.cell, k)).transpose();
  CHECK(rec.x() == doctest::Approx(0.37).epsilon(1e-13));
  CHECK(rec.y() == doctest::Approx(0.61).epsilon(1e-13));
  p << 1.2, 0.5;
  CHECK_THROWS_AS(locate(m2, p), LocationOutsideMesh);
}

TEST_CASE("1-D assembly matches hand integrals") {
  const Mesh m = build_interval_mesh(0.0, 1.0, 11, 0.0);
  const double h = 0.1;
  PdeCoefficients c;
  c.diffusion = 0.75;
  c.reaction = 0.0;
  const FemSystem sys = assemble(m, c);

  for (int i : {3, 5, 7}) {
    CHECK(sys.stiffness.coeff(i, i) ==
          doctest::Approx(0.75 * 2.0 / h).epsilon(1e-12));
    CHECK(sys.stiffness.coeff(i, i - 1) ==
          doctest::Approx(-0.75 / h).epsilon(1e-12));
    CHECK(sys.stiffness.coeff(i, i + 1) ==
          doctest::Approx(-0.75 / h).epsilon(1e-12));
    CHECK(sys.mass.coeff(i, i) == doctest::Approx(4.0 * h / 6.0).epsilon(1e-12));
    CHECK(sys.mass.coeff(i, i - 1) == doctest::Approx(h / 6.0).epsilon(1e-12));
    CHECK(sys.lumped_mass.coeff(i, i) == doctest::Approx(h).epsilon(1e-12));
  }
  CHECK(sys.lumped_mass.coeff(0, 0) == doctest::Approx(h / 2).epsilon(1e-12));
  CHECK(sys.lumped_mass.coeff(10, 10) == doctest::Approx(h / 2).epsilon(1e-12));

  // with v = 0, r = 0: Neumann rows sum to ~0
  for (Eigen::Index i = 0; i < sys.dim(); ++i)
    CHECK(std::abs(sys.stiffness.row(i).sum()) < 1e-10 * (2.0 / h));
}

TEST_CASE("1-D constant advection assembles the centered conservative row") {
  const Mesh m = build_interval_mesh(0.0, 1.0, 11, 0.0);
  PdeCoefficients c;
  c.diffusion = 0.0;
  c.advection = Mat::Constant(11, 1, 0.8);
  const FemSystem sys = assemble(m, c);
  for (int i : {2, 5, 8}) {
    CHECK(sys.stiffness.coeff(i, i - 1) == doctest::Approx(-0.4).epsilon(1e-12));
    CHECK(std::abs(sys.stiffness.coeff(i, i)) < 1e-14);
    CHECK(sys.stiffness.coeff(i, i + 1) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(std::abs(sys.advection_part.row(i).sum()) < 1e-12);
  }
  // element-level values agree with -int phi_i' v phi_j on the end element
  CHECK(sys.stiffness.coeff(0, 0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(sys.stiffness.coeff(0, 1) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("reaction equals a mass term exactly") {
  const Mesh m = build_interval_mesh(0.0, 2.0, 9, 0.5);
  PdeCoefficients c;
  c.diffusion = 0.0;
  c.reaction = 0.2;
  const FemSystem sys = assemble(m, c);
  const Mat K = oracles::dense(sys.stiffness);
  const Mat rL = 0.2 * oracles::dense(sys.mass);
  CHECK((K - rL).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("coefficient recomposition matches fresh assembly") {
  const Mesh m = build_interval_mesh(0.0, 5.0, 21, 1.0);
  PdeCoefficients c;
  c.diffusion = 0.75;
  c.reaction = 0.2;
  c.advection = Mat::Constant(21, 1, -0.3);
  const FemSystem base = assemble(m, c);
  c.diffusion = 0.075;
  c.reaction = 0.02;
  const FemSystem fresh = assemble(m, c);
  const FemSystem recomposed = with_coefficients(base, 0.075, 0.02);
  CHECK(oracles::rel_err(oracles::dense(recomposed.stiffness),
                         oracles::dense(fresh.stiffness)) < 1e-15);
}

TEST_CASE("2-D single-triangle hand values") {
  const Mesh m = unit_triangle();
  PdeCoefficients c;
  c.diffusion = 1.0;
  c.advection = Mat::Zero(3, 2);
  c.advection.col(0).setConstant(1.0);  // v = (1, 0)
  const FemSystem sys = assemble(m, c);

  CHECK(sys.diffusion_part.coeff(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(sys.diffusion_part.coeff(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(sys.diffusion_part.coeff(2, 2) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(sys.diffusion_part.coeff(0, 1) == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(sys.diffusion_part.coeff(1, 2) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(sys.mass.coeff(0, 0) == doctest::Approx(1.0 / 12).epsilon(1e-14));
  CHECK(sys.mass.coeff(0, 1) == doctest::Approx(1.0 / 24).epsilon(1e-14));
  // -int grad(phi_0).(v phi_j) = int phi_j dx / 1 (v=(1,0), dphi0/dx = -1)
  for (int j = 0; j < 3; ++j)
    CHECK(sys.advection_part.coeff(0, j) ==
          doctest::Approx(1.0 / 6).epsilon(1e-13));
  CHECK(sys.lumped_mass.coeff(0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-14));
}

TEST_CASE("2-D assembly conservation invariants") {
  const Mesh m = build_rect_mesh(0.0, 2.0, 0.0, 1.0, 7, 5, 0.25);
  PdeCoefficients c;
  c.diffusion = 0.4;
  c.reaction = 0.0;
  c.advection = Mat::Zero(m.n_nodes(), 2);
  c.advection.col(0).setConstant(0.6);
  c.advection.col(1).setConstant(-0.2);
  const FemSystem sys = assemble(m, c);

  const double area = (2.0 + 0.5) * (1.0 + 0.5);
  double lump_total = 0.0, mass_total = 0.0;
  for (Eigen::Index i = 0; i < sys.dim(); ++i) {
    lump_total += sys.lumped_mass.coeff(i, i);
    mass_total += sys.mass.row(i).sum();
    CHECK(sys.lumped_mass.coeff(i, i) ==
          doctest::Approx(sys.mass.row(i).sum()).epsilon(1e-12));
    CHECK(sys.lumped_mass.coeff(i, i) > 0.0);
  }
  CHECK(lump_total == doctest::Approx(area).epsilon(1e-10));
  CHECK(mass_total == doctest::Approx(area).epsilon(1e-10));

  // diffusion part exactly symmetric
  const Mat D = oracles::dense(sys.diffusion_part);
  CHECK((D - D.transpose()).cwiseAbs().maxCoeff() == 0.0);

  // constant-v advection: interior row sums vanish
  std::vector<char> on_hull(static_cast<std::size_t>(m.n_nodes()), 0);
  for (Eigen::Index k = 0; k < m.boundary_nodes.size(); ++k)
    on_hull[static_cast<std::size_t>(m.boundary_nodes[k])] = 1;
  for (Eigen::Index i = 0; i < sys.dim(); ++i)
    if (!on_hull[static_cast<std::size_t>(i)])
      CHECK(std::abs(sys.advection_part.row(i).sum()) < 1e-12);
}

TEST_CASE("manufactured solution converges at second order") {
  const double D = 0.7, v = 0.3, r = 0.5;
  auto solve_err = [&](int n_nodes) {
    const Mesh m = build_interval_mesh(0.0, 1.0, n_nodes, 0.0);
    PdeCoefficients c;
    c.diffusion = D;
    c.reaction = r;
    c.advection = Mat::Constant(n_nodes, 1, v);
    const FemSystem sys = assemble(m, c);
    BoundaryValue bc;
    bc.value = Vec::Zero(2);  // sin(pi s) vanishes at both ends
    const CondensedSystem cs = apply_dirichlet(sys, bc);
    Vec f(cs.keep.size());
    for (Eigen::Index k = 0; k < cs.keep.size(); ++k) {
      const double s = m.nodes(cs.keep[k], 0);
      f[k] = D * kPi * kPi * std::sin(kPi * s) + v * kPi * std::cos(kPi * s) +
             r * std::sin(kPi * s);
    }
    const Vec u2 = condensed_solve(cs, f);
    double err = 0.0;
    for (Eigen::Index k = 0; k < cs.keep.size(); ++k)
      err = std::max(err,
                     std::abs(u2[k] - std::sin(kPi * m.nodes(cs.keep[k], 0))));
    return err;
  };
  const double e1 = solve_err(33), e2 = solve_err(65), e3 = solve_err(129);
  CHECK(e1 / e2 >= 3.5);
  CHECK(e2 / e3 >= 3.5);
}

TEST_CASE("Dirichlet condensation matches the dense full-system oracle") {
  const Mesh m = build_interval_mesh(0.0, 1.0, 5, 0.0);
  PdeCoefficients c;
  c.diffusion = 1.0;
  c.reaction = 0.2;
  const FemSystem sys = assemble(m, c);
  BoundaryValue bc;
  bc.value = Vec::Ones(2);
  const CondensedSystem cs = apply_dirichlet(sys, bc);

  RandomStream rng(7);
  Vec f = rng.normal_vector(5);
  Vec f2(cs.keep.size());
  for (Eigen::Index k = 0; k < cs.keep.size(); ++k) f2[k] = f[cs.keep[k]];
  const Vec full = expand_condensed(cs, condensed_solve(cs, f2), 5);

  Mat A = oracles::dense(sys.stiffness);
  Vec b = oracles::dense(sys.lumped_mass) * f;
  for (int bd : {0, 4}) {
    A.row(bd).setZero();
    A(bd, bd) = 1.0;
    b[bd] = 1.0;
  }
  const Vec oracle = A.fullPivLu().solve(b);
  CHECK((full - oracle).cwiseAbs().maxCoeff() < 1e-10);

  // c = 0 gives a zero offset and the plain submatrix system
  BoundaryValue bc0;
  bc0.value = Vec::Zero(2);
  const CondensedSystem cs0 = apply_dirichlet(sys, bc0);
  CHECK(cs0.rhs_offset.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Gaussian boundary trace inflates the condensed covariance correctly") {
  const Mesh m = build_interval_mesh(0.0, 2.0, 20, 0.0);
  PdeCoefficients c;
  c.diffusion = 0.8;
  c.reaction = 0.3;
  const FemSystem sys = assemble(m, c);

  SpMat qc(2, 2);
  qc.setIdentity();
  BoundaryValue bc;
  bc.value = Vec::Constant(2, 0.5);
  bc.precision = qc;
  const CondensedSystem cs = apply_dirichlet(sys, bc);

  MaternHyper hyper;
  hyper.range = 0.6;
  hyper.variance = 2.0;
  GmrfPrior interior = matern_precision(cs.reduced, hyper);
  const GmrfPrior eff = condensed_source_prior(cs, interior);

  // factor attached by the low-rank downdate reconstructs the stored matrix
  REQUIRE(eff.factor.has_value());
  CHECK(oracles::rel_err(oracles::reconstruct(*eff.factor),
                         oracles::dense(eff.Q)) < 1e-8);

  const Mat K22 = oracles::dense(cs.reduced.stiffness);
  const Mat L22 = oracles::dense(cs.reduced.lumped_mass);
  const Mat K21 = oracles::dense(cs.coupling);
  const Mat Sf = oracles::dense(interior.Q).inverse();
  const Mat inner = L22 * Sf * L22 + K21 * Mat::Identity(2, 2) * K21.transpose();
  const Mat cov_oracle =
      K22.inverse() * inner * K22.inverse().transpose();

  const Mat cov_impl = K22.inverse() * L22 * oracles::dense(eff.Q).inverse() *
                       L22 * K22.inverse().transpose();
  CHECK(oracles::rel_err(cov_impl, cov_oracle) < 1e-8);

  // effective mean shifts by -Ltilde22^-1 K21 c
  const Vec shift = L22.inverse() * K21 * bc.value;
  CHECK((eff.mean + shift).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mesh CSV round trip preserves coordinates and flags") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sourcerec_mesh_csv";
  fs::create_directories(dir);
  const Mesh m = build_rect_mesh(0.0, 1.0, 0.0, 2.0, 4, 5, 0.5);
  write_mesh_csv(m, (dir / "nodes.csv").string(), (dir / "cells.csv").string());
  const CsvTable nodes = read_csv((dir / "nodes.csv").string());
  const CsvTable cells = read_csv((dir / "cells.csv").string());
  REQUIRE(nodes.columns.rows() == m.n_nodes());
  REQUIRE(cells.columns.rows() == m.n_cells());
  for (Eigen::Index i = 0; i < m.n_nodes(); ++i) {
    CHECK(nodes.columns(i, 1) == m.nodes(i, 0));
    CHECK(nodes.columns(i, 2) == m.nodes(i, 1));
    CHECK(nodes.columns(i, 3) ==
          static_cast<double>(m.interior[static_cast<std::size_t>(i)]));
  }
  fs::remove_all(dir);
}

TEST_CASE("assembly shape validation") {
  const Mesh m = build_interval_mesh(0.0, 1.0, 5, 0.0);
  PdeCoefficients c;
  c.advection = Mat::Zero(4, 1);
  CHECK_THROWS_AS(assemble(m, c), ShapeMismatch);
  PdeCoefficients c2;
  c2.diffusion = -1.0;
  CHECK_THROWS_AS(assemble(m, c2), ShapeMismatch);
  const FemSystem sys = assemble(m, PdeCoefficients{});
  BoundaryValue bc;
  bc.value = Vec::Zero(3);
  CHECK_THROWS_AS(apply_dirichlet(sys, bc), ShapeMismatch);
}
