#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "sourcerec/io.hpp"
#include "sourcerec/rng.hpp"
#include "sourcerec/sparse.hpp"

using namespace sourcerec;

TEST_CASE("scalar factor is the square root") {
  SpMat Q(1, 1);
  Q.insert(0, 0) = 4.0;
  const auto f = cholesky(Q);
  CHECK(f.lower.coeff(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(logdet(f) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("factorization residual against dense reconstruction") {
  RandomStream rng(11);
  for (int n : {5, 50, 120, 200}) {
    const SpMat Q = oracles::random_spd(n, 0.05, rng);
    for (Ordering ord : {Ordering::Natural, Ordering::Amd}) {
      const auto f = cholesky(Q, ord);
      CHECK(oracles::rel_err(oracles::reconstruct(f), oracles::dense(Q)) < 1e-9);
      /* structural invariants: lower triangular, sorted rows, diag first > 0 */
      const int* Lp = f.lower.outerIndexPtr();
      const int* Li = f.lower.innerIndexPtr();
      const double* Lx = f.lower.valuePtr();
      for (int j = 0; j < n; ++j) {
        REQUIRE(Lp[j + 1] > Lp[j]);
        CHECK(Li[Lp[j]] == j);
        CHECK(Lx[Lp[j]] > 0.0);
        for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) CHECK(Li[p] > Li[p - 1]);
      }
    }
  }
}

TEST_CASE("solve matches dense inverse and modes compose") {
  RandomStream rng(12);
  const int n = 80;
  const SpMat Q = oracles::random_spd(n, 0.08, rng);
  const Mat Qd = oracles::dense(Q);
  const auto f = cholesky(Q);
  const Vec b = rng.normal_vector(n);
  const Vec x = solve(f, b);
  CHECK(oracles::rel_err(x, Vec(Qd.llt().solve(b))) < 1e-10);
  const Vec composed = solve(f, solve(f, b, SolveMode::LowerOnly), SolveMode::UpperOnly);
  CHECK((composed - x).norm() < 1e-12 * x.norm());
  /* matrix right-hand side */
  Mat B(n, 3);
  for (int c = 0; c < 3; ++c) B.col(c) = rng.normal_vector(n);
  CHECK(oracles::rel_err(Mat(solve(f, B)), Mat(Qd.llt().solve(B))) < 1e-10);
}

TEST_CASE("log determinant matches eigenvalue oracle") {
  RandomStream rng(13);
  for (int n : {10, 60}) {
    const SpMat Q = oracles::random_spd(n, 0.1, rng);
    Eigen::SelfAdjointEigenSolver<Mat> es(oracles::dense(Q));
    const double ref = es.eigenvalues().array().log().sum();
    for (Ordering ord : {Ordering::Natural, Ordering::Amd}) {
      const double got = logdet(cholesky(Q, ord));
      CHECK(std::abs(got - ref) <= 1e-8 * std::abs(ref));
    }
  }
}

TEST_CASE("fill-reducing ordering beats natural on a grid Laplacian") {
  const int side = 31; /* 961 unknowns */
  const int n = side * side;
  std::vector<Triplet> t;
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) {
      const int k = i * side + j;
      t.emplace_back(k, k, 4.1);
      if (i + 1 < side) {
        t.emplace_back(k, k + side, -1.0);
        t.emplace_back(k + side, k, -1.0);
      }
      if (j + 1 < side) {
        t.emplace_back(k, k + 1, -1.0);
        t.emplace_back(k + 1, k, -1.0);
      }
    }
  SpMat Q(n, n);
  Q.setFromTriplets(t.begin(), t.end());
  const auto natural = cholesky(Q, Ordering::Natural);
  const auto amd = cholesky(Q, Ordering::Amd);
  CHECK(2 * amd.lower.nonZeros() <= natural.lower.nonZeros());
  RandomStream rng(14);
  const Vec b = rng.normal_vector(n);
  CHECK(oracles::rel_err(solve(amd, b), solve(natural, b)) < 1e-10);
}

TEST_CASE("indefinite and near-singular inputs raise with the pivot index") {
  SpMat Q(2, 2);
  Q.insert(0, 0) = 1.0;
  Q.insert(1, 0) = 2.0;
  Q.insert(0, 1) = 2.0;
  Q.insert(1, 1) = 1.0;
  CHECK_THROWS_AS(cholesky(Q, Ordering::Natural), NotPositiveDefinite);
  try {
    cholesky(Q, Ordering::Natural);
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.pivot == 1);
  }
  SpMat Z(1, 1);
  Z.insert(0, 0) = 0.0;
  CHECK_THROWS_AS(cholesky(Z), NotPositiveDefinite);
  /* tiny pivot relative to the largest diagonal */
  SpMat T(2, 2);
  T.insert(0, 0) = 1e16;
  T.insert(1, 1) = 1.0;
  T.insert(1, 0) = 0.0;
  CHECK_THROWS_AS(cholesky_with_permutation(T, (IVec(2) << 0, 1).finished()),
                  NotPositiveDefinite);
}

TEST_CASE("shape errors") {
  SpMat R(2, 3);
  CHECK_THROWS_AS(cholesky(R), ShapeMismatch);
  SpMat Q(3, 3);
  Q.setIdentity();
  const auto f = cholesky(Q);
  CHECK_THROWS_AS(solve(f, Vec(Vec::Ones(2))), ShapeMismatch);
  SpMat W(2, 1);
  W.insert(0, 0) = 1.0;
  CHECK_THROWS_AS(lowrank_update(f, W, 1.0), ShapeMismatch);
  CHECK_THROWS_AS(lowrank_update(f, SpMat(3, 1), 0.5), InvalidStep);
  CHECK_THROWS_AS(selected_trace(f, SpMat(2, 3), SpMat(3, 3)), ShapeMismatch);
  CHECK_THROWS_AS(cholesky_with_permutation(Q, (IVec(3) << 0, 0, 2).finished()),
                  ShapeMismatch);
}

TEST_CASE("low-rank update matches a fresh factorization") {
  RandomStream rng(15);
  for (int ncols : {1, 5, 20}) {
    const int n = 60;
    const SpMat Q = oracles::random_spd(n, 0.06, rng);
    const SpMat W = oracles::random_sparse(n, ncols, 0.15, rng);
    const SpMat WWt = SpMat(W * W.transpose());
    for (Ordering ord : {Ordering::Natural, Ordering::Amd}) {
      const auto base = cholesky(Q, ord);
      const auto up = lowrank_update(base, W, +1.0);
      const SpMat Qup = Q + WWt;
      CHECK(oracles::rel_err(oracles::reconstruct(up), oracles::dense(Qup)) < 1e-8);
      /* permutation must be preserved */
      CHECK((up.perm - base.perm).cwiseAbs().maxCoeff() == 0);
      /* downdate back */
      const auto down = lowrank_update(up, W, -1.0);
      CHECK(oracles::rel_err(oracles::reconstruct(down), oracles::dense(Q)) < 1e-8);
      /* elementwise round trip on the factor values */
      const Mat L0 = oracles::dense(base.lower);
      const Mat L2 = oracles::dense(down.lower);
      CHECK((L0 - L2).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("downdating to an indefinite matrix raises") {
  SpMat Q(3, 3);
  Q.setIdentity();
  const auto f = cholesky(Q, Ordering::Natural);
  SpMat W(3, 1);
  W.insert(0, 0) = 2.0; /* I - W W^T has a negative eigenvalue */
  CHECK_THROWS_AS(lowrank_update(f, W, -1.0), NotPositiveDefinite);
}

TEST_CASE("update with a dense column still matches a fresh factorization") {
  RandomStream rng(16);
  const int n = 25;
  const SpMat Q = oracles::random_spd(n, 0.2, rng);
  SpMat W(n, 2);
  for (int i = 0; i < n; ++i) {
    W.insert(i, 0) = 0.3 * rng.normal();
    if (i % 3 == 0) W.insert(i, 1) = rng.normal();
  }
  const auto up = lowrank_update(cholesky(Q), W, +1.0);
  const Mat ref = oracles::dense(Q) + oracles::dense(W) * oracles::dense(W).transpose();
  CHECK(oracles::rel_err(oracles::reconstruct(up), ref) < 1e-8);
}

TEST_CASE("selected trace matches dense computation") {
  RandomStream rng(17);
  const int n = 30;
  const SpMat Q = oracles::random_spd(n, 0.15, rng);
  const SpMat A = oracles::random_sparse(7, n, 0.3, rng);
  const SpMat B = oracles::random_sparse(n, 7, 0.3, rng);
  const double got = selected_trace(cholesky(Q), A, B);
  const Mat Qinv = oracles::dense(Q).inverse();
  const double ref = (oracles::dense(A) * Qinv * oracles::dense(B)).trace();
  CHECK(got == doctest::Approx(ref).epsilon(1e-9));
  /* identity-weighted partial trace (the accuracy module's use) */
  SpMat mask(n, n);
  for (int i = 0; i < n; i += 2) mask.insert(i, i) = 1.0;
  const double tr_got = selected_trace(cholesky(Q), mask, mask);
  double tr_ref = 0.0;
  for (int i = 0; i < n; i += 2) tr_ref += Qinv(i, i);
  CHECK(tr_got == doctest::Approx(tr_ref).epsilon(1e-10));
}

TEST_CASE("stabilized quadratic form") {
  SUBCASE("scalar example") {
    SpMat Q(1, 1), O(1, 1);
    Q.insert(0, 0) = 1.0;
    O.insert(0, 0) = 1.0;
    Vec d(1);
    d[0] = 1.0;
    CHECK(stabilized_quadform(Q, O, 1.0, d) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("dense oracle") {
    RandomStream rng(18);
    const int n = 40, m = 12;
    const SpMat Q = oracles::random_spd(n, 0.12, rng);
    const SpMat O = oracles::random_sparse(m, n, 0.25, rng);
    const Vec d = rng.normal_vector(m);
    for (double s2 : {2.0, 1e-2, 1e-6}) {
      const Mat S = oracles::dense(O) * oracles::dense(Q).inverse() *
                        oracles::dense(O).transpose() +
                    s2 * Mat::Identity(m, m);
      const double ref = d.dot(S.llt().solve(d));
      const double got = stabilized_quadform(Q, O, s2, d);
      CHECK(got == doctest::Approx(ref).epsilon(1e-8));
      CHECK(got >= 0.0);
    }
  }
}

TEST_CASE("marginal variances match the dense inverse diagonal") {
  RandomStream rng(19);
  const int n = 40;
  const SpMat Q = oracles::random_spd(n, 0.1, rng);
  const Vec got = marginal_variances(cholesky(Q));
  const Vec ref = oracles::dense(Q).inverse().diagonal();
  CHECK(oracles::rel_err(got, ref) < 1e-10);
}

TEST_CASE("gaussian sampling has the right first two moments") {
  RandomStream rng(20);
  const int n = 8;
  const SpMat Q = oracles::random_spd(n, 0.4, rng);
  const auto f = cholesky(Q);
  Vec mean(n);
  for (int i = 0; i < n; ++i) mean[i] = 0.5 * i;
  const int m = 20000;
  Mat draws(n, m);
  for (int s = 0; s < m; ++s) draws.col(s) = sample_gaussian(f, mean, rng);
  const Vec xbar = draws.rowwise().mean();
  Mat centered = draws.colwise() - xbar;
  const Mat cov = centered * centered.transpose() / double(m - 1);
  const Mat ref = oracles::dense(Q).inverse();
  CHECK((xbar - mean).cwiseAbs().maxCoeff() < 0.05);
  CHECK((cov - ref).norm() / ref.norm() < 0.10);
}

TEST_CASE("random stream is deterministic and well scaled") {
  RandomStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  RandomStream c(7);
  double s = 0.0, s2 = 0.0;
  const int m = 100000;
  for (int i = 0; i < m; ++i) {
    const double z = c.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / m) < 0.02);
  CHECK(std::abs(s2 / m - 1.0) < 0.03);
  RandomStream u(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  /* gamma sampler mean/variance: Gamma(3, 2) has mean 1.5, var 0.75 */
  RandomStream g(21);
  double gs = 0.0, gs2 = 0.0;
  for (int i = 0; i < 50000; ++i) {
    const double x = g.gamma(3.0, 2.0);
    gs += x;
    gs2 += x * x;
  }
  const double gm = gs / 50000.0;
  CHECK(gm == doctest::Approx(1.5).epsilon(0.02));
  CHECK(gs2 / 50000.0 - gm * gm == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("matrix market round trip") {
  RandomStream rng(22);
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sourcerec_mm_test";
  fs::create_directories(dir);
  const SpMat M = oracles::random_sparse(13, 9, 0.3, rng);
  const std::string p1 = (dir / "general.mtx").string();
  write_matrix_market(p1, M);
  CHECK(oracles::rel_err(oracles::dense(read_matrix_market(p1)), oracles::dense(M)) == 0.0);
  const SpMat Q = oracles::random_spd(17, 0.2, rng);
  const std::string p2 = (dir / "sym.mtx").string();
  write_matrix_market(p2, Q, /*symmetric_lower=*/true);
  CHECK(oracles::rel_err(oracles::dense(read_matrix_market(p2)), oracles::dense(Q)) == 0.0);
  fs::remove_all(dir);
}
