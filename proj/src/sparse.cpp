#include "sourcerec/sparse.hpp"

#include <Eigen/OrderingMethods>
#include <algorithm>
#include <cmath>
#include <vector>

namespace sourcerec {

namespace detail {

SpMat permute_symmetric(const SpMat& Q, const IVec& perm) {
  const int n = static_cast<int>(Q.rows());
  IVec inv(n);
  for (int k = 0; k < n; ++k) inv[perm[k]] = k;
  std::vector<Triplet> trips;
  trips.reserve(2 * static_cast<std::size_t>(Q.nonZeros()));
  for (int j = 0; j < Q.outerSize(); ++j) {
    for (SpMat::InnerIterator it(Q, j); it; ++it) {
      const int i = static_cast<int>(it.row());
      if (i < j) continue; /* lower triangle only */
      trips.emplace_back(inv[i], inv[j], it.value());
      if (i != j) trips.emplace_back(inv[j], inv[i], it.value());
    }
  }
  SpMat A(n, n);
  A.setFromTriplets(trips.begin(), trips.end());
  return A;
}

IVec elimination_tree(const SpMat& A) {
  const int n = static_cast<int>(A.rows());
  IVec parent(n);
  std::vector<int> ancestor(static_cast<std::size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    parent[k] = -1;
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      int i = static_cast<int>(it.row());
      while (i != -1 && i < k) {
        const int nxt = ancestor[i];
        ancestor[i] = k;
        if (nxt == -1) {
          parent[i] = k;
          break;
        }
        i = nxt;
      }
    }
  }
  return parent;
}

}  // namespace detail

namespace {

/* Row pattern of L(k,0:k-1): walks elimination-tree paths from the entries of
   column k of A (upper triangle).  Returns `top`; the pattern occupies
   s[top..n-1] in topological order.  w is a stamp array (w[i]==k marks i). */
int ereach(const int* Ap, const int* Ai, int n, int k, const int* parent,
           int* s, int* w) {
  int top = n;
  w[k] = k;
  for (int p = Ap[k]; p < Ap[k + 1]; ++p) {
    int i = Ai[p];
    if (i > k) continue;
    int len = 0;
    while (w[i] != k) {
      s[len++] = i;
      w[i] = k;
      i = parent[i];
    }
    while (len > 0) s[--top] = s[--len];
  }
  return top;
}

/* Column pointers of L for the full symmetric pattern A under etree parent. */
std::vector<int> column_pointers(const SpMat& A, const IVec& parent) {
  const int n = static_cast<int>(A.rows());
  const int* Ap = A.outerIndexPtr();
  const int* Ai = A.innerIndexPtr();
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  std::vector<int> s(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    const int top = ereach(Ap, Ai, n, k, parent.data(), s.data(), w.data());
    for (int t = top; t < n; ++t) ++count[s[t]];
    ++count[k]; /* diagonal */
  }
  std::vector<int> Lp(static_cast<std::size_t>(n) + 1, 0);
  for (int j = 0; j < n; ++j) Lp[j + 1] = Lp[j] + count[j];
  return Lp;
}

/* Row indices of the factor pattern (no values): sorted within each column
   because row k is appended to its columns in ascending k. */
std::vector<int> symbolic_rows(const SpMat& A, const IVec& parent,
                               const std::vector<int>& Lp) {
  const int n = static_cast<int>(A.rows());
  const int* Ap = A.outerIndexPtr();
  const int* Ai = A.innerIndexPtr();
  std::vector<int> Li(static_cast<std::size_t>(Lp[n]));
  std::vector<int> cursor(Lp.begin(), Lp.end() - 1);
  std::vector<int> s(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    Li[cursor[k]++] = k; /* diagonal first */
    const int top = ereach(Ap, Ai, n, k, parent.data(), s.data(), w.data());
    for (int t = top; t < n; ++t) Li[cursor[s[t]]++] = k;
  }
  return Li;
}

SpMat pack_factor(int n, const std::vector<int>& Lp, const std::vector<int>& Li,
                  const std::vector<double>& Lx) {
  Eigen::Map<const SpMat> view(n, n, Lp[n], Lp.data(), Li.data(), Lx.data());
  return SpMat(view);
}

/* Up-looking numeric factorization of the permuted full-pattern matrix. */
SpMat numeric_factor(const SpMat& A, const IVec& parent, const IVec& perm) {
  const int n = static_cast<int>(A.rows());
  const int* Ap = A.outerIndexPtr();
  const int* Ai = A.innerIndexPtr();
  const double* Av = A.valuePtr();

  double max_diag = 0.0;
  for (int j = 0; j < n; ++j)
    for (SpMat::InnerIterator it(A, j); it; ++it)
      if (it.row() == j) max_diag = std::max(max_diag, it.value());
  const double tol = 1e-12 * max_diag;

  const std::vector<int> Lp = column_pointers(A, parent);
  std::vector<int> Li(static_cast<std::size_t>(Lp[n]));
  std::vector<double> Lx(static_cast<std::size_t>(Lp[n]));
  std::vector<int> cursor(Lp.begin(), Lp.end() - 1);
  std::vector<int> s(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n), -1);
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);

  for (int k = 0; k < n; ++k) {
    const int top = ereach(Ap, Ai, n, k, parent.data(), s.data(), w.data());
    x[k] = 0.0;
    for (int p = Ap[k]; p < Ap[k + 1]; ++p)
      if (Ai[p] <= k) x[Ai[p]] = Av[p];
    double d = x[k];
    x[k] = 0.0;
    for (int t = top; t < n; ++t) {
      const int j = s[t];
      const double lkj = x[j] / Lx[Lp[j]]; /* diagonal entry leads column j */
      x[j] = 0.0;
      for (int p = Lp[j] + 1; p < cursor[j]; ++p) x[Li[p]] -= Lx[p] * lkj;
      d -= lkj * lkj;
      const int q = cursor[j]++;
      Li[q] = k;
      Lx[q] = lkj;
    }
    if (!(d > tol)) throw NotPositiveDefinite(perm[k]);
    const int q = cursor[k]++;
    Li[q] = k;
    Lx[q] = std::sqrt(d);
  }
  return pack_factor(n, Lp, Li, Lx);
}

IVec identity_permutation(int n) {
  IVec p(n);
  for (int k = 0; k < n; ++k) p[k] = k;
  return p;
}

IVec amd_permutation(const SpMat& Q) {
  const int n = static_cast<int>(Q.rows());
  const SpMat full = detail::permute_symmetric(Q, identity_permutation(n));
  Eigen::AMDOrdering<int> amd;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
  amd(full, pinv);
  /* pinv plays the role of the inverse permutation in Eigen's solvers; its
     indices give original-index-at-permuted-position, which is our `perm`. */
  IVec perm(n);
  for (int k = 0; k < n; ++k) perm[k] = pinv.indices()[k];
  return perm;
}

void check_square(const SpMat& Q) {
  if (Q.rows() != Q.cols())
    throw ShapeMismatch("matrix must be square, got " +
                        std::to_string(Q.rows()) + "x" +
                        std::to_string(Q.cols()));
}

}  // namespace

CholeskyFactor cholesky(const SpMat& Q, Ordering ordering) {
  check_square(Q);
  const int n = static_cast<int>(Q.rows());
  const IVec perm = (ordering == Ordering::Amd && n > 1) ? amd_permutation(Q)
                                                         : identity_permutation(n);
  return cholesky_with_permutation(Q, perm);
}

CholeskyFactor cholesky_with_permutation(const SpMat& Q, const IVec& perm) {
  check_square(Q);
  const int n = static_cast<int>(Q.rows());
  if (perm.size() != n)
    throw ShapeMismatch("permutation length does not match matrix dimension");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int k = 0; k < n; ++k) {
    if (perm[k] < 0 || perm[k] >= n || seen[perm[k]])
      throw ShapeMismatch("invalid permutation");
    seen[perm[k]] = 1;
  }
  const SpMat A = detail::permute_symmetric(Q, perm);
  CholeskyFactor f;
  f.perm = perm;
  f.parent = detail::elimination_tree(A);
  f.lower = numeric_factor(A, f.parent, perm);
  return f;
}

CholeskyFactor lowrank_update(const CholeskyFactor& factor, const SpMat& W,
                              double sign) {
  const int n = static_cast<int>(factor.dim());
  if (W.rows() != n)
    throw ShapeMismatch("update matrix must have as many rows as the factor");
  if (sign != 1.0 && sign != -1.0)
    throw InvalidStep("update sign must be +1 or -1");
  if (W.cols() == 0 || W.nonZeros() == 0) return factor;

  IVec inv(n);
  for (int k = 0; k < n; ++k) inv[factor.perm[k]] = k;
  std::vector<Triplet> wtrips;
  wtrips.reserve(static_cast<std::size_t>(W.nonZeros()));
  for (int c = 0; c < W.outerSize(); ++c)
    for (SpMat::InnerIterator it(W, c); it; ++it)
      wtrips.emplace_back(inv[it.row()], c, it.value());
  SpMat Wp(n, W.cols());
  Wp.setFromTriplets(wtrips.begin(), wtrips.end());

  /* Union pattern: current factor plus the clique of each update column.
     Its symbolic factorization covers all fill the rotations can create, and
     the cliques force each column's support onto one elimination-tree path. */
  std::vector<Triplet> utrips;
  utrips.reserve(2 * static_cast<std::size_t>(factor.lower.nonZeros()));
  for (int j = 0; j < factor.lower.outerSize(); ++j)
    for (SpMat::InnerIterator it(factor.lower, j); it; ++it) {
      utrips.emplace_back(static_cast<int>(it.row()), j, 1.0);
      if (it.row() != j) utrips.emplace_back(j, static_cast<int>(it.row()), 1.0);
    }
  std::vector<int> support;
  for (int c = 0; c < Wp.outerSize(); ++c) {
    support.clear();
    for (SpMat::InnerIterator it(Wp, c); it; ++it)
      support.push_back(static_cast<int>(it.row()));
    for (std::size_t a = 0; a < support.size(); ++a)
      for (std::size_t b = a + 1; b < support.size(); ++b) {
        utrips.emplace_back(support[b], support[a], 1.0);
        utrips.emplace_back(support[a], support[b], 1.0);
      }
  }
  SpMat U(n, n);
  U.setFromTriplets(utrips.begin(), utrips.end());

  const IVec parent = detail::elimination_tree(U);
  const std::vector<int> Lp = column_pointers(U, parent);
  const std::vector<int> Li = symbolic_rows(U, parent, Lp);
  std::vector<double> Lx(static_cast<std::size_t>(Lp[n]), 0.0);

  /* Scatter existing factor values into the extended pattern (both sorted). */
  const int* oLp = factor.lower.outerIndexPtr();
  const int* oLi = factor.lower.innerIndexPtr();
  const double* oLx = factor.lower.valuePtr();
  for (int j = 0; j < n; ++j) {
    int q = Lp[j];
    for (int p = oLp[j]; p < oLp[j + 1]; ++p) {
      while (Li[q] != oLi[p]) ++q;
      Lx[q] = oLx[p];
    }
  }

  /* Hyperbolic rotations along the path from each column's first entry. */
  std::vector<double> wv(static_cast<std::size_t>(n), 0.0);
  for (int c = 0; c < Wp.outerSize(); ++c) {
    SpMat::InnerIterator head(Wp, c);
    if (!head) continue;
    const int f = static_cast<int>(head.row());
    for (int j = f; j != -1; j = parent[j]) wv[j] = 0.0;
    for (SpMat::InnerIterator it(Wp, c); it; ++it) wv[it.row()] = it.value();
    double beta = 1.0;
    for (int j = f; j != -1; j = parent[j]) {
      const int pd = Lp[j];
      const double alpha = wv[j] / Lx[pd];
      const double beta2_sq = beta * beta + sign * alpha * alpha;
      if (!(beta2_sq > 0.0)) throw NotPositiveDefinite(factor.perm[j]);
      const double beta2 = std::sqrt(beta2_sq);
      const double delta = (sign > 0.0) ? (beta / beta2) : (beta2 / beta);
      const double gamma = sign * alpha / (beta2 * beta);
      Lx[pd] = delta * Lx[pd] + ((sign > 0.0) ? gamma * wv[j] : 0.0);
      beta = beta2;
      for (int p = pd + 1; p < Lp[j + 1]; ++p) {
        const double w1 = wv[Li[p]];
        const double w2 = w1 - alpha * Lx[p];
        wv[Li[p]] = w2;
        Lx[p] = delta * Lx[p] + gamma * ((sign > 0.0) ? w1 : w2);
      }
    }
  }

  CholeskyFactor out;
  out.perm = factor.perm;
  out.parent = parent;
  out.lower = pack_factor(n, Lp, Li, Lx);
  return out;
}

namespace {

void lower_solve_inplace(const SpMat& L, Vec& b) {
  const int n = static_cast<int>(L.rows());
  const int* Lp = L.outerIndexPtr();
  const int* Li = L.innerIndexPtr();
  const double* Lx = L.valuePtr();
  for (int j = 0; j < n; ++j) {
    const double yj = b[j] / Lx[Lp[j]];
    b[j] = yj;
    for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) b[Li[p]] -= Lx[p] * yj;
  }
}

void upper_solve_inplace(const SpMat& L, Vec& b) {
  const int n = static_cast<int>(L.rows());
  const int* Lp = L.outerIndexPtr();
  const int* Li = L.innerIndexPtr();
  const double* Lx = L.valuePtr();
  for (int j = n - 1; j >= 0; --j) {
    double s = b[j];
    for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) s -= Lx[p] * b[Li[p]];
    b[j] = s / Lx[Lp[j]];
  }
}

}  // namespace

Vec solve(const CholeskyFactor& factor, const Vec& b, SolveMode mode) {
  const int n = static_cast<int>(factor.dim());
  if (b.size() != n) throw ShapeMismatch("right-hand side length mismatch");
  if (mode == SolveMode::LowerOnly || mode == SolveMode::Full) {
    Vec w(n);
    for (int k = 0; k < n; ++k) w[k] = b[factor.perm[k]];
    lower_solve_inplace(factor.lower, w);
    if (mode == SolveMode::LowerOnly) return w;
    upper_solve_inplace(factor.lower, w);
    Vec out(n);
    for (int k = 0; k < n; ++k) out[factor.perm[k]] = w[k];
    return out;
  }
  /* UpperOnly: permuted coordinates in, natural out */
  Vec w = b;
  upper_solve_inplace(factor.lower, w);
  Vec out(n);
  for (int k = 0; k < n; ++k) out[factor.perm[k]] = w[k];
  return out;
}

Mat solve(const CholeskyFactor& factor, const Mat& B, SolveMode mode) {
  Mat out(B.rows(), B.cols());
  for (Eigen::Index c = 0; c < B.cols(); ++c) out.col(c) = solve(factor, Vec(B.col(c)), mode);
  return out;
}

double logdet(const CholeskyFactor& factor) {
  const int n = static_cast<int>(factor.dim());
  const int* Lp = factor.lower.outerIndexPtr();
  const double* Lx = factor.lower.valuePtr();
  double acc = 0.0;
  for (int j = 0; j < n; ++j) acc += std::log(Lx[Lp[j]]);
  return 2.0 * acc;
}

Vec sample_gaussian(const CholeskyFactor& factor, const Vec& mean,
                    RandomStream& rng) {
  const int n = static_cast<int>(factor.dim());
  if (mean.size() != n) throw ShapeMismatch("mean length mismatch");
  Vec z = rng.normal_vector(n);
  return mean + solve(factor, z, SolveMode::UpperOnly);
}

double selected_trace(const CholeskyFactor& factor, const SpMat& M_left,
                      const SpMat& M_right) {
  const int n = static_cast<int>(factor.dim());
  if (M_left.cols() != n || M_right.rows() != n)
    throw ShapeMismatch("trace operands do not conform with the factor");
  if (M_left.rows() != M_right.cols())
    throw ShapeMismatch("trace product is not square");
  const SpMat left_t = M_left.transpose(); /* rows of M_left as columns */
  double acc = 0.0;
  for (int j = 0; j < M_right.cols(); ++j) {
    const Vec v = solve(factor, Vec(M_right.col(j)), SolveMode::Full);
    for (SpMat::InnerIterator it(left_t, j); it; ++it)
      acc += it.value() * v[it.row()];
  }
  return acc;
}

double stabilized_quadform(const CholeskyFactor& inner_factor, const SpMat& O,
                           double sigma2, const Vec& d) {
  if (sigma2 <= 0.0) throw InvalidStep("noise variance must be positive");
  if (O.rows() != d.size())
    throw ShapeMismatch("data vector does not match operator rows");
  const Vec t = O.transpose() * d;
  const Vec s = solve(inner_factor, t, SolveMode::Full);
  const double val = d.squaredNorm() / sigma2 - t.dot(s) / (sigma2 * sigma2);
  return std::max(val, 0.0);
}

double stabilized_quadform(const SpMat& Q, const SpMat& O, double sigma2,
                           const Vec& d) {
  check_square(Q);
  if (O.cols() != Q.rows())
    throw ShapeMismatch("operator columns do not match matrix dimension");
  if (sigma2 <= 0.0) throw InvalidStep("noise variance must be positive");
  SpMat ot = O.transpose();
  SpMat inner = Q + SpMat((ot * O) / sigma2);
  return stabilized_quadform(cholesky(inner), O, sigma2, d);
}

Vec marginal_variances(const CholeskyFactor& factor) {
  const int n = static_cast<int>(factor.dim());
  const int* Lp = factor.lower.outerIndexPtr();
  const int* Li = factor.lower.innerIndexPtr();
  const double* Lx = factor.lower.valuePtr();
  IVec inv(n);
  for (int k = 0; k < n; ++k) inv[factor.perm[k]] = k;
  Vec out(n);
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const int j0 = inv[i];
    x[j0] = 1.0;
    double acc = 0.0;
    for (int j = j0; j < n; ++j) {
      if (x[j] == 0.0) continue;
      const double yj = x[j] / Lx[Lp[j]];
      x[j] = 0.0;
      acc += yj * yj;
      for (int p = Lp[j] + 1; p < Lp[j + 1]; ++p) x[Li[p]] -= Lx[p] * yj;
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace sourcerec
