#pragma once

#include <optional>

#include "sourcerec/rng.hpp"
#include "sourcerec/types.hpp"

namespace sourcerec {

/* Sparse Cholesky factorization P Q P^T = L L^T of an SPD matrix Q.
   `perm` maps permuted position k to original index perm[k], i.e.
   (P x)_k = x[perm[k]].  `lower` is lower triangular, column-compressed,
   rows sorted ascending within each column so the diagonal entry comes first.
   `parent` is the elimination tree over the permuted columns (-1 = root). */
struct CholeskyFactor {
  IVec perm;
  SpMat lower;
  IVec parent;

  Eigen::Index dim() const { return lower.rows(); }
};

enum class Ordering { Natural, Amd };

enum class SolveMode {
  Full,      /* x = Q^{-1} b, natural numbering in and out            */
  LowerOnly, /* y = L^{-1} P b, returns permuted coordinates          */
  UpperOnly  /* x = P^T L^{-T} b, takes permuted coordinates          */
};

/* Factor Q (only the lower triangle is referenced). */
CholeskyFactor cholesky(const SpMat& Q, Ordering ordering = Ordering::Amd);

/* Factor with a caller-supplied permutation (perm[k] = original index). */
CholeskyFactor cholesky_with_permutation(const SpMat& Q, const IVec& perm);

/* Factor of Q +/- W W^T without refactoring from scratch: the pattern is
   extended to cover the update fill, then each column of W is applied as a
   hyperbolic rank-1 rotation along its elimination-tree path. */
CholeskyFactor lowrank_update(const CholeskyFactor& factor, const SpMat& W,
                              double sign);

Vec solve(const CholeskyFactor& factor, const Vec& b,
          SolveMode mode = SolveMode::Full);
Mat solve(const CholeskyFactor& factor, const Mat& B,
          SolveMode mode = SolveMode::Full);

/* log det Q = 2 sum log diag(L) */
double logdet(const CholeskyFactor& factor);

/* Draw x ~ N(mean, Q^{-1}) using x = mean + P^T L^{-T} z. */
Vec sample_gaussian(const CholeskyFactor& factor, const Vec& mean,
                    RandomStream& rng);

/* tr(M_left Q^{-1} M_right) by solving against the columns of M_right. */
double selected_trace(const CholeskyFactor& factor, const SpMat& M_left,
                      const SpMat& M_right);

/* d^T (O Q^{-1} O^T + sigma2 I)^{-1} d evaluated through the identity
   (1/s2)|d|^2 - (1/s2^2) d^T O (Q + O^T O / s2)^{-1} O^T d, which needs only
   one sparse factorization and never forms the dense m x m system. */
double stabilized_quadform(const SpMat& Q, const SpMat& O, double sigma2,
                           const Vec& d);
/* Same quadratic form when the caller already factored Q + O^T O / sigma2. */
double stabilized_quadform(const CholeskyFactor& inner_factor, const SpMat& O,
                           double sigma2, const Vec& d);

/* Marginal variances diag(Q^{-1}) by a column sweep (exact, O(n) solves). */
Vec marginal_variances(const CholeskyFactor& factor);

namespace detail {
/* Elimination tree of the full symmetric pattern A (upper triangle read). */
IVec elimination_tree(const SpMat& A);
/* Build P A P^T from the lower triangle of Q, with full symmetric pattern. */
SpMat permute_symmetric(const SpMat& Q, const IVec& perm);
}  // namespace detail

}  // namespace sourcerec
