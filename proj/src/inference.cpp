#include "sourcerec/inference.hpp"

#include <cmath>

namespace sourcerec {

namespace {

/* Use the cached prior factor when present, otherwise factor locally. */
const CholeskyFactor& prior_factor(const GmrfPrior& prior,
                                   std::optional<CholeskyFactor>& local) {
  if (prior.factor) return *prior.factor;
  local.emplace(cholesky(prior.Q, Ordering::Amd));
  return *local;
}

void check_observation_shapes(const GmrfPrior& prior,
                              const ObservationSet& obs) {
  if (obs.A.cols() != prior.Q.rows())
    throw ShapeMismatch("observation matrix has " +
                        std::to_string(obs.A.cols()) + " columns for a " +
                        std::to_string(prior.Q.rows()) + "-dimensional prior");
  if (obs.y.size() != obs.A.rows())
    throw ShapeMismatch("observation vector length " +
                        std::to_string(obs.y.size()) + " != " +
                        std::to_string(obs.A.rows()) + " rows");
  if (!(obs.sigma2_eps > 0.0))
    throw ConfigInvalid("observation noise variance must be positive");
}

SpMat scaled_transpose(const SpMat& A, double scale) {
  SpMat W = A.transpose();
  W *= scale;
  return W;
}

}  // namespace

SpMat source_pushforward(const FemSystem& sys) {
  const Vec linv = sys.lumped_mass.diagonal().cwiseInverse();
  return SpMat(linv.asDiagonal() * sys.stiffness);
}

PosteriorGaussian krige_solution(const GmrfPrior& prior,
                                 const ObservationSet& obs) {
  check_observation_shapes(prior, obs);
  PosteriorGaussian post;
  post.sigma2_eps = obs.sigma2_eps;
  if (obs.A.rows() == 0) {
    std::optional<CholeskyFactor> local;
    post.factor = prior_factor(prior, local);
    post.mean = prior.mean;
    return post;
  }
  if (prior.factor) {
    /* A cached prior factor signals repeated use (hyperparameter sweeps need
       its log-determinant anyway): update it instead of refactoring. */
    const double sigma = std::sqrt(obs.sigma2_eps);
    post.factor =
        lowrank_update(*prior.factor, scaled_transpose(obs.A, 1.0 / sigma), 1.0);
  } else {
    /* One-shot call: assembling Q + A'A/sigma2 and factoring once costs far
       less time and memory than factoring the prior and updating it. */
    SpMat AtA(obs.A.transpose() * obs.A);
    AtA *= 1.0 / obs.sigma2_eps;
    post.factor = cholesky(SpMat(prior.Q + AtA), Ordering::Amd);
  }
  const Vec residual = obs.y - obs.A * prior.mean;
  const Vec rhs = obs.A.transpose() * residual / obs.sigma2_eps;
  post.mean = prior.mean + solve(post.factor, rhs);
  return post;
}

PushforwardPosterior krige_source(const FemSystem& sys,
                                  const PosteriorGaussian& post_u) {
  if (sys.stiffness.rows() != post_u.mean.size())
    throw ShapeMismatch("posterior dimension does not match the system");
  PushforwardPosterior out;
  out.push = source_pushforward(sys);
  out.mean = out.push * post_u.mean;
  out.base = post_u;
  return out;
}

PushforwardPosterior krige_source_spacetime(const SpaceTimeOperator& op,
                                            const PosteriorGaussian& post_u) {
  if (op.R.cols() != post_u.mean.size())
    throw ShapeMismatch("posterior dimension does not match the operator");
  PushforwardPosterior out;
  out.push = op.R;
  out.mean = out.push * post_u.mean;
  out.base = post_u;
  return out;
}

Vec pushforward_variances(const PushforwardPosterior& post) {
  const SpMat pt = post.push.transpose();
  const Eigen::Index n_out = post.push.rows();
  Vec var(n_out);
  constexpr Eigen::Index kBlock = 128;
  for (Eigen::Index start = 0; start < n_out; start += kBlock) {
    const Eigen::Index width = std::min(kBlock, n_out - start);
    const Mat block = Mat(pt.middleCols(start, width));
    const Mat solved = solve(post.base.factor, block);
    var.segment(start, width) =
        (block.array() * solved.array()).colwise().sum();
  }
  return var;
}

Vec pushforward_sample(const PushforwardPosterior& post, RandomStream& rng) {
  return post.push * sample_gaussian(post.base.factor, post.base.mean, rng);
}

JointRegressionPosterior krige_joint_regression(const FemSystem& sys,
                                                const GmrfPrior& joint_prior,
                                                const ObservationSet& obs) {
  const Eigen::Index n_u = sys.lumped_mass.rows();
  const Eigen::Index n_joint = joint_prior.Q.rows();
  if (n_joint < n_u)
    throw ShapeMismatch("joint prior smaller than the solution block");

  ObservationSet widened = obs;
  if (obs.A.cols() == n_u && n_joint > n_u) {
    SpMat wide(obs.A.rows(), n_joint);
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(obs.A.nonZeros()));
    for (Eigen::Index k = 0; k < obs.A.outerSize(); ++k)
      for (SpMat::InnerIterator it(obs.A, k); it; ++it)
        trips.emplace_back(it.row(), it.col(), it.value());
    wide.setFromTriplets(trips.begin(), trips.end());
    widened.A = wide;
  } else if (obs.A.cols() != n_joint) {
    throw ShapeMismatch("observation matrix matches neither the solution "
                        "block nor the joint dimension");
  }

  JointRegressionPosterior out;
  out.joint = krige_solution(joint_prior, widened);
  out.n_u = n_u;
  out.beta_mean = out.joint.mean.tail(n_joint - n_u);

  const SpMat to_f = source_pushforward(sys);
  SpMat push(n_u, n_joint);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(to_f.nonZeros()));
  for (Eigen::Index k = 0; k < to_f.outerSize(); ++k)
    for (SpMat::InnerIterator it(to_f, k); it; ++it)
      trips.emplace_back(it.row(), it.col(), it.value());
  push.setFromTriplets(trips.begin(), trips.end());

  out.source.push = push;
  out.source.mean = push * out.joint.mean;
  out.source.base = out.joint;
  return out;
}

double log_marginal_likelihood(const GmrfPrior& prior,
                               const ObservationSet& obs) {
  check_observation_shapes(prior, obs);
  const Eigen::Index m = obs.A.rows();
  if (m == 0) return 0.0;

  std::optional<CholeskyFactor> local;
  const CholeskyFactor& base = prior_factor(prior, local);
  const double sigma = std::sqrt(obs.sigma2_eps);
  const CholeskyFactor post =
      lowrank_update(base, scaled_transpose(obs.A, 1.0 / sigma), 1.0);

  const Vec d = obs.y - obs.A * prior.mean;
  const double quad = stabilized_quadform(post, obs.A, obs.sigma2_eps, d);
  const double two_pi = 2.0 * M_PI;
  return -0.5 * (static_cast<double>(m) * std::log(two_pi * obs.sigma2_eps) +
                 logdet(post) - logdet(base) + quad);
}

}  // namespace sourcerec
