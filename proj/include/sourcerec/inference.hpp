#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sourcerec/forward.hpp"

namespace sourcerec {

/// Gaussian posterior in precision form. `factor` factors the posterior
/// precision Q_prior + (1/sigma2_eps) A^T A; samples and variance queries go
/// through it.
struct PosteriorGaussian {
  Vec mean;
  CholeskyFactor factor;
  double sigma2_eps = 1.0;
};

/// Conditions `prior` on obs.y = A u + noise: the posterior precision is a
/// low-rank update of the prior factor, and the mean solves
/// Q_post (mean - mu) = A^T (y - A mu) / sigma2_eps.
PosteriorGaussian krige_solution(const GmrfPrior& prior,
                                 const ObservationSet& obs);

/// Linear image `push * x` of a Gaussian posterior. The covariance
/// push Sigma push^T is kept implicit: draws and pointwise variances are
/// pushed through `push` on demand.
struct PushforwardPosterior {
  Vec mean;
  SpMat push;
  PosteriorGaussian base;
};

/// Rows map solution values to the source that generated them,
/// f = Ltilde^-1 K u.
SpMat source_pushforward(const FemSystem& sys);

/// Source posterior f|y recovered from the solution posterior through the
/// exact relation f = Ltilde^-1 K u.
PushforwardPosterior krige_source(const FemSystem& sys,
                                  const PosteriorGaussian& post_u);

/// Space-time analogue: the stacked source is f = R u.
PushforwardPosterior krige_source_spacetime(const SpaceTimeOperator& op,
                                            const PosteriorGaussian& post_u);

/// Exact pointwise variances diag(push Q_post^-1 push^T) by a column sweep;
/// intended for modest problem sizes (one solve per output coordinate).
Vec pushforward_variances(const PushforwardPosterior& post);

/// One draw of push * x with x from the base posterior.
Vec pushforward_sample(const PushforwardPosterior& post, RandomStream& rng);

/// Joint kriging of (u, beta) when the source carries fixed effects,
/// f = X beta + eta. The observation matrix touches only the u block (it is
/// widened with zero beta columns internally when needed). `source` holds the
/// back-computed f = Ltilde^-1 K u posterior.
struct JointRegressionPosterior {
  PosteriorGaussian joint;  ///< over the stacked (u, beta) vector
  Eigen::Index n_u = 0;
  Vec beta_mean;
  PushforwardPosterior source;
};

JointRegressionPosterior krige_joint_regression(const FemSystem& sys,
                                                const GmrfPrior& joint_prior,
                                                const ObservationSet& obs);

/// log p(y) with the latent field integrated out:
/// y ~ N(A mu, A Q^-1 A^T + sigma2_eps I), evaluated through the prior and
/// posterior sparse factors (never forming the dense m x m covariance).
double log_marginal_likelihood(const GmrfPrior& prior,
                               const ObservationSet& obs);

/// Hyperparameters of the source-reconstruction model. `noise_ratio` is
/// v = sigma2_eps / sigma2_f, the parameterization under which the source
/// variance admits a conjugate update.
struct HyperParams {
  double range = 1.0;
  double diffusion = 1.0;
  double decay = 1.0;
  double sigma2_f = 1.0;
  double noise_ratio = 1.0;
  std::optional<double> beta_ratio;

  double sigma2_eps() const { return noise_ratio * sigma2_f; }
};

struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;
  double log_density(double x) const;
};

struct InverseGammaPrior {
  double shape = 1.0;
  double scale = 1.0;
  double log_density(double x) const;
};

/// Everything held fixed across a chain: discretized geometry/dynamics,
/// observations, and the optional fixed-effect design. Diffusion and decay
/// are re-applied per proposal via with_coefficients; advection stays as
/// assembled. The source smoothness exponent is fixed at alpha = 2.
struct McmcModel {
  FemSystem sys;
  ObservationSet obs;  ///< obs.sigma2_eps is ignored; noise comes from params
  std::optional<RegressionDesign> design;
};

/// Sampler configuration. `iterations` counts all sweeps including burn-in;
/// retained samples are every `thinning`-th post-burn-in sweep. A step size
/// <= 0 freezes that parameter at its initial value (point-mass prior).
struct McmcConfig {
  GammaPrior range_prior;
  GammaPrior diffusion_prior;
  GammaPrior decay_prior;
  GammaPrior ratio_prior;
  InverseGammaPrior sigma2_prior;
  std::optional<GammaPrior> beta_ratio_prior;

  int chains = 4;
  int iterations = 2000;
  int burn_in = 1000;
  int thinning = 1;

  double step_range = 0.3;
  double step_diffusion = 0.3;
  double step_decay = 0.3;
  double step_ratio = 0.3;
  double step_beta = 0.3;
  bool sample_sigma2 = true;
  bool adapt = true;        ///< tune step sizes during burn-in
  bool second_stage = true; ///< accumulate u|y, f|y draws per retained sample
  int workers = 0;          ///< max concurrent chains; 0 = one per chain
  std::uint64_t seed = 1;
  HyperParams init;
};

struct McmcChain {
  Mat samples;         ///< retained x parameter count
  Vec log_marginal;    ///< retained
  Mat accepted;        ///< retained x walk-parameter count, 0/1 flags
  Vec acceptance_rate; ///< post-burn-in mean acceptance per walk parameter
};

struct McmcResult {
  std::vector<std::string> param_names;  ///< column labels of `samples`
  std::vector<std::string> walk_names;   ///< column labels of `accepted`
  std::vector<McmcChain> chains;
  Vec u_mean, u_sd;        ///< pooled second-stage pointwise summaries
  Vec f_mean, f_sd;
  Vec beta_mean, beta_sd;  ///< empty without a design
};

/// Metropolis-within-Gibbs sampler: log-scale random-walk updates for range,
/// diffusion, decay, and the noise ratio against the marginal likelihood,
/// plus a conjugate inverse-gamma update of sigma2_f given a fresh latent
/// draw (holding sigma2_eps fixed). Chains run on independent seeds.
McmcResult run_mcmc(const McmcModel& model, const McmcConfig& cfg);

/// Unnormalized log posterior: marginal likelihood plus all prior densities.
double log_posterior_density(const McmcModel& model, const McmcConfig& cfg,
                             const HyperParams& p);

/// The exact Metropolis-Hastings log acceptance ratio the sampler uses for a
/// log-random-walk move current -> proposal, including the log-scale Jacobian
/// for every walk parameter that changed.
double mh_log_ratio(const McmcModel& model, const McmcConfig& cfg,
                    const HyperParams& current, const HyperParams& proposal);

/// One conjugate draw of sigma2_f given the latent solution `u`, holding
/// sigma2_eps fixed: IG(shape + n/2, scale + u^T Q1 u / 2) where Q1 is the
/// solution precision at unit source variance and the parameters in `p`.
double gibbs_sigma2_sample(const McmcModel& model, const McmcConfig& cfg,
                           const HyperParams& p, const Vec& u,
                           RandomStream& rng);

}  // namespace sourcerec
