#include <cmath>
#include <thread>
#include <vector>

#include "sourcerec/inference.hpp"

namespace sourcerec {

double GammaPrior::log_density(double x) const {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(x) - rate * x;
}

double InverseGammaPrior::log_density(double x) const {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(scale) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - scale / x;
}

namespace {

constexpr std::uint64_t kSeedStride = 0x9E3779B97F4A7C15ULL;

void validate(const McmcModel& model, const McmcConfig& cfg) {
  if (cfg.chains < 1) throw ConfigInvalid("need at least one chain");
  if (cfg.iterations <= cfg.burn_in)
    throw ConfigInvalid("iterations must exceed burn_in");
  if (cfg.burn_in < 0) throw ConfigInvalid("burn_in must be nonnegative");
  if (cfg.thinning < 1) throw ConfigInvalid("thinning must be at least 1");
  const HyperParams& p = cfg.init;
  if (!(p.range > 0.0 && p.diffusion > 0.0 && p.decay > 0.0 &&
        p.sigma2_f > 0.0 && p.noise_ratio > 0.0))
    throw ConfigInvalid("initial hyperparameters must be strictly positive");
  if (model.design && cfg.sample_sigma2 && !p.beta_ratio)
    throw ConfigInvalid(
        "sampling sigma2_f alongside fixed effects requires beta_ratio so "
        "the coefficient prior scales with the source variance");
  if (p.beta_ratio && !(*p.beta_ratio > 0.0))
    throw ConfigInvalid("beta_ratio must be strictly positive");
  if (model.obs.y.size() != model.obs.A.rows())
    throw ShapeMismatch("observation vector does not match matrix rows");
}

/* Widen an observation matrix with zero coefficient columns. */
SpMat widen(const SpMat& A, Eigen::Index n_joint) {
  SpMat wide(A.rows(), n_joint);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(A.nonZeros()));
  for (Eigen::Index k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it)
      trips.emplace_back(it.row(), it.col(), it.value());
  wide.setFromTriplets(trips.begin(), trips.end());
  return wide;
}

/* Latent prior (over u, or stacked (u, beta)) at the given hyperparameters. */
GmrfPrior latent_prior(const McmcModel& model, const HyperParams& p) {
  const FemSystem sys = with_coefficients(model.sys, p.diffusion, p.decay);
  MaternHyper hyper;
  hyper.range = p.range;
  hyper.variance = p.sigma2_f;
  hyper.alpha = 2;
  const GmrfPrior f_prior = matern_precision(sys, hyper);
  if (!model.design) return steady_solution_prior(sys, f_prior);
  RegressionDesign design = *model.design;
  if (p.beta_ratio)
    design.variance_scale = std::sqrt(*p.beta_ratio * p.sigma2_f);
  return regression_joint_precision(sys, f_prior, design);
}

double log_prior_density(const McmcConfig& cfg, const HyperParams& p) {
  double lp = cfg.range_prior.log_density(p.range) +
              cfg.diffusion_prior.log_density(p.diffusion) +
              cfg.decay_prior.log_density(p.decay) +
              cfg.ratio_prior.log_density(p.noise_ratio) +
              cfg.sigma2_prior.log_density(p.sigma2_f);
  if (cfg.beta_ratio_prior && p.beta_ratio)
    lp += cfg.beta_ratio_prior->log_density(*p.beta_ratio);
  return lp;
}

/* Everything the chain needs about its current position: the latent prior
   (factored), the kriged posterior, the source map at these coefficients,
   and the two density values. */
struct ChainState {
  HyperParams params;
  GmrfPrior prior;
  PosteriorGaussian post;
  SpMat push;  /* latent -> source values */
  double lml = 0.0;
  double log_post = 0.0;
};

ChainState evaluate_state(const McmcModel& model, const McmcConfig& cfg,
                          const HyperParams& p, const SpMat& A_eff) {
  ChainState st;
  st.params = p;
  st.prior = latent_prior(model, p);
  ensure_factor(st.prior);

  ObservationSet obs;
  obs.A = A_eff;
  obs.y = model.obs.y;
  obs.sigma2_eps = p.sigma2_eps();
  st.post = krige_solution(st.prior, obs);

  /* Marginal likelihood from the two factors already in hand. */
  const Vec d = obs.y - obs.A * st.prior.mean;
  const double quad = stabilized_quadform(st.post.factor, obs.A,
                                          obs.sigma2_eps, d);
  const double m = static_cast<double>(obs.A.rows());
  st.lml = -0.5 * (m * std::log(2.0 * M_PI * obs.sigma2_eps) +
                   logdet(st.post.factor) - logdet(*st.prior.factor) + quad);
  st.log_post = st.lml + log_prior_density(cfg, p);

  const FemSystem sys = with_coefficients(model.sys, p.diffusion, p.decay);
  const Vec linv = sys.lumped_mass.diagonal().cwiseInverse();
  const SpMat to_f = SpMat(linv.asDiagonal() * sys.stiffness);
  st.push = model.design ? widen(to_f, st.prior.Q.rows()) : to_f;
  return st;
}

enum WalkParam { kRange = 0, kDiffusion, kDecay, kRatio, kBetaRatio };

double get_walk(const HyperParams& p, int which) {
  switch (which) {
    case kRange: return p.range;
    case kDiffusion: return p.diffusion;
    case kDecay: return p.decay;
    case kRatio: return p.noise_ratio;
    default: return p.beta_ratio.value();
  }
}

void set_walk(HyperParams& p, int which, double value) {
  switch (which) {
    case kRange: p.range = value; break;
    case kDiffusion: p.diffusion = value; break;
    case kDecay: p.decay = value; break;
    case kRatio: p.noise_ratio = value; break;
    default: p.beta_ratio = value; break;
  }
}

struct SecondStageAccum {
  Vec sum, sumsq;
  long count = 0;
  void add(const Vec& x) {
    if (sum.size() == 0) {
      sum = Vec::Zero(x.size());
      sumsq = Vec::Zero(x.size());
    }
    sum += x;
    sumsq += x.cwiseProduct(x);
    ++count;
  }
  void merge(const SecondStageAccum& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    sum += other.sum;
    sumsq += other.sumsq;
    count += other.count;
  }
  Vec mean() const { return sum / static_cast<double>(count); }
  Vec sd() const {
    if (count < 2) return Vec::Zero(sum.size());
    const Vec m = mean();
    const Vec var =
        (sumsq - static_cast<double>(count) * m.cwiseProduct(m)) /
        static_cast<double>(count - 1);
    return var.cwiseMax(0.0).cwiseSqrt();
  }
};

struct ChainOutput {
  McmcChain chain;
  SecondStageAccum u, f, beta;
};

ChainOutput run_chain(const McmcModel& model, const McmcConfig& cfg,
                      const SpMat& A_eff, Eigen::Index n_u,
                      std::uint64_t seed) {
  RandomStream rng(seed);
  const bool with_beta =
      model.design && cfg.init.beta_ratio && cfg.beta_ratio_prior;
  const int n_walk = with_beta ? 5 : 4;
  double steps[5] = {cfg.step_range, cfg.step_diffusion, cfg.step_decay,
                     cfg.step_ratio, cfg.step_beta};

  ChainState cur = evaluate_state(model, cfg, cfg.init, A_eff);

  const int retained =
      (cfg.iterations - cfg.burn_in + cfg.thinning - 1) / cfg.thinning;
  const int n_params = with_beta ? 6 : 5;
  ChainOutput out;
  out.chain.samples.resize(retained, n_params);
  out.chain.log_marginal.resize(retained);
  out.chain.accepted = Mat::Zero(retained, n_walk);
  out.chain.acceptance_rate = Vec::Zero(n_walk);

  int adapt_tries[5] = {0, 0, 0, 0, 0};
  int adapt_accepts[5] = {0, 0, 0, 0, 0};
  long post_tries[5] = {0, 0, 0, 0, 0};
  long post_accepts[5] = {0, 0, 0, 0, 0};
  double last_accept[5] = {0, 0, 0, 0, 0};
  int row = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    const bool burning = it < cfg.burn_in;
    for (int w = 0; w < n_walk; ++w) {
      if (steps[w] <= 0.0) {
        last_accept[w] = 0.0;
        continue;
      }
      const double old_value = get_walk(cur.params, w);
      HyperParams proposal = cur.params;
      const double new_value = old_value * std::exp(steps[w] * rng.normal());
      set_walk(proposal, w, new_value);
      /* Proposals outside the numerically representable support (e.g. a
         range so large the field precision loses definiteness) have zero
         posterior density: reject instead of aborting the chain. */
      ChainState cand;
      bool representable = true;
      try {
        cand = evaluate_state(model, cfg, proposal, A_eff);
      } catch (const NotPositiveDefinite&) {
        representable = false;
      } catch (const SingularOperator&) {
        representable = false;
      }
      const double log_ratio =
          representable ? cand.log_post - cur.log_post +
                              std::log(new_value) - std::log(old_value)
                        : -std::numeric_limits<double>::infinity();
      const bool accept =
          representable && std::log(rng.uniform() + 1e-300) < log_ratio;
      if (accept) cur = std::move(cand);
      last_accept[w] = accept ? 1.0 : 0.0;
      if (burning) {
        ++adapt_tries[w];
        adapt_accepts[w] += accept;
        if (cfg.adapt && adapt_tries[w] == 50) {
          const double rate = adapt_accepts[w] / 50.0;
          if (rate > 0.45) steps[w] *= 1.3;
          if (rate < 0.30) steps[w] /= 1.3;
          adapt_tries[w] = 0;
          adapt_accepts[w] = 0;
        }
      } else {
        ++post_tries[w];
        post_accepts[w] += accept;
      }
    }

    if (cfg.sample_sigma2) {
      /* Conjugate update holding sigma2_eps fixed: the latent precision at
         unit source variance is sigma2_f * Q, so the quadratic form needs no
         rebuild. The ratio then re-expresses the unchanged noise level. */
      const Vec latent = sample_gaussian(cur.post.factor, cur.post.mean, rng);
      const Vec centered = latent - cur.prior.mean;
      const double quad =
          cur.params.sigma2_f * centered.dot(cur.prior.Q * centered);
      const double shape =
          cfg.sigma2_prior.shape + 0.5 * static_cast<double>(latent.size());
      const double scale = cfg.sigma2_prior.scale + 0.5 * quad;
      const double sigma2_new = rng.inverse_gamma(shape, scale);
      /* Like rejected proposals, a drawn variance outside the numerically
         representable support (non-finite, or extreme enough that the
         refreshed precision loses definiteness) keeps the current state. */
      if (std::isfinite(sigma2_new) && sigma2_new > 0.0) {
        const double sigma2_eps = cur.params.sigma2_eps();
        HyperParams updated = cur.params;
        updated.sigma2_f = sigma2_new;
        updated.noise_ratio = sigma2_eps / sigma2_new;
        try {
          cur = evaluate_state(model, cfg, updated, A_eff);
        } catch (const NotPositiveDefinite&) {
        } catch (const SingularOperator&) {
        }
      }
    }

    if (!burning && (it - cfg.burn_in) % cfg.thinning == 0) {
      out.chain.samples(row, 0) = cur.params.range;
      out.chain.samples(row, 1) = cur.params.diffusion;
      out.chain.samples(row, 2) = cur.params.decay;
      out.chain.samples(row, 3) = cur.params.sigma2_f;
      out.chain.samples(row, 4) = cur.params.noise_ratio;
      if (with_beta) out.chain.samples(row, 5) = *cur.params.beta_ratio;
      out.chain.log_marginal[row] = cur.lml;
      for (int w = 0; w < n_walk; ++w)
        out.chain.accepted(row, w) = last_accept[w];
      if (cfg.second_stage) {
        const Vec latent =
            sample_gaussian(cur.post.factor, cur.post.mean, rng);
        out.u.add(latent.head(n_u));
        out.f.add(cur.push * latent);
        if (model.design) out.beta.add(latent.tail(latent.size() - n_u));
      }
      ++row;
    }
  }

  for (int w = 0; w < n_walk; ++w)
    out.chain.acceptance_rate[w] =
        post_tries[w] > 0
            ? static_cast<double>(post_accepts[w]) / post_tries[w]
            : 0.0;
  return out;
}

}  // namespace

McmcResult run_mcmc(const McmcModel& model, const McmcConfig& cfg) {
  validate(model, cfg);
  const Eigen::Index n_u = model.sys.lumped_mass.rows();
  SpMat A_eff = model.obs.A;
  if (model.design) {
    const Eigen::Index n_joint = n_u + model.design->X.cols();
    if (A_eff.cols() == n_u)
      A_eff = widen(A_eff, n_joint);
    else if (A_eff.cols() != n_joint)
      throw ShapeMismatch("observation matrix matches neither the solution "
                          "block nor the joint dimension");
  } else if (A_eff.cols() != n_u) {
    throw ShapeMismatch("observation matrix does not match the system");
  }

  std::vector<ChainOutput> outputs(static_cast<std::size_t>(cfg.chains));
  std::vector<std::exception_ptr> errors(
      static_cast<std::size_t>(cfg.chains));
  const int batch = cfg.workers > 0 ? cfg.workers : cfg.chains;
  for (int first = 0; first < cfg.chains; first += batch) {
    const int last = std::min(first + batch, cfg.chains);
    std::vector<std::thread> pool;
    for (int c = first; c < last; ++c) {
      pool.emplace_back([&, c]() {
        try {
          outputs[static_cast<std::size_t>(c)] =
              run_chain(model, cfg, A_eff, n_u,
                        cfg.seed + kSeedStride * static_cast<std::uint64_t>(
                                       c + 1));
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  McmcResult result;
  result.param_names = {"range", "diffusion", "decay", "sigma2_f",
                        "noise_ratio"};
  result.walk_names = {"range", "diffusion", "decay", "noise_ratio"};
  const bool with_beta =
      model.design && cfg.init.beta_ratio && cfg.beta_ratio_prior;
  if (with_beta) {
    result.param_names.push_back("beta_ratio");
    result.walk_names.push_back("beta_ratio");
  }

  SecondStageAccum u_acc, f_acc, beta_acc;
  for (auto& out : outputs) {
    result.chains.push_back(std::move(out.chain));
    u_acc.merge(out.u);
    f_acc.merge(out.f);
    beta_acc.merge(out.beta);
  }
  if (u_acc.count > 0) {
    result.u_mean = u_acc.mean();
    result.u_sd = u_acc.sd();
    result.f_mean = f_acc.mean();
    result.f_sd = f_acc.sd();
  }
  if (beta_acc.count > 0) {
    result.beta_mean = beta_acc.mean();
    result.beta_sd = beta_acc.sd();
  }
  return result;
}

double log_posterior_density(const McmcModel& model, const McmcConfig& cfg,
                             const HyperParams& p) {
  const Eigen::Index n_u = model.sys.lumped_mass.rows();
  SpMat A_eff = model.obs.A;
  if (model.design && A_eff.cols() == n_u)
    A_eff = widen(A_eff, n_u + model.design->X.cols());
  return evaluate_state(model, cfg, p, A_eff).log_post;
}

double mh_log_ratio(const McmcModel& model, const McmcConfig& cfg,
                    const HyperParams& current, const HyperParams& proposal) {
  double jacobian = 0.0;
  const auto walk_term = [&](double from, double to) {
    if (from != to) jacobian += std::log(to) - std::log(from);
  };
  walk_term(current.range, proposal.range);
  walk_term(current.diffusion, proposal.diffusion);
  walk_term(current.decay, proposal.decay);
  walk_term(current.noise_ratio, proposal.noise_ratio);
  if (current.beta_ratio && proposal.beta_ratio)
    walk_term(*current.beta_ratio, *proposal.beta_ratio);
  return log_posterior_density(model, cfg, proposal) -
         log_posterior_density(model, cfg, current) + jacobian;
}

double gibbs_sigma2_sample(const McmcModel& model, const McmcConfig& cfg,
                           const HyperParams& p, const Vec& u,
                           RandomStream& rng) {
  HyperParams unit = p;
  unit.sigma2_f = 1.0;
  const GmrfPrior prior = latent_prior(model, unit);
  if (u.size() != prior.Q.rows())
    throw ShapeMismatch("latent vector does not match the prior dimension");
  const Vec centered = u - prior.mean;
  const double quad = centered.dot(prior.Q * centered);
  const double shape =
      cfg.sigma2_prior.shape + 0.5 * static_cast<double>(u.size());
  const double scale = cfg.sigma2_prior.scale + 0.5 * quad;
  return rng.inverse_gamma(shape, scale);
}

}  // namespace sourcerec
