#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sourcerec/types.hpp"

namespace sourcerec {

/* Deterministic random stream: fixed engine + fixed transforms so that a seed
   reproduces the same draws on every platform.  Box-Muller consumes exactly
   two uniforms per normal pair; the gamma sampler rejects deterministically. */
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  /* uniform on [0,1) */
  double uniform() {
    return (gen_() >> 11) * (1.0 / 9007199254740992.0); /* 53-bit mantissa */
  }

  /* standard normal via Box-Muller */
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Vec normal_vector(Eigen::Index n) {
    Vec z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  /* Gamma(shape, rate), Marsaglia-Tsang */
  double gamma(double shape, double rate) {
    if (shape <= 0.0 || rate <= 0.0)
      throw InvalidStep("gamma draw requires positive shape and rate");
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform();
      while (u <= 0.0) u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
        return d * v / rate;
    }
  }

  /* InverseGamma(shape, scale): 1/X with X ~ Gamma(shape, rate=scale) */
  double inverse_gamma(double shape, double scale) {
    return 1.0 / gamma(shape, scale);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sourcerec
