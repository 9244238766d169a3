#include "epsad/schedule.hpp"

#include <cmath>
#include <string>

#include "epsad/errors.hpp"

namespace epsad {

NoiseSchedule::NoiseSchedule(double beta_min, double beta_max, double t_max)
    : beta_min_(beta_min), beta_max_(beta_max), t_max_(t_max) {
  if (!(beta_min >= 0.0) || !(beta_max >= beta_min))
    throw DomainError("noise schedule requires 0 <= beta_min <= beta_max");
  if (!(t_max > 0.0) || !std::isfinite(t_max))
    throw DomainError("noise schedule requires t_max > 0");
}

void NoiseSchedule::check_time(double t) const {
  if (!(t >= 0.0 && t <= t_max_))
    throw DomainError("time " + std::to_string(t) + " outside [0, " + std::to_string(t_max_) + "]");
}

double NoiseSchedule::beta(double t) const {
  check_time(t);
  return beta_min_ + (beta_max_ - beta_min_) * t / t_max_;
}

double NoiseSchedule::integrated_beta(double t) const {
  check_time(t);
  return beta_min_ * t + (beta_max_ - beta_min_) * t * t / (2.0 * t_max_);
}

double NoiseSchedule::gamma(double t) const { return std::exp(-0.5 * integrated_beta(t)); }

// -expm1 keeps full relative precision for the tiny variances near t = 0.
double NoiseSchedule::sigma2(double t) const { return -std::expm1(-integrated_beta(t)); }

double NoiseSchedule::sigma(double t) const { return std::sqrt(sigma2(t)); }

Vec NoiseSchedule::perturb(const Vec& x0, double t, Rng& rng) const {
  check_time(t);
  const Vec z = rng.normal_vector(x0.size());
  return perturb_with_noise(x0, t, z);
}

Vec NoiseSchedule::perturb_with_noise(const Vec& x0, double t, const Vec& z) const {
  if (!x0.allFinite()) throw InputError("perturb: non-finite input");
  if (z.size() != x0.size()) throw InputError("perturb: noise dimension mismatch");
  const double b = integrated_beta(t);
  if (b == 0.0) return x0;
  return std::exp(-0.5 * b) * x0 + std::sqrt(-std::expm1(-b)) * z;
}

void to_json(nlohmann::json& j, const NoiseSchedule& s) {
  j = nlohmann::json{{"beta_min", s.beta_min()}, {"beta_max", s.beta_max()}, {"t_max", s.t_max()}};
}

void from_json(const nlohmann::json& j, NoiseSchedule& s) {
  const NoiseSchedule d;
  s = NoiseSchedule(j.value("beta_min", d.beta_min()), j.value("beta_max", d.beta_max()),
                    j.value("t_max", d.t_max()));
}

}  // namespace epsad
