#pragma once

#include <json.hpp>

#include "epsad/rng.hpp"

namespace epsad {

// Linear variance-preserving noise schedule
//   beta(t)  = beta_min + (beta_max - beta_min) t / t_max
//   B(t)     = int_0^t beta = beta_min t + (beta_max - beta_min) t^2 / (2 t_max)
//   gamma_t  = exp(-B(t)/2),  sigma_t^2 = 1 - exp(-B(t))
// Transition kernel p_0t(x_t | x_0) = N(gamma_t x_0, sigma_t^2 I).
class NoiseSchedule {
 public:
  NoiseSchedule(double beta_min = 0.1, double beta_max = 20.0, double t_max = 1000.0);

  // beta == 0 everywhere; perturb is the identity.
  static NoiseSchedule zero(double t_max = 1000.0) { return {0.0, 0.0, t_max}; }

  double beta_min() const noexcept { return beta_min_; }
  double beta_max() const noexcept { return beta_max_; }
  double t_max() const noexcept { return t_max_; }

  double beta(double t) const;
  double integrated_beta(double t) const;
  double gamma(double t) const;
  double sigma2(double t) const;
  double sigma(double t) const;

  // gamma_t x0 + sigma_t z, z ~ N(0, I) drawn component-wise from rng.
  Vec perturb(const Vec& x0, double t, Rng& rng) const;
  // Same map with the standard-normal draw supplied by the caller.
  Vec perturb_with_noise(const Vec& x0, double t, const Vec& z) const;

  void check_time(double t) const;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  double beta_min_;
  double beta_max_;
  double t_max_;
};

void to_json(nlohmann::json& j, const NoiseSchedule& s);
void from_json(const nlohmann::json& j, NoiseSchedule& s);

}  // namespace epsad
