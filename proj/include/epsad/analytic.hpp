#pragma once

#include <span>

#include <json.hpp>

#include "epsad/schedule.hpp"

namespace epsad {

// Isotropic Gaussian data distribution N(mu_x, sigma_x2 I). Every perturbed
// marginal p_t is Gaussian too, which makes scores and EPS moments closed form.
struct GaussianWorld {
  Vec mu_x;
  double sigma_x2 = 1.0;

  GaussianWorld() = default;
  GaussianWorld(Vec mu, double var);

  Eigen::Index dim() const noexcept { return mu_x.size(); }

  // Variance of the perturbed marginal at time t: gamma_t^2 sigma_x2 + sigma_t^2.
  double marginal_variance(const NoiseSchedule& sched, double t) const;
};

void to_json(nlohmann::json& j, const GaussianWorld& w);
void from_json(const nlohmann::json& j, GaussianWorld& w);

// Predicted EPS moments: S(x) - S(y_hat) ~ N(mu_S, 2 sigma_S2 I).
struct EpsTheory {
  Vec mu_S;
  double sigma_S2 = 0.0;
};

// -(x_t - gamma_t mu_x) / (gamma_t^2 sigma_x2 + sigma_t^2)
Vec analytic_score(const GaussianWorld& world, const NoiseSchedule& sched, const Vec& x_t, double t);

// Uniform average over the timesteps of epsilon / (gamma_t^2 sigma_x2 + sigma_t^2).
Vec eps_shift(const GaussianWorld& world, const NoiseSchedule& sched, const Vec& epsilon,
              std::span<const double> timesteps);

// Uniform average over the timesteps of 1 / (gamma_t^2 sigma_x2 + sigma_t^2).
double eps_variance(const GaussianWorld& world, const NoiseSchedule& sched,
                    std::span<const double> timesteps);

EpsTheory eps_theory(const GaussianWorld& world, const NoiseSchedule& sched, const Vec& epsilon,
                     std::span<const double> timesteps);

// P(X <= x) for X ~ noncentral chi-square(d, lambda), Poisson-mixture series
// truncated once the unsummed Poisson mass drops below 1e-12.
double noncentral_chi2_cdf(double x, double d, double lambda);

// P{ k(S(x), S(y_hat)) > eta } for the Gaussian kernel of bandwidth
// sigma_kernel, with S(x) - S(y_hat) ~ N(mu_S, 2 sigma_S2 I):
//   threshold C = -sigma_kernel^2 ln(eta) / sigma_S2
//   noncentrality lambda = ||mu_S||^2 / (2 sigma_S2)
double kernel_exceed_prob(double eta, double sigma_kernel, double sigma_S2, const Vec& mu_S);

}  // namespace epsad
