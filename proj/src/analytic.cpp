#include "epsad/analytic.hpp"

#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

#include "epsad/errors.hpp"

namespace epsad {

GaussianWorld::GaussianWorld(Vec mu, double var) : mu_x(std::move(mu)), sigma_x2(var) {
  if (!(var > 0.0) || !std::isfinite(var)) throw InputError("GaussianWorld: sigma_x2 must be > 0");
  if (mu_x.size() == 0 || !mu_x.allFinite()) throw InputError("GaussianWorld: invalid mean");
}

double GaussianWorld::marginal_variance(const NoiseSchedule& sched, double t) const {
  const double g = sched.gamma(t);
  return g * g * sigma_x2 + sched.sigma2(t);
}

void to_json(nlohmann::json& j, const GaussianWorld& w) {
  j = nlohmann::json{{"mu_x", std::vector<double>(w.mu_x.data(), w.mu_x.data() + w.mu_x.size())},
                     {"sigma_x2", w.sigma_x2}};
}

void from_json(const nlohmann::json& j, GaussianWorld& w) {
  const auto mu = j.at("mu_x").get<std::vector<double>>();
  w = GaussianWorld(Eigen::Map<const Vec>(mu.data(), static_cast<Eigen::Index>(mu.size())),
                    j.at("sigma_x2").get<double>());
}

Vec analytic_score(const GaussianWorld& world, const NoiseSchedule& sched, const Vec& x_t, double t) {
  if (x_t.size() != world.dim()) throw InputError("analytic_score: dimension mismatch");
  if (!x_t.allFinite()) throw InputError("analytic_score: non-finite input");
  const double g = sched.gamma(t);
  const double v = g * g * world.sigma_x2 + sched.sigma2(t);
  return -(x_t - g * world.mu_x) / v;
}

namespace {

void check_timesteps(const NoiseSchedule& sched, std::span<const double> timesteps) {
  if (timesteps.empty()) throw ConfigError("EPS theory needs at least one timestep");
  for (double t : timesteps) sched.check_time(t);
}

}  // namespace

double eps_variance(const GaussianWorld& world, const NoiseSchedule& sched,
                    std::span<const double> timesteps) {
  check_timesteps(sched, timesteps);
  double acc = 0.0;
  for (double t : timesteps) acc += 1.0 / world.marginal_variance(sched, t);
  return acc / static_cast<double>(timesteps.size());
}

Vec eps_shift(const GaussianWorld& world, const NoiseSchedule& sched, const Vec& epsilon,
              std::span<const double> timesteps) {
  if (epsilon.size() != world.dim()) throw InputError("eps_shift: dimension mismatch");
  return epsilon * eps_variance(world, sched, timesteps);
}

EpsTheory eps_theory(const GaussianWorld& world, const NoiseSchedule& sched, const Vec& epsilon,
                     std::span<const double> timesteps) {
  return {eps_shift(world, sched, epsilon, timesteps), eps_variance(world, sched, timesteps)};
}

double noncentral_chi2_cdf(double x, double d, double lambda) {
  if (!(x >= 0.0) || !(d >= 1.0) || !(lambda >= 0.0))
    throw DomainError("noncentral_chi2_cdf requires x >= 0, d >= 1, lambda >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  const double half_x = 0.5 * x;
  const double mean = 0.5 * lambda;
  if (mean == 0.0) return boost::math::gamma_p(0.5 * d, half_x);

  constexpr double kTailMass = 1e-12;
  const double log_mean = std::log(mean);
  double mass = 0.0;
  double cdf = 0.0;
  for (long j = 0;; ++j) {
    const double jd = static_cast<double>(j);
    const double w = std::exp(-mean + jd * log_mean - std::lgamma(jd + 1.0));
    mass += w;
    if (w > 0.0) cdf += w * boost::math::gamma_p(0.5 * d + jd, half_x);
    // Past the Poisson mode the remaining mass is what was not summed yet.
    if (jd > mean && 1.0 - mass < kTailMass) break;
    if (j > 100000 + static_cast<long>(10.0 * mean)) break;
  }
  return std::min(1.0, cdf);
}

double kernel_exceed_prob(double eta, double sigma_kernel, double sigma_S2, const Vec& mu_S) {
  if (!(eta > 0.0 && eta < 1.0)) throw DomainError("kernel_exceed_prob: eta must lie in (0, 1)");
  if (!(sigma_kernel > 0.0) || !(sigma_S2 > 0.0))
    throw DomainError("kernel_exceed_prob: bandwidth and sigma_S2 must be positive");
  if (mu_S.size() == 0) throw InputError("kernel_exceed_prob: empty mean vector");
  const double threshold = -sigma_kernel * sigma_kernel * std::log(eta) / sigma_S2;
  const double lambda = mu_S.squaredNorm() / (2.0 * sigma_S2);
  return noncentral_chi2_cdf(threshold, static_cast<double>(mu_S.size()), lambda);
}

}  // namespace epsad
