#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "epsad/analytic.hpp"
#include "epsad/scorenet.hpp"

namespace epsad {

// Integer timestep grid i = 1..T_star mapped onto diffusion time by the
// affine rule t(i) = offset + step * i.
//
// The default step of 1e-3 places grid index i at the noise level of step i
// of a 1000-step discretisation of a unit-horizon VP process; with the
// default (0.1, 20, 1000) schedule, t(20) keeps gamma^2 above 0.99.
// step = 1 gives the raw integer clock t(i) = i.
struct TimeGrid {
  int T_star = 20;
  double step = 1e-3;
  double offset = 0.0;

  double time(int i) const { return offset + step * static_cast<double>(i); }
  std::vector<double> times() const;
  void validate(const NoiseSchedule& sched) const;

  // Grid of one point located at diffusion time t.
  static TimeGrid single(double t) { return {1, t, 0.0}; }
};

void to_json(nlohmann::json& j, const TimeGrid& g);
void from_json(const nlohmann::json& j, TimeGrid& g);

// How the perturbed versions of x0 are drawn for each grid time:
//   independent  fresh draw from p_0t(. | x0) at every grid point
//   chained      one forward trajectory through the grid times (same marginals)
//   none         deterministic part only, x_t := gamma_t x0
enum class PerturbMode { kIndependent, kChained, kNone };

std::string to_string(PerturbMode m);
PerturbMode perturb_mode_from_string(const std::string& s);

// Analytic Gaussian-world score or a learned score network, behind one
// (x, t) -> score contract.
class ScoreSource {
 public:
  static ScoreSource analytic(GaussianWorld world, NoiseSchedule sched);
  static ScoreSource learned(std::shared_ptr<const ScoreNet> net, NoiseSchedule sched);

  const NoiseSchedule& schedule() const noexcept { return sched_; }
  bool is_analytic() const noexcept { return std::holds_alternative<GaussianWorld>(scorer_); }
  Eigen::Index dim() const;

  Vec score(const Vec& x, double t) const;
  // x: d x B, one time per column.
  Mat score_batch(const Mat& x, std::span<const double> t) const;

 private:
  ScoreSource(std::variant<GaussianWorld, std::shared_ptr<const ScoreNet>> s, NoiseSchedule sched)
      : scorer_(std::move(s)), sched_(sched) {}

  std::variant<GaussianWorld, std::shared_ptr<const ScoreNet>> scorer_;
  NoiseSchedule sched_;
};

struct EpsVector {
  Vec values;
  int T_star = 0;
  std::uint64_t seed = 0;
};

// S(x) = (1/T*) sum_i score(x_{t(i)}, t(i)), x_{t(i)} drawn from x per mode.
EpsVector compute_eps(const ScoreSource& src, const Vec& x, const TimeGrid& grid, Rng& rng,
                      PerturbMode mode = PerturbMode::kIndependent);

// Independent mode with the standard-normal draws given explicitly (d x T*).
EpsVector compute_eps_with_noise(const ScoreSource& src, const Vec& x, const TimeGrid& grid,
                                 const Mat& z);

double eps_norm(const EpsVector& s);

// ||score(x_{t*}, t*)||^2 with one draw of x_{t*} (the single-timestep baseline).
double single_score_norm(const ScoreSource& src, const Vec& x, double t_star, Rng& rng,
                         PerturbMode mode = PerturbMode::kIndependent);

}  // namespace epsad
