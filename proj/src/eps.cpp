#include "epsad/eps.hpp"

#include <cmath>

#include "epsad/errors.hpp"

namespace epsad {

std::vector<double> TimeGrid::times() const {
  std::vector<double> t(static_cast<std::size_t>(std::max(T_star, 0)));
  for (int i = 1; i <= T_star; ++i) t[i - 1] = time(i);
  return t;
}

void TimeGrid::validate(const NoiseSchedule& sched) const {
  if (T_star < 1) throw ConfigError("time grid needs T_star >= 1");
  if (!(step > 0.0)) throw ConfigError("time grid step must be > 0");
  if (!(time(1) > 0.0)) throw ConfigError("time grid must start strictly after t = 0");
  if (!(time(T_star) <= sched.t_max()))
    throw ConfigError("time grid t(" + std::to_string(T_star) + ") = " + std::to_string(time(T_star)) +
                      " exceeds t_max");
}

void to_json(nlohmann::json& j, const TimeGrid& g) {
  j = nlohmann::json{{"T_star", g.T_star}, {"step", g.step}, {"offset", g.offset}};
}

void from_json(const nlohmann::json& j, TimeGrid& g) {
  const TimeGrid d;
  g.T_star = j.value("T_star", d.T_star);
  g.step = j.value("step", d.step);
  g.offset = j.value("offset", d.offset);
}

std::string to_string(PerturbMode m) {
  switch (m) {
    case PerturbMode::kIndependent: return "independent";
    case PerturbMode::kChained: return "chained";
    case PerturbMode::kNone: return "none";
  }
  return "independent";
}

PerturbMode perturb_mode_from_string(const std::string& s) {
  if (s == "independent") return PerturbMode::kIndependent;
  if (s == "chained") return PerturbMode::kChained;
  if (s == "none") return PerturbMode::kNone;
  throw ConfigError("unknown perturbation mode '" + s + "'");
}

ScoreSource ScoreSource::analytic(GaussianWorld world, NoiseSchedule sched) {
  return ScoreSource(std::move(world), sched);
}

ScoreSource ScoreSource::learned(std::shared_ptr<const ScoreNet> net, NoiseSchedule sched) {
  if (!net) throw ConfigError("learned score source needs a score network");
  return ScoreSource(std::move(net), sched);
}

Eigen::Index ScoreSource::dim() const {
  if (const auto* w = std::get_if<GaussianWorld>(&scorer_)) return w->dim();
  return std::get<std::shared_ptr<const ScoreNet>>(scorer_)->dim();
}

Vec ScoreSource::score(const Vec& x, double t) const {
  sched_.check_time(t);
  if (const auto* w = std::get_if<GaussianWorld>(&scorer_)) return analytic_score(*w, sched_, x, t);
  return std::get<std::shared_ptr<const ScoreNet>>(scorer_)->forward(x, t);
}

Mat ScoreSource::score_batch(const Mat& x, std::span<const double> t) const {
  if (static_cast<std::size_t>(x.cols()) != t.size()) throw InputError("score_batch: shape mismatch");
  for (double ti : t) sched_.check_time(ti);
  if (const auto* w = std::get_if<GaussianWorld>(&scorer_)) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.cols(); ++b) out.col(b) = analytic_score(*w, sched_, x.col(b), t[b]);
    return out;
  }
  return std::get<std::shared_ptr<const ScoreNet>>(scorer_)->forward_batch(x, t);
}

namespace {

void check_sample(const ScoreSource& src, const Vec& x) {
  if (x.size() != src.dim()) throw InputError("EPS: sample dimension mismatch");
  if (!x.allFinite()) throw InputError("EPS: non-finite sample");
}

EpsVector average_scores(const ScoreSource& src, const Mat& xt, const std::vector<double>& times,
                         std::uint64_t seed) {
  const Mat s = src.score_batch(xt, times);
  return {s.rowwise().mean(), static_cast<int>(times.size()), seed};
}

}  // namespace

EpsVector compute_eps_with_noise(const ScoreSource& src, const Vec& x, const TimeGrid& grid,
                                 const Mat& z) {
  check_sample(src, x);
  grid.validate(src.schedule());
  if (z.rows() != x.size() || z.cols() != grid.T_star) throw InputError("EPS: noise shape mismatch");
  const auto times = grid.times();
  Mat xt(x.size(), grid.T_star);
  for (int i = 0; i < grid.T_star; ++i)
    xt.col(i) = src.schedule().perturb_with_noise(x, times[i], z.col(i));
  return average_scores(src, xt, times, 0);
}

EpsVector compute_eps(const ScoreSource& src, const Vec& x, const TimeGrid& grid, Rng& rng,
                      PerturbMode mode) {
  check_sample(src, x);
  grid.validate(src.schedule());
  const NoiseSchedule& sched = src.schedule();
  const auto times = grid.times();
  Mat xt(x.size(), grid.T_star);
  switch (mode) {
    case PerturbMode::kIndependent:
      for (int i = 0; i < grid.T_star; ++i) xt.col(i) = sched.perturb(x, times[i], rng);
      break;
    case PerturbMode::kChained: {
      Vec cur = x;
      double g_prev = 1.0, s2_prev = 0.0;
      for (int i = 0; i < grid.T_star; ++i) {
        const double g = sched.gamma(times[i]);
        const double s2 = sched.sigma2(times[i]);
        const double a = g / g_prev;
        const double var = std::max(0.0, s2 - a * a * s2_prev);
        cur = a * cur + std::sqrt(var) * rng.normal_vector(x.size());
        xt.col(i) = cur;
        g_prev = g;
        s2_prev = s2;
      }
      break;
    }
    case PerturbMode::kNone:
      for (int i = 0; i < grid.T_star; ++i) xt.col(i) = sched.gamma(times[i]) * x;
      break;
  }
  return average_scores(src, xt, times, rng.seed());
}

double eps_norm(const EpsVector& s) { return s.values.squaredNorm(); }

double single_score_norm(const ScoreSource& src, const Vec& x, double t_star, Rng& rng,
                         PerturbMode mode) {
  if (!(t_star > 0.0 && t_star <= src.schedule().t_max()))
    throw DomainError("single_score_norm: t* must lie in (0, t_max]");
  check_sample(src, x);
  const Vec xt = mode == PerturbMode::kNone ? Vec(src.schedule().gamma(t_star) * x)
                                            : src.schedule().perturb(x, t_star, rng);
  return src.score(xt, t_star).squaredNorm();
}

}  // namespace epsad
