#include <doctest.h>

#include <cmath>

#include "epsad/analytic.hpp"
#include "epsad/eps.hpp"
#include "epsad/errors.hpp"
#include "epsad/mmd.hpp"

using namespace epsad;

namespace {

std::vector<Vec> random_set(Rng& rng, int n, int d, double scale = 1.0) {
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) out.push_back(scale * rng.normal_vector(d));
  return out;
}

DeepKernel random_deep(int d, std::uint64_t seed) {
  Rng rng(seed);
  DeepKernel k;
  k.featurizer = Mlp({d, 5, 3}, Activation::kSilu);
  k.featurizer.init(rng);
  k.input_shift = rng.normal_vector(d) * 0.1;
  k.input_scale = Vec::Constant(d, 1.3);
  k.eps0_logit = -1.2;
  k.log_sigma_phi = std::log(0.8);
  k.log_sigma_q = std::log(1.7);
  return k;
}

double gauss(const Vec& a, const Vec& b, double s) { return std::exp(-(a - b).squaredNorm() / (2 * s * s)); }

// Hand expansion of the deep kernel with independently computed pieces.
double deep_oracle(const DeepKernel& k, const Vec& a, const Vec& b) {
  const Vec sa = (a - k.input_shift).cwiseQuotient(k.input_scale);
  const Vec sb = (b - k.input_shift).cwiseQuotient(k.input_scale);
  const Vec pa = k.featurizer.forward(sa).col(0);
  const Vec pb = k.featurizer.forward(sb).col(0);
  const double e0 = 1.0 / (1.0 + std::exp(-k.eps0_logit));
  const double kappa = gauss(pa, pb, std::exp(k.log_sigma_phi));
  const double q = gauss(a, b, std::exp(k.log_sigma_q));
  return ((1 - e0) * kappa + e0) * q;
}

double brute_biased(const KernelSpec& k, const std::vector<Vec>& r, const Vec& y) {
  const double n = static_cast<double>(r.size());
  double a = 0.0, b = 0.0;
  for (const auto& xi : r)
    for (const auto& xj : r) a += kernel_eval(k, xi, xj);
  for (const auto& xi : r) b += kernel_eval(k, xi, y);
  return a / (n * n) - 2.0 * b / n + kernel_eval(k, y, y);
}

double brute_set(const KernelSpec& k, const std::vector<Vec>& x, const std::vector<Vec>& y) {
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  double a = 0.0, b = 0.0, c = 0.0;
  for (const auto& i : x)
    for (const auto& j : x) a += kernel_eval(k, i, j);
  for (const auto& i : y)
    for (const auto& j : y) b += kernel_eval(k, i, j);
  for (const auto& i : x)
    for (const auto& j : y) c += kernel_eval(k, i, j);
  return a / (n * n) + b / (m * m) - 2.0 * c / (n * m);
}

// Row-by-row expansion of the paired U-statistic and its variance estimate.
PowerCriterion criterion_oracle(const KernelSpec& k, const std::vector<Vec>& x, const std::vector<Vec>& y,
                                double scale = 1.0) {
  const std::size_t m = x.size();
  std::vector<std::vector<double>> h(m, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      h[i][j] = scale * (kernel_eval(k, x[i], x[j]) + kernel_eval(k, y[i], y[j]) - kernel_eval(k, x[i], y[j]) -
                         kernel_eval(k, y[i], x[j]));
  const double md = static_cast<double>(m);
  double off = 0.0, all = 0.0, v1 = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row += h[i][j];
      if (i != j) off += h[i][j];
    }
    all += row;
    v1 += (row / md) * (row / md);
  }
  v1 /= md;
  const double v2 = all / (md * md);
  PowerCriterion c;
  c.mmd2_u = off / (md * (md - 1));
  c.variance = 4 * (v1 - v2 * v2);
  c.value = c.mmd2_u / std::sqrt(c.variance + 1e-8);
  return c;
}

}  // namespace

TEST_CASE("kernel values: unit diagonal, symmetry, closed form") {
  Rng rng(1);
  const KernelSpec g = GaussianKernel{0.7};
  const KernelSpec d = random_deep(3, 2);
  for (int k = 0; k < 100; ++k) {
    const Vec a = rng.normal_vector(3), b = rng.normal_vector(3);
    for (const auto& spec : {g, d}) {
      CHECK(std::abs(kernel_eval(spec, a, a) - 1.0) <= 1e-12);
      CHECK(std::abs(kernel_eval(spec, a, b) - kernel_eval(spec, b, a)) <= 1e-12);
      const double v = kernel_eval(spec, a, b);
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
    }
  }
  Vec a = Vec::Zero(2), b(2);
  b << 0.7, 0.7;  // ||a - b||^2 = 0.98 = 2 sigma^2
  CHECK(kernel_eval(g, a, b) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK_THROWS_AS(kernel_eval(g, a, Vec::Zero(3)), InputError);
}

TEST_CASE("deep kernel matches a hand expansion") {
  Rng rng(3);
  const DeepKernel k = random_deep(4, 9);
  const KernelSpec spec = k;
  for (int i = 0; i < 30; ++i) {
    const Vec a = rng.normal_vector(4), b = rng.normal_vector(4);
    CHECK(std::abs(kernel_eval(spec, a, b) - deep_oracle(k, a, b)) <= 1e-12);
  }
}

TEST_CASE("mmd2_biased trivial cases") {
  const KernelSpec g = GaussianKernel{1.0};
  const Vec a = Vec::Constant(2, 0.3);
  const std::vector<Vec> one{a};
  CHECK(std::abs(mmd2_biased(g, one, a)) <= 1e-15);
  const std::vector<Vec> same(5, a);
  const Vec y = Vec::Constant(2, -0.4);
  CHECK(mmd2_biased(g, same, y) == doctest::Approx(2.0 * (1.0 - kernel_eval(g, a, y))).epsilon(1e-13));
  CHECK_THROWS_AS(mmd2_biased(g, std::vector<Vec>{}, y), InputError);
}

TEST_CASE("mmd estimators match brute-force loops") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + static_cast<int>(rng.index(4));
    const int n = 1 + static_cast<int>(rng.index(5));
    const int m = 1 + static_cast<int>(rng.index(5));
    const KernelSpec spec = trial % 2 ? KernelSpec{GaussianKernel{rng.uniform(0.3, 3.0)}}
                                      : KernelSpec{random_deep(d, 100 + trial)};
    const auto x = random_set(rng, n, d), y = random_set(rng, m, d);
    CHECK(std::abs(mmd2_biased(spec, x, y.front()) - brute_biased(spec, x, y.front())) <= 1e-12);
    CHECK(std::abs(mmd2_set(spec, x, y) - brute_set(spec, x, y)) <= 1e-12);
    CHECK(mmd2_biased(spec, x, y.front()) >= -1e-12);
    CHECK(std::abs(mmd2_set(spec, x, y) - mmd2_set(spec, y, x)) <= 1e-12);
    CHECK(std::abs(mmd2_set(spec, x, x)) <= 1e-12);
    CHECK(std::abs(mmd2_set(spec, x, std::vector<Vec>{y.front()}) - mmd2_biased(spec, x, y.front())) <= 1e-12);

    const MmdReference ref(spec, x);
    CHECK(std::abs(ref.statistic(y.front()) - brute_biased(spec, x, y.front())) <= 1e-12);
  }
}

TEST_CASE("median heuristic") {
  std::vector<Vec> two{Vec::Zero(2), Vec::Zero(2)};
  two[1] << 1.0, 1.0;
  CHECK(median_heuristic(two) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<Vec> three(3, Vec::Zero(1));
  three[1][0] = 1.0;
  three[2][0] = 3.0;  // squared distances 1, 9, 4
  CHECK(2 * std::pow(median_heuristic(three), 2) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK_THROWS_AS(median_heuristic(std::vector<Vec>(4, Vec::Ones(2))), InputError);
  CHECK_THROWS_AS(median_heuristic(std::vector<Vec>{Vec::Ones(2)}), InputError);
}

TEST_CASE("power criterion matches the hand expansion") {
  Rng rng(5);
  const auto x = random_set(rng, 4, 2);
  auto y = random_set(rng, 4, 2);
  for (auto& v : y) v.array() += 0.8;
  for (const KernelSpec& spec : {KernelSpec{GaussianKernel{0.9}}, KernelSpec{random_deep(2, 6)}}) {
    const PowerCriterion a = power_criterion(spec, x, y);
    const PowerCriterion b = criterion_oracle(spec, x, y);
    CHECK(std::abs(a.mmd2_u - b.mmd2_u) <= 1e-10);
    CHECK(std::abs(a.variance - b.variance) <= 1e-10);
    CHECK(std::abs(a.value - b.value) <= 1e-10 * std::max(1.0, std::abs(b.value)));
  }
  CHECK_THROWS_AS(power_criterion(GaussianKernel{1.0}, x, random_set(rng, 3, 2)), InputError);
  CHECK_THROWS_AS(power_criterion(GaussianKernel{1.0}, random_set(rng, 1, 2), random_set(rng, 1, 2)), InputError);
}

TEST_CASE("power criterion vanishes for a near-constant kernel on identical laws") {
  Rng rng(7);
  const auto x = random_set(rng, 50, 2), y = random_set(rng, 50, 2);
  CHECK(std::abs(power_criterion(GaussianKernel{1e4}, x, y).value) < 1e-3);
}

TEST_CASE("criterion argmax over bandwidths is scale invariant") {
  Rng rng(8);
  const auto x = random_set(rng, 30, 2);
  auto y = random_set(rng, 30, 2, 1.5);
  std::vector<double> bandwidths{0.1, 0.3, 1.0, 3.0, 10.0};
  for (double scale : {0.5, 3.0, 10.0}) {
    std::size_t best = 0, best_scaled = 0;
    double v = -1e300, vs = -1e300;
    for (std::size_t i = 0; i < bandwidths.size(); ++i) {
      const KernelSpec spec = GaussianKernel{bandwidths[i]};
      const double a = power_criterion(spec, x, y).value;
      const double b = criterion_oracle(spec, x, y, scale).value;
      if (a > v) v = a, best = i;
      if (b > vs) vs = b, best_scaled = i;
    }
    CHECK(best == best_scaled);
  }
}

TEST_CASE("criterion gradients match central finite differences") {
  Rng rng(9);
  const auto x = random_set(rng, 12, 3);
  auto y = random_set(rng, 12, 3);
  for (auto& v : y) v.array() += 0.5;
  const std::vector<KernelSpec> specs{GaussianKernel{1.1}, random_deep(3, 10)};
  for (const auto& spec : specs) {
    const CriterionGrad g = power_criterion_grad(spec, x, y);
    CHECK(g.criterion.value == doctest::Approx(power_criterion(spec, x, y).value).epsilon(1e-12));
    const std::vector<double> p0 = kernel_params(spec);
    const std::size_t n = p0.size();
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < std::min<std::size_t>(n, 3); ++k) coords.push_back(n - 1 - k);
    while (coords.size() < std::min<std::size_t>(n, 24)) coords.push_back(rng.index(n));
    for (std::size_t c : coords) {
      const double h = 1e-6;
      KernelSpec sp = spec, sm = spec;
      auto pp = p0, pm = p0;
      pp[c] += h;
      pm[c] -= h;
      set_kernel_params(sp, pp);
      set_kernel_params(sm, pm);
      const double fd = (power_criterion(sp, x, y).value - power_criterion(sm, x, y).value) / (2 * h);
      CHECK(std::abs(fd - g.grad[c]) <= 1e-4 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("kernel params round trip") {
  KernelSpec spec = random_deep(2, 11);
  auto p = kernel_params(spec);
  CHECK(p.size() == Mlp::count_params({2, 5, 3}) + 3);
  for (auto& v : p) v *= 0.5;
  set_kernel_params(spec, p);
  CHECK(kernel_params(spec) == p);
  CHECK_THROWS_AS(set_kernel_params(spec, std::vector<double>(3)), InputError);
  KernelSpec g = GaussianKernel{2.0};
  CHECK(kernel_params(g) == std::vector<double>{std::log(2.0)});
}

TEST_CASE("kernel json round trip") {
  const KernelSpec spec = random_deep(3, 12);
  const nlohmann::json j = spec;
  CHECK(j.at("variant") == "deep");
  const KernelSpec back = nlohmann::json::parse(j.dump()).get<KernelSpec>();
  Rng rng(13);
  const Vec a = rng.normal_vector(3), b = rng.normal_vector(3);
  CHECK(kernel_eval(back, a, b) == kernel_eval(spec, a, b));
  const nlohmann::json jg = KernelSpec{GaussianKernel{0.25}};
  CHECK(std::get<GaussianKernel>(jg.get<KernelSpec>()).sigma == 0.25);
  CHECK_THROWS_AS((nlohmann::json{{"variant", "laplace"}}.get<KernelSpec>()), InputError);
}

TEST_CASE("deep kernel training: zero iterations, determinism, held-out separation") {
  const NoiseSchedule sched;
  const GaussianWorld w(Vec::Zero(2), 1.0);
  const auto src = ScoreSource::analytic(w, sched);
  const TimeGrid grid;
  Rng rng(14);
  const auto eps_of = [&](int n, double shift) {
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) {
      Vec x = rng.normal_vector(2);
      x.array() += shift;
      out.push_back(compute_eps(src, x, grid, rng).values);
    }
    return out;
  };
  const auto nat = eps_of(400, 0.0), adv = eps_of(400, 1.5);
  const auto nat2 = eps_of(200, 0.0), nat3 = eps_of(200, 0.0), adv2 = eps_of(200, 1.5);

  KernelTrainConfig cfg;
  cfg.iterations = 0;
  cfg.batch_size = 64;
  cfg.hidden = {16};
  cfg.feature_dim = 4;
  const DeepKernel init = init_deep_kernel(nat, adv, cfg);
  const auto zero = train_deep_kernel(nat, adv, cfg);
  CHECK(kernel_params(zero.kernel) == kernel_params(KernelSpec{init}));

  cfg.iterations = 150;
  cfg.seed = 3;
  const auto a = train_deep_kernel(nat, adv, cfg);
  const auto b = train_deep_kernel(nat, adv, cfg);
  CHECK(kernel_params(a.kernel) == kernel_params(b.kernel));
  CHECK(a.criterion_trace.size() == 150);
  CHECK(mmd2_set(a.kernel, nat2, adv2) > mmd2_set(a.kernel, nat2, nat3));
}

TEST_CASE("cross term is larger for natural test points") {
  const NoiseSchedule sched;
  const GaussianWorld w(Vec::Zero(4), 1.0);
  const auto src = ScoreSource::analytic(w, sched);
  const TimeGrid grid;
  const auto times = grid.times();
  // ||mu_S|| / sigma_S = 2.5
  const double s2 = eps_variance(w, sched, times);
  const Vec eps = Vec::Constant(4, 2.5 * std::sqrt(s2) / (2.0 * s2));
  Rng rng(15);
  std::vector<Vec> refs;
  for (int i = 0; i < 500; ++i) refs.push_back(compute_eps(src, rng.normal_vector(4), grid, rng).values);
  const MmdReference mr(GaussianKernel{median_heuristic(refs)}, refs);
  std::vector<double> jn, ja;
  for (int i = 0; i < 500; ++i) {
    jn.push_back(mr.cross_term(compute_eps(src, rng.normal_vector(4), grid, rng).values));
    ja.push_back(mr.cross_term(compute_eps(src, Vec(rng.normal_vector(4) + eps), grid, rng).values));
  }
  const auto mean_var = [](const std::vector<double>& v) {
    double m = 0.0, m2 = 0.0;
    for (double x : v) m += x, m2 += x * x;
    m /= v.size();
    return std::make_pair(m, (m2 / v.size() - m * m) / v.size());
  };
  const auto [mn, vn] = mean_var(jn);
  const auto [ma, va] = mean_var(ja);
  CHECK(mn - ma > 3.0 * std::sqrt(vn + va));
}

TEST_CASE("gaussian-kernel statistic grows along a ray past the reference cloud") {
  const KernelSpec g = GaussianKernel{1.0};
  std::vector<Vec> refs;
  for (int i = -5; i <= 5; ++i) refs.push_back(Vec::Constant(1, 0.1 * i));
  double prev = -1.0;
  for (double s = 0.6; s < 6.0; s += 0.1) {
    const double v = mmd2_biased(g, refs, Vec::Constant(1, s));
    CHECK(v >= prev);
    prev = v;
  }
}
