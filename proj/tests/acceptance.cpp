// End-to-end acceptance checks, one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "epsad/harness.hpp"
#include "epsad/io.hpp"

using namespace epsad;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kTheoryRuntime = 60.0;
constexpr double kCorollaryRuntime = 30.0;
constexpr double kOracleTol = 1e-12;
constexpr double kGradRelTol = 1e-4;
constexpr int kGradCoords = 24;
constexpr double kScoreRelErr = 0.15;
constexpr double kScoreRuntime = 300.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kMomentSe = 3.0;
constexpr double kDetectGap = 0.05;
constexpr double kBallTol = 1e-9;
constexpr double kDetectRuntime = 600.0;

struct Result {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- 1, 2

Result theorem() {
  const auto t0 = std::chrono::steady_clock::now();
  const GaussianWorld w(Vec::Zero(8), 1.0);
  const auto r = validate_theorem(w, NoiseSchedule{}, TimeGrid{}, Vec::Constant(8, 0.3), 20000, 0);
  const double secs = seconds_since(t0);
  double worst_mean = 0.0, worst_shift = 0.0, worst_var = 0.0;
  for (Eigen::Index i = 0; i < 8; ++i) {
    worst_mean = std::max(worst_mean, std::abs(r.mean_S[i]) / r.se_S[i]);
    worst_shift = std::max(worst_shift, std::abs(r.mean_diff[i] - r.predicted_shift[i]) / r.se_diff[i]);
    worst_var = std::max(worst_var, std::abs(r.var_diff[i] / r.predicted_var - 1.0));
  }
  return {r.mean_ok && r.shift_ok && r.var_ok && secs <= kTheoryRuntime,
          "max |mean|/se " + fmt(worst_mean) + ", max |diff-shift|/se " + fmt(worst_shift) +
              ", max var rel err " + fmt(worst_var) + ", " + fmt(secs, 3) + " s"};
}

Result corollary() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> etas{0.2, 0.5, 0.8};
  Vec mu1(2), mu2(3);
  mu1 << 0.5, 0.5;
  mu2 << 1.0, 0.0, 0.0;
  const std::vector<std::pair<Vec, double>> settings{{mu1, 0.25}, {mu2, 1.0}};
  bool ok = true;
  double worst = 0.0;
  for (std::size_t k = 0; k < settings.size(); ++k) {
    const auto rows = validate_corollary(settings[k].first, settings[k].second, 1.0, etas, 100000, k);
    for (const auto& r : rows) {
      ok = ok && r.ok;
      worst = std::max(worst, std::abs(r.empirical - r.predicted) / r.se);
    }
  }
  const double secs = seconds_since(t0);
  return {ok && secs <= kCorollaryRuntime, "max |emp-pred|/se " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 3

DeepKernel random_deep(int d, Rng& rng) {
  DeepKernel k;
  k.featurizer = Mlp({d, 6, 3}, Activation::kSilu);
  k.featurizer.init(rng);
  k.input_shift = 0.1 * rng.normal_vector(d);
  k.input_scale = Vec::Constant(d, rng.uniform(0.5, 2.0));
  k.eps0_logit = rng.normal();
  k.log_sigma_phi = rng.uniform(-1.0, 1.0);
  k.log_sigma_q = rng.uniform(-1.0, 1.0);
  return k;
}

double loop_kernel(const KernelSpec& spec, const Vec& a, const Vec& b) {
  const auto g = [](const Vec& x, const Vec& y, double s) {
    double d2 = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
    return std::exp(-d2 / (2.0 * s * s));
  };
  if (const auto* gk = std::get_if<GaussianKernel>(&spec)) return g(a, b, gk->sigma);
  const auto& k = std::get<DeepKernel>(spec);
  Vec sa = a, sb = b;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sa[i] = (a[i] - k.input_shift[i]) / k.input_scale[i];
    sb[i] = (b[i] - k.input_shift[i]) / k.input_scale[i];
  }
  const Vec pa = k.featurizer.forward(sa).col(0), pb = k.featurizer.forward(sb).col(0);
  const double e0 = 1.0 / (1.0 + std::exp(-k.eps0_logit));
  return ((1.0 - e0) * g(pa, pb, std::exp(k.log_sigma_phi)) + e0) * g(a, b, std::exp(k.log_sigma_q));
}

Result oracles() {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 400; ++trial) {
    const int d = 1 + static_cast<int>(rng.index(4));
    const std::size_t n = 1 + rng.index(5), m = 1 + rng.index(5);
    const KernelSpec spec =
        trial % 2 ? KernelSpec{GaussianKernel{rng.uniform(0.2, 3.0)}} : KernelSpec{random_deep(d, rng)};
    std::vector<Vec> x, y;
    for (std::size_t i = 0; i < n; ++i) x.push_back(rng.normal_vector(d));
    for (std::size_t i = 0; i < m; ++i) y.push_back(rng.normal_vector(d));
    double kxx = 0.0, kyy = 0.0, kxy = 0.0, kx0 = 0.0;
    for (const auto& a : x)
      for (const auto& b : x) kxx += loop_kernel(spec, a, b);
    for (const auto& a : y)
      for (const auto& b : y) kyy += loop_kernel(spec, a, b);
    for (const auto& a : x)
      for (const auto& b : y) kxy += loop_kernel(spec, a, b);
    for (const auto& a : x) kx0 += loop_kernel(spec, a, y[0]);
    const double dn = static_cast<double>(n), dm = static_cast<double>(m);
    const double biased = kxx / (dn * dn) - 2.0 * kx0 / dn + loop_kernel(spec, y[0], y[0]);
    const double set = kxx / (dn * dn) + kyy / (dm * dm) - 2.0 * kxy / (dn * dm);
    worst = std::max(worst, std::abs(mmd2_biased(spec, x, y[0]) - biased));
    worst = std::max(worst, std::abs(mmd2_set(spec, x, y) - set));
  }
  int auroc_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(40), m = 1 + rng.index(40);
    const std::size_t levels = 1 + rng.index(8);
    std::vector<double> nat(n), adv(m);
    for (auto& v : nat) v = static_cast<double>(rng.index(levels));
    for (auto& v : adv) v = static_cast<double>(rng.index(levels));
    long twice = 0;
    for (double a : adv)
      for (double b : nat) twice += a > b ? 2 : (a == b ? 1 : 0);
    const double expected = static_cast<double>(twice) / (2.0 * static_cast<double>(n * m));
    auroc_mismatch += auroc(nat, adv) != expected;
  }
  return {worst <= kOracleTol && auroc_mismatch == 0,
          "max mmd deviation " + fmt(worst) + ", auroc mismatches " + std::to_string(auroc_mismatch) + "/200"};
}

// ---------------------------------------------------------------- 4

std::vector<std::size_t> coordinates(std::size_t n, Rng& rng) {
  std::vector<std::size_t> c;
  for (std::size_t k = 0; k < std::min<std::size_t>(3, n); ++k) c.push_back(n - 1 - k);
  while (c.size() < std::min<std::size_t>(n, kGradCoords)) c.push_back(rng.index(n));
  return c;
}

double rel_error(double fd, double g) { return std::abs(fd - g) / std::max(std::abs(fd), 1e-3); }

Result gradients() {
  Rng rng(4);
  double worst_dsm = 0.0, worst_kernel = 0.0;
  int checked_dsm = 0, checked_kernel = 0;
  {
    const NoiseSchedule sched;
    ScoreNet net(2, {16, 16}, 8);
    net.init(rng);
    Mat x0(2, 32), z(2, 32);
    std::vector<double> ts(32);
    for (int b = 0; b < 32; ++b) {
      x0.col(b) = rng.normal_vector(2);
      z.col(b) = rng.normal_vector(2);
      ts[b] = 1e-3 * static_cast<double>(1 + rng.index(20));
    }
    const auto base = dsm_loss_and_grad(net, sched, x0, ts, z);
    for (std::size_t c : coordinates(net.mlp().param_count(), rng)) {
      ScoreNet p = net, m = net;
      const double h = 1e-6;
      p.mlp().params()[c] += h;
      m.mlp().params()[c] -= h;
      const double fd =
          (dsm_loss_and_grad(p, sched, x0, ts, z).loss - dsm_loss_and_grad(m, sched, x0, ts, z).loss) / (2 * h);
      worst_dsm = std::max(worst_dsm, rel_error(fd, base.grad[c]));
      ++checked_dsm;
    }
  }
  {
    std::vector<Vec> x, y;
    for (int i = 0; i < 16; ++i) {
      x.push_back(rng.normal_vector(3));
      y.push_back(rng.normal_vector(3) + Vec::Constant(3, 0.4));
    }
    DeepKernel dk = random_deep(3, rng);
    dk.eps0_logit = -2.0;
    const KernelSpec spec = dk;
    const auto g = power_criterion_grad(spec, x, y);
    const auto p0 = kernel_params(spec);
    for (std::size_t c : coordinates(p0.size(), rng)) {
      KernelSpec sp = spec, sm = spec;
      auto pp = p0, pm = p0;
      const double h = 1e-6;
      pp[c] += h;
      pm[c] -= h;
      set_kernel_params(sp, pp);
      set_kernel_params(sm, pm);
      const double fd = (power_criterion(sp, x, y).value - power_criterion(sm, x, y).value) / (2 * h);
      worst_kernel = std::max(worst_kernel, rel_error(fd, g.grad[c]));
      ++checked_kernel;
    }
  }
  return {worst_dsm <= kGradRelTol && worst_kernel <= kGradRelTol && checked_dsm >= 20 && checked_kernel >= 20,
          "dsm max rel err " + fmt(worst_dsm) + " over " + std::to_string(checked_dsm) +
              " coords, kernel max rel err " + fmt(worst_kernel) + " over " + std::to_string(checked_kernel)};
}

// ---------------------------------------------------------------- 5

Result learned_score() {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule sched;
  Vec mu(2);
  mu << 0.5, -0.5;
  const GaussianWorld w(mu, 1.0);
  Rng data_rng(derive_seed(5, 1));
  const auto data = sample_gaussian(w, 10000, data_rng);
  const TimeGrid grid;
  const auto times = grid.times();
  ScoreNet net(2);
  Rng init(derive_seed(5, 2));
  net.init(init);
  TrainConfig cfg;
  cfg.seed = 5;
  const auto trained = train_score(std::move(net), data, sched, times, cfg);
  const double secs = seconds_since(t0);

  Rng held(derive_seed(5, 3));
  double mean_err = 0.0, worst = 0.0;
  for (double t : times) {
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 2000; ++k) {
      const Vec x0 = mu + held.normal_vector(2);
      const Vec xt = sched.perturb(x0, t, held);
      const Vec exact = analytic_score(w, sched, xt, t);
      num += (trained.net.forward(xt, t) - exact).squaredNorm();
      den += exact.squaredNorm();
    }
    const double e = std::sqrt(num / den);
    mean_err += e / static_cast<double>(times.size());
    worst = std::max(worst, e);
  }
  return {mean_err <= kScoreRelErr && secs <= kScoreRuntime,
          "mean relative L2 error " + fmt(mean_err) + " (worst t " + fmt(worst) + "), training " + fmt(secs, 3) +
              " s"};
}

// ---------------------------------------------------------------- 6

Result schedule_identity() {
  Rng rng(6);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double bmin = rng.uniform(0.0, 1.0);
    const NoiseSchedule s(bmin, bmin + rng.uniform(0.0, 40.0), rng.uniform(1.0, 2000.0));
    const double t = rng.uniform(0.0, s.t_max());
    worst = std::max(worst, std::abs(s.gamma(t) * s.gamma(t) + s.sigma2(t) - 1.0));
  }
  const NoiseSchedule sched;
  const long n = 100000;
  bool moments = true;
  double worst_z = 0.0;
  Vec x0(3);
  x0 << 1.0, -2.0, 0.5;
  for (double t : {0.005, 0.1, 100.0}) {
    Rng r(derive_seed(6, static_cast<std::uint64_t>(t * 1000)));
    Vec sum = Vec::Zero(3), sum2 = Vec::Zero(3);
    for (long k = 0; k < n; ++k) {
      const Vec x = sched.perturb(x0, t, r);
      sum += x;
      sum2 += x.cwiseProduct(x);
    }
    const Vec mean = sum / static_cast<double>(n);
    const Vec var = (sum2 / static_cast<double>(n) - mean.cwiseProduct(mean)) * (static_cast<double>(n) / (n - 1.0));
    const double s2 = sched.sigma2(t);
    for (int i = 0; i < 3; ++i) {
      const double zm = std::abs(mean[i] - sched.gamma(t) * x0[i]) / std::sqrt(s2 / n);
      const double zv = std::abs(var[i] - s2) / (s2 * std::sqrt(2.0 / (n - 1.0)));
      worst_z = std::max({worst_z, zm, zv});
      moments = moments && zm <= kMomentSe && zv <= kMomentSe;
    }
  }
  return {worst <= kIdentityTol && moments,
          "max |gamma^2+sigma^2-1| " + fmt(worst) + ", max moment deviation " + fmt(worst_z) + " se"};
}

// ---------------------------------------------------------------- 7, 9

ExperimentConfig class_world_config() {
  ExperimentConfig c;
  ClassWorld w;
  Vec m0(2), m1(2), sd(2);
  m0 << -0.5, 0.0;
  m1 << 0.5, 0.0;
  sd << 0.05, 0.3;
  w.means = {m0, m1};
  w.stds = {sd, sd};
  w.bounds = std::make_pair(-1.0, 1.0);
  c.world = w;
  c.feature_range = 2.0;
  c.score.source = ScoreSpec::Source::kTrain;
  c.kernel.source = KernelSourceSpec::Source::kTrain;
  c.kernel.train.iterations = 1000;
  c.adversary.type = AdversarySpec::Type::kAttack;
  for (auto m : {AttackMethod::kPgd, AttackMethod::kBim}) {
    AttackConfig a;
    a.method = m;
    a.norm = Norm::kLinf;
    a.epsilon = 4.0 / 255.0;
    a.steps = 5;
    c.adversary.attacks.push_back(a);
  }
  for (int k = 1; k <= 8; ++k) {
    AttackConfig a;
    a.method = AttackMethod::kPgd;
    a.epsilon = k / 255.0;
    a.steps = 5;
    c.adversary.attacks.push_back(a);
  }
  c.detector = Detector::kEpsMmdDeep;
  c.seed = 0;
  return c;
}

struct ClassWorldRun {
  DetectionReport eps;
  DetectionReport raw;
  double max_violation = 0.0;
  double seconds = 0.0;
};

ClassWorldRun run_class_world() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = class_world_config();
  const Prepared p = prepare(cfg);
  ClassWorldRun r;
  r.eps = detect(p, Detector::kEpsMmdDeep, cfg.grid);
  r.raw = detect(p, Detector::kRawMmd, cfg.grid);
  r.seconds = seconds_since(t0);
  for (double v : p.max_violation) r.max_violation = std::max(r.max_violation, v);
  // Kernel training points: attack a applied to every kernel_nat sample.
  const std::size_t n = p.kernel_nat.size();
  for (std::size_t a = 0; a < cfg.kernel.attacks.size(); ++a) {
    const auto& ac = cfg.kernel.attacks[a];
    const double eps = ac.epsilon * cfg.feature_range;
    for (std::size_t i = 0; i < n; ++i)
      r.max_violation =
          std::max(r.max_violation, std::max(distance(p.kernel_adv[a * n + i], p.kernel_nat[i], ac.norm) - eps, 0.0));
  }
  return r;
}

Result detection_gap(const ClassWorldRun& r) {
  bool ok = r.max_violation <= kBallTol && r.seconds <= kDetectRuntime;
  std::string detail;
  for (std::size_t a = 0; a < 2; ++a) {
    const double gap = r.eps.attacks[a].auroc - r.raw.attacks[a].auroc;
    ok = ok && gap >= kDetectGap;
    detail += r.eps.attacks[a].attack + ": eps-mmd " + fmt(r.eps.attacks[a].auroc) + " vs raw-mmd " +
              fmt(r.raw.attacks[a].auroc) + "; ";
  }
  return {ok, detail + "max ball violation " + fmt(r.max_violation) + ", " + fmt(r.seconds, 4) + " s"};
}

Result monotone(const ClassWorldRun& r) {
  bool ok = true;
  std::string detail = "eps-mmd pgd-linf auroc by budget:";
  for (std::size_t k = 2; k < r.eps.attacks.size(); ++k) {
    detail += " " + fmt(r.eps.attacks[k].auroc, 3);
    if (k > 2) {
      const auto& prev = r.eps.attacks[k - 1];
      const auto& cur = r.eps.attacks[k];
      ok = ok && cur.auroc >= prev.auroc - std::max(prev.auroc_se, cur.auroc_se);
    }
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 8

Result timestep_stability() {
  ExperimentConfig c;
  c.world = GaussianWorld(Vec::Zero(8), 1e-4);
  c.adversary.shifts = {3.0 / 255.0};
  c.n_ref = c.n_test_nat = c.n_test_adv = 1000;
  const Prepared p = prepare(c);
  const std::vector<int> Ts{5, 10, 20, 50, 100};
  const auto rows = timestep_sweep(p, Ts);
  const double sd_eps = sweep_stdev(rows, "eps-mmd-gaussian");
  const double sd_single = sweep_stdev(rows, "single-score-norm");
  double at5 = 0.0, best = 0.0;
  for (const auto& r : rows)
    if (r.method == "eps-mmd-gaussian") {
      if (r.T == 5) at5 = r.auroc;
      best = std::max(best, r.auroc);
    }
  return {sd_eps < sd_single && best > at5,
          "stdev eps-mmd " + fmt(sd_eps) + " vs single-score-norm " + fmt(sd_single) + "; eps-mmd T=5 " + fmt(at5) +
              ", best " + fmt(best)};
}

// ---------------------------------------------------------------- 10

int run(const std::string& args) {
  const std::string cmd = std::string(EPSAD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& p, const nlohmann::json& j) { io::write_json(p, j); }

Result determinism() {
  const fs::path root = fs::temp_directory_path() / "epsad_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);

  nlohmann::json world = {{"type", "classes"},
                          {"means", {{-0.5, 0.0}, {0.5, 0.0}}},
                          {"stds", {{0.05, 0.3}, {0.05, 0.3}}},
                          {"bounds", {-1.0, 1.0}},
                          {"feature_range", 2.0}};
  write(root / "class.json",
        {{"world", world},
         {"detector", "eps-mmd-deep"},
         {"score", {{"source", "train"}, {"n_train", 500}, {"hidden", {16}}, {"train", {{"iterations", 30}, {"batch_size", 64}}}}},
         {"kernel", {{"source", "train"}, {"n_train", 64}, {"train", {{"iterations", 10}, {"batch_size", 32}, {"hidden", {8}}, {"feature_dim", 4}}}}},
         {"classifier", {{"n_train", 200}, {"train", {{"iterations", 50}}}}},
         {"adversary", {{"type", "attack"}, {"attacks", {{{"method", "pgd"}, {"epsilon", "4/255"}}}}}},
         {"n_ref", 60},
         {"n_test_nat", 40},
         {"n_test_adv", 40},
         {"seed", 11}});
  write(root / "gauss.json", {{"world", {{"type", "gaussian"}, {"mu_x", {0.0, 0.0, 0.0}}, {"sigma_x2", 1e-3}}},
                              {"adversary", {{"type", "shift"}, {"budgets", {"3/255"}}}},
                              {"n_ref", 100},
                              {"n_test_nat", 100},
                              {"n_test_adv", 100}});
  write(root / "theory.json", {{"world", {{"mu_x", {0.0, 0.0}}, {"sigma_x2", 1.0}}},
                               {"epsilon", 0.3},
                               {"n", 2000},
                               {"corollary", {{"sigma_kernel", 1.0}, {"etas", {0.5}}, {"n", 2000},
                                              {"settings", {{{"mu_S", {0.5, 0.5}}, {"sigma_S2", 0.25}}}}}}});

  const std::vector<std::string> files{
      "data.csv", "clf.json", "adv.csv", "score.json", "score.trace.json", "eps.csv", "kernel.json",
      "detect.csv", "detect.json", "detect_kernel.json", "sweep.csv", "sweep.json", "theory.csv", "theory.json"};
  for (const std::string tag : {"a", "b"}) {
    const fs::path d = root / tag;
    fs::create_directories(d);
    const auto in = [&](const std::string& f) { return (root / f).string(); };
    const auto out = [&](const std::string& f) { return (d / f).string(); };
    int failed = 0;
    failed += run("generate --config " + in("class.json") + " --n 200 --stream 3 --seed 4 --out " + out("data.csv")) != 0;
    failed += run("train-clf --config " + in("class.json") + " --data " + out("data.csv") + " --seed 2 --out " + out("clf.json")) != 0;
    failed += run("attack --clf " + out("clf.json") + " --data " + out("data.csv") +
                  " --method mim --norm l2 --eps 8/255 --steps 4 --bounds -1 1 --seed 3 --out " + out("adv.csv")) != 0;
    failed += run("train-score --config " + in("class.json") + " --data " + out("data.csv") + " --seed 5 --out " + out("score.json")) != 0;
    failed += run("eps --config " + in("class.json") + " --score " + out("score.json") + " --data " + out("adv.csv") +
                  " --seed 6 --out " + out("eps.csv")) != 0;
    failed += run("train-kernel --config " + in("class.json") + " --nat " + out("data.csv") + " --adv " + out("adv.csv") +
                  " --seed 7 --out " + out("kernel.json")) != 0;
    failed += run("detect --config " + in("class.json") + " --seed 8 --out " + (d / "detect").string() +
                  " --kernel-out " + out("detect_kernel.json")) > 1;
    failed += run("sweep --config " + in("gauss.json") + " --T 5,20 --seed 9 --out " + (d / "sweep").string()) > 1;
    failed += run("validate-theory --config " + in("theory.json") + " --seed 0 --out " + (d / "theory").string()) > 1;
    if (failed) return {false, std::to_string(failed) + " CLI runs failed in pass " + tag};
  }
  int differing = 0;
  std::string names;
  for (const auto& f : files) {
    if (!fs::exists(root / "a" / f) || io::read_text(root / "a" / f) != io::read_text(root / "b" / f)) {
      ++differing;
      names += " " + f;
    }
  }
  return {differing == 0, std::to_string(files.size() - differing) + "/" + std::to_string(files.size()) +
                              " outputs bit-identical across repeated runs" + (names.empty() ? "" : ";" + names)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const std::string& name, const Result& r) {
    std::cout << "CRITERION " << id << " " << (r.pass ? "PASS" : "FAIL") << "  " << name << ": " << r.detail
              << std::endl;
    failures += !r.pass;
  };
  const auto guarded = [](const std::function<Result()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Result{false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "EPS moments", guarded(theorem));
  report(2, "kernel exceedance probability", guarded(corollary));
  report(3, "oracle equivalence", guarded(oracles));
  report(4, "gradient fidelity", guarded(gradients));
  report(5, "learned score fidelity", guarded(learned_score));
  report(6, "schedule identity and moments", guarded(schedule_identity));
  ClassWorldRun cw;
  bool cw_ok = true;
  std::string cw_error;
  try {
    cw = run_class_world();
  } catch (const std::exception& e) {
    cw_ok = false;
    cw_error = e.what();
  }
  report(7, "end-to-end detection", cw_ok ? detection_gap(cw) : Result{false, "exception: " + cw_error});
  report(8, "timestep stability", guarded(timestep_stability));
  report(9, "attack-intensity monotonicity", cw_ok ? monotone(cw) : Result{false, "exception: " + cw_error});
  report(10, "CLI determinism", guarded(determinism));
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
