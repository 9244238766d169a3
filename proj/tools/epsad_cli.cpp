#include <chrono>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "epsad/errors.hpp"
#include "epsad/harness.hpp"
#include "epsad/io.hpp"
#include "epsad/kernels.hpp"

using namespace epsad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kThresholdFailed = 1;
constexpr int kUsageError = 2;

struct Timer {
  std::string what;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  ~Timer() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    std::cerr << what << ": " << dt.count() << " s wall-clock\n";
  }
};

json read_config(const std::string& path) { return io::read_json(path); }

std::string base_dir(const std::string& path) { return fs::path(path).parent_path().string(); }

ExperimentConfig load(const std::string& path, std::optional<std::uint64_t> seed) {
  json j = read_config(path);
  if (seed) j["seed"] = *seed;
  return load_experiment(j, base_dir(path));
}

void write_outputs(const std::string& prefix, const std::string& csv, const json& summary) {
  io::write_text(prefix + ".csv", csv);
  io::write_json(prefix + ".json", summary);
}

int cmd_generate(const std::string& config, std::optional<std::uint64_t> seed, long n,
                 std::uint64_t stream, const std::string& out) {
  const ExperimentConfig cfg = load(config, seed);
  Rng rng(derive_seed(cfg.seed, stream));
  LabeledData data;
  if (const auto* g = std::get_if<GaussianWorld>(&cfg.world)) {
    data.x = sample_gaussian(*g, static_cast<std::size_t>(n), rng);
    data.y.assign(data.x.size(), 0);
  } else {
    data = generate_world_data(std::get<ClassWorld>(cfg.world), static_cast<std::size_t>(n), rng);
  }
  io::write_text(out, io::data_csv(data));
  return 0;
}

int cmd_train_clf(const std::string& config, std::optional<std::uint64_t> seed, const std::string& data,
                  const std::string& out) {
  Timer t{"train-clf"};
  json j = read_config(config);
  ClassifierTrainConfig tc;
  if (j.contains("classifier") && j["classifier"].contains("train"))
    tc = j["classifier"]["train"].get<ClassifierTrainConfig>();
  if (seed) tc.seed = *seed;
  const LabeledData d = io::read_data(data);
  const ToyClassifier clf = train_classifier(d, tc);
  io::write_json(out, clf);
  std::cerr << "training accuracy " << accuracy(clf, d) << "\n";
  return 0;
}

int cmd_train_score(const std::string& config, std::optional<std::uint64_t> seed, const std::string& data,
                    const std::string& out) {
  Timer t{"train-score"};
  const ExperimentConfig cfg = load(config, seed);
  const std::vector<Vec> xs = io::read_vectors(data);
  TimeGrid g = cfg.grid;
  g.T_star = std::max(cfg.grid.T_star, cfg.score.T_max);
  ScoreNet net(static_cast<int>(xs.front().size()), cfg.score.hidden, cfg.score.time_embed);
  Rng init(derive_seed(cfg.seed, streams::kTraining, 1));
  net.init(init);
  TrainConfig tc = cfg.score.train;
  if (seed) tc.seed = *seed;
  const auto result = train_score(std::move(net), xs, cfg.schedule, g.times(), tc);
  io::write_json(out, result.net);
  json trace = {{"loss_trace", result.loss_trace}};
  io::write_json(fs::path(out).replace_extension(".trace.json"), trace);
  return 0;
}

int cmd_eps(const std::string& config, std::optional<std::uint64_t> seed, const std::string& score,
            const std::string& data, const std::string& out) {
  Timer t{"eps"};
  const ExperimentConfig cfg = load(config, seed);
  std::optional<ScoreSource> src;
  if (!score.empty()) {
    src = ScoreSource::learned(std::make_shared<ScoreNet>(io::read_json(score).get<ScoreNet>()), cfg.schedule);
  } else if (const auto* g = std::get_if<GaussianWorld>(&cfg.world)) {
    src = ScoreSource::analytic(*g, cfg.schedule);
  } else {
    throw ConfigError("eps: --score is required outside gaussian worlds");
  }
  const std::vector<Vec> xs = io::read_vectors(data);
  const auto eps = eps_batch_parallel(*src, xs, cfg.grid, SeedStream{cfg.seed, streams::kEpsNat}, cfg.perturb_mode);
  io::write_text(out, io::eps_csv(eps));
  return 0;
}

int cmd_train_kernel(const std::string& config, std::optional<std::uint64_t> seed, const std::string& nat,
                     const std::string& adv, const std::string& variant, const std::string& out) {
  Timer t{"train-kernel"};
  KernelTrainConfig tc;
  if (!config.empty()) {
    const json j = read_config(config);
    if (j.contains("kernel") && j["kernel"].contains("train")) tc = j["kernel"]["train"].get<KernelTrainConfig>();
    else if (j.contains("train")) tc = j["train"].get<KernelTrainConfig>();
  }
  if (seed) tc.seed = *seed;
  const std::vector<Vec> xn = io::read_vectors(nat);
  const std::vector<Vec> xa = io::read_vectors(adv);
  KernelTrainResult r;
  if (variant == "deep") {
    r = train_deep_kernel(xn, xa, tc);
  } else if (variant == "gaussian") {
    std::vector<Vec> pool = xn;
    pool.insert(pool.end(), xa.begin(), xa.end());
    r = train_kernel_from(GaussianKernel{median_heuristic(pool)}, xn, xa, tc);
  } else {
    throw ConfigError("unknown kernel variant '" + variant + "'");
  }
  io::write_json(out, r.kernel);
  std::cerr << "final criterion " << (r.criterion_trace.empty() ? 0.0 : r.criterion_trace.back()) << "\n";
  return 0;
}

struct AttackArgs {
  std::string clf, data, method = "pgd", norm = "linf", eps = "4/255", out;
  int steps = 5;
  std::optional<double> step_size;
  std::optional<std::vector<double>> bounds;
  std::uint64_t seed = 0;
};

int cmd_attack(const AttackArgs& a) {
  Timer t{"attack"};
  const ToyClassifier clf = io::read_json(a.clf).get<ToyClassifier>();
  const LabeledData d = io::read_data(a.data);
  AttackConfig cfg;
  cfg.method = attack_method_from_string(a.method);
  cfg.norm = norm_from_string(a.norm);
  cfg.epsilon = parse_epsilon(a.eps);
  cfg.steps = a.steps;
  cfg.step_size = a.step_size;
  if (a.bounds) {
    if (a.bounds->size() != 2) throw ConfigError("--bounds takes two values");
    cfg.bounds = std::make_pair((*a.bounds)[0], (*a.bounds)[1]);
  }
  cfg.validate();
  LabeledData adv{attack_batch_parallel(clf, d.x, d.y, cfg, SeedStream{a.seed, streams::kAttack}), d.y};
  io::write_text(a.out, io::data_csv(adv));
  double violation = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i)
    violation = std::max(violation, distance(d.x[i], adv.x[i], cfg.norm) - cfg.epsilon);
  std::cerr << cfg.name() << ": accuracy " << accuracy(clf, d) << " -> " << accuracy(clf, adv)
            << ", max ball violation " << std::max(violation, 0.0) << "\n";
  return 0;
}

int cmd_detect(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
               const std::string& kernel_out) {
  Timer t{"detect"};
  const ExperimentConfig cfg = load(config, seed);
  const DetectionReport r = detect(cfg);
  json summary = report_summary(r);
  const bool pass = thresholds_pass(cfg.thresholds, r);
  summary["thresholds_pass"] = pass;
  write_outputs(out, report_csv(r), summary);
  if (!kernel_out.empty() && r.kernel) io::write_json(kernel_out, *r.kernel);
  for (const auto& a : r.attacks) std::cout << a.attack << " auroc " << a.auroc << " +- " << a.auroc_se << "\n";
  return pass ? 0 : kThresholdFailed;
}

int cmd_sweep(const std::string& config, std::optional<std::uint64_t> seed, std::vector<int> T_values,
              const std::string& out) {
  Timer t{"sweep"};
  const ExperimentConfig cfg = load(config, seed);
  if (T_values.empty()) T_values = {5, 10, 20, 50, 100};
  const Prepared p = prepare(cfg);
  const auto rows = timestep_sweep(p, T_values);
  const std::string mmd = cfg.detector == Detector::kEpsMmdDeep ? "eps-mmd-deep" : "eps-mmd-gaussian";
  json summary;
  summary["T"] = T_values;
  summary["stdev"] = {{mmd, sweep_stdev(rows, mmd)},
                      {"eps-norm", sweep_stdev(rows, "eps-norm")},
                      {"single-score-norm", sweep_stdev(rows, "single-score-norm")}};
  bool pass = true;
  if (cfg.thresholds.eps_more_stable)
    pass = sweep_stdev(rows, mmd) < sweep_stdev(rows, "single-score-norm");
  if (cfg.thresholds.auroc_min)
    for (const auto& r : rows)
      if (r.method == mmd && !(r.auroc >= *cfg.thresholds.auroc_min)) pass = false;
  summary["thresholds_pass"] = pass;
  summary["config"] = cfg;
  write_outputs(out, sweep_csv(rows), summary);
  for (const auto& r : rows) std::cout << r.method << " T=" << r.T << " " << r.attack << " auroc " << r.auroc << "\n";
  return pass ? 0 : kThresholdFailed;
}

int cmd_validate_theory(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  Timer t{"validate-theory"};
  json j = read_config(config);
  if (seed) j["seed"] = *seed;
  const auto world = j.at("world").get<GaussianWorld>();
  const NoiseSchedule sched = j.contains("schedule") ? j["schedule"].get<NoiseSchedule>() : NoiseSchedule{};
  const TimeGrid grid = j.contains("grid") ? j["grid"].get<TimeGrid>() : TimeGrid{};
  const std::uint64_t root = j.value("seed", std::uint64_t{0});
  Vec epsilon;
  const json& e = j.value("epsilon", json(0.3));
  if (e.is_number()) {
    epsilon = Vec::Constant(world.dim(), e.get<double>());
  } else {
    const auto v = e.get<std::vector<double>>();
    epsilon = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  const auto mode = perturb_mode_from_string(j.value("perturb_mode", std::string("independent")));
  const TheoremReport th = validate_theorem(world, sched, grid, epsilon, j.value("n", 20000L), root, mode);

  std::string csv = "check,index,observed,predicted,se,ok\n";
  const auto row = [&](const std::string& check, long i, double obs, double pred, double se, bool ok) {
    csv += check + "," + std::to_string(i) + "," + io::format_double(obs) + "," + io::format_double(pred) + "," +
           io::format_double(se) + "," + (ok ? "1" : "0") + "\n";
  };
  for (Eigen::Index i = 0; i < epsilon.size(); ++i) {
    row("mean_S", i, th.mean_S[i], 0.0, th.se_S[i], std::abs(th.mean_S[i]) <= 3 * th.se_S[i]);
    row("shift", i, th.mean_diff[i], th.predicted_shift[i], th.se_diff[i],
        std::abs(th.mean_diff[i] - th.predicted_shift[i]) <= 3 * th.se_diff[i]);
    row("variance", i, th.var_diff[i], th.predicted_var, 0.0,
        std::abs(th.var_diff[i] / th.predicted_var - 1.0) <= 0.05);
  }
  bool pass = th.mean_ok && th.shift_ok && th.var_ok;

  json summary;
  summary["theorem"] = to_json(th);
  auto& cor = summary["corollary"] = json::array();
  if (j.contains("corollary")) {
    const auto& c = j["corollary"];
    const std::vector<double> etas = c.value("etas", std::vector<double>{0.2, 0.5, 0.8});
    const double sk = c.value("sigma_kernel", 1.0);
    const long n = c.value("n", 100000L);
    long k = 0;
    for (const auto& s : c.at("settings")) {
      const auto mu = s.at("mu_S").get<std::vector<double>>();
      const Vec mu_S = Eigen::Map<const Vec>(mu.data(), static_cast<Eigen::Index>(mu.size()));
      const double s2 = s.at("sigma_S2").get<double>();
      const auto rows = validate_corollary(mu_S, s2, sk, etas, n, derive_seed(root, 100, static_cast<std::uint64_t>(k)));
      json setting = {{"mu_S", mu}, {"sigma_S2", s2}, {"rows", json::array()}};
      for (const auto& r : rows) {
        setting["rows"].push_back(to_json(r));
        row("corollary_eta_" + io::format_double(r.eta), k, r.empirical, r.predicted, r.se, r.ok);
        pass = pass && r.ok;
      }
      cor.push_back(setting);
      ++k;
    }
  }
  summary["thresholds_pass"] = pass;
  summary["config"] = j;
  write_outputs(out, csv, summary);
  std::cout << "theorem mean " << th.mean_ok << " shift " << th.shift_ok << " variance " << th.var_ok
            << "; overall " << (pass ? "pass" : "fail") << "\n";
  return pass ? 0 : kThresholdFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expected perturbation score adversarial detection"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string config, data, out, score, nat, adv, variant = "deep", kernel_out;
  long n = 1000;
  std::uint64_t stream = streams::kTestNat;
  std::vector<int> T_values;
  AttackArgs attack_args;

  auto* gen = app.add_subcommand("generate", "Draw samples from the configured world");
  gen->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  gen->add_option("--n", n, "Sample count");
  gen->add_option("--stream", stream, "Seed stream");
  gen->add_option("--seed", seed, "Root seed override");
  gen->add_option("--out", out, "Output CSV")->required();

  auto* clf = app.add_subcommand("train-clf", "Train the toy classifier");
  clf->add_option("--config", config, "Config with a classifier.train section")->required()->check(CLI::ExistingFile);
  clf->add_option("--data", data, "Labeled CSV")->required()->check(CLI::ExistingFile);
  clf->add_option("--seed", seed, "Training seed override");
  clf->add_option("--out", out, "Classifier checkpoint")->required();

  auto* ts = app.add_subcommand("train-score", "Train a score network by denoising score matching");
  ts->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  ts->add_option("--data", data, "Training CSV")->required()->check(CLI::ExistingFile);
  ts->add_option("--seed", seed, "Seed override");
  ts->add_option("--out", out, "Checkpoint JSON")->required();

  auto* ep = app.add_subcommand("eps", "Compute EPS vectors of a data set");
  ep->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  ep->add_option("--score", score, "Score checkpoint (analytic score if omitted)")->check(CLI::ExistingFile);
  ep->add_option("--data", data, "Input CSV")->required()->check(CLI::ExistingFile);
  ep->add_option("--seed", seed, "Seed override");
  ep->add_option("--out", out, "EPS CSV")->required();

  auto* tk = app.add_subcommand("train-kernel", "Train an MMD kernel for test power");
  tk->add_option("--config", config, "Config with kernel.train settings")->check(CLI::ExistingFile);
  tk->add_option("--nat", nat, "Natural CSV")->required()->check(CLI::ExistingFile);
  tk->add_option("--adv", adv, "Adversarial CSV")->required()->check(CLI::ExistingFile);
  tk->add_option("--variant", variant, "deep or gaussian");
  tk->add_option("--seed", seed, "Seed override");
  tk->add_option("--out", out, "Kernel JSON")->required();

  auto* at = app.add_subcommand("attack", "Craft adversarial examples against a classifier");
  at->add_option("--clf", attack_args.clf, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
  at->add_option("--data", attack_args.data, "Labeled CSV")->required()->check(CLI::ExistingFile);
  at->add_option("--method", attack_args.method, "fgsm, bim, pgd or mim");
  at->add_option("--norm", attack_args.norm, "linf or l2");
  at->add_option("--eps", attack_args.eps, "Budget, k/255 or decimal");
  at->add_option("--steps", attack_args.steps, "Iterations");
  at->add_option("--step-size", attack_args.step_size, "Step size (default eps/steps)");
  at->add_option("--bounds", attack_args.bounds, "Input box lo hi")->expected(2);
  at->add_option("--seed", attack_args.seed, "Seed");
  at->add_option("--out", attack_args.out, "Adversarial CSV")->required();

  auto* dt = app.add_subcommand("detect", "Run the detection pipeline");
  dt->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  dt->add_option("--seed", seed, "Root seed override");
  dt->add_option("--out", out, "Output prefix (<out>.csv, <out>.json)")->required();
  dt->add_option("--kernel-out", kernel_out, "Write the kernel used");

  auto* sw = app.add_subcommand("sweep", "Timestep ablation sweep");
  sw->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  sw->add_option("--T", T_values, "Timestep values")->delimiter(',');
  sw->add_option("--seed", seed, "Root seed override");
  sw->add_option("--out", out, "Output prefix")->required();

  auto* vt = app.add_subcommand("validate-theory", "Monte Carlo check of the EPS moment and kernel theory");
  vt->add_option("--config", config, "Theory config")->required()->check(CLI::ExistingFile);
  vt->add_option("--seed", seed, "Seed override");
  vt->add_option("--out", out, "Output prefix")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(config, seed, n, stream, out);
    if (*clf) return cmd_train_clf(config, seed, data, out);
    if (*ts) return cmd_train_score(config, seed, data, out);
    if (*ep) return cmd_eps(config, seed, score, data, out);
    if (*tk) return cmd_train_kernel(config, seed, nat, adv, variant, out);
    if (*at) return cmd_attack(attack_args);
    if (*dt) return cmd_detect(config, seed, out, kernel_out);
    if (*sw) return cmd_sweep(config, seed, T_values, out);
    if (*vt) return cmd_validate_theory(config, seed, out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return kUsageError;
}
