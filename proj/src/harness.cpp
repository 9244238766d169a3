#include "epsad/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "epsad/errors.hpp"
#include "epsad/io.hpp"
#include "epsad/kernels.hpp"

namespace epsad {

void ClassWorld::validate() const {
  if (means.size() < 2) throw ConfigError("class world needs at least 2 class means");
  if (stds.size() != means.size()) throw ConfigError("class world needs one std vector per class");
  const Eigen::Index d = dim();
  if (d < 1) throw ConfigError("class world has dimension 0");
  for (std::size_t c = 0; c < means.size(); ++c) {
    if (means[c].size() != d || stds[c].size() != d)
      throw ConfigError("class world: inconsistent dimension in class " + std::to_string(c));
    if (!means[c].allFinite() || !stds[c].allFinite() || (stds[c].array() < 0).any())
      throw ConfigError("class world: invalid mean or std in class " + std::to_string(c));
  }
  if (bounds && !(bounds->first < bounds->second)) throw ConfigError("class world bounds need lo < hi");
}

void to_json(nlohmann::json& j, const ClassWorld& w) {
  j = nlohmann::json{{"type", "classes"}};
  auto& means = j["means"] = nlohmann::json::array();
  auto& stds = j["stds"] = nlohmann::json::array();
  for (const auto& m : w.means) means.push_back(std::vector<double>(m.begin(), m.end()));
  for (const auto& s : w.stds) stds.push_back(std::vector<double>(s.begin(), s.end()));
  if (w.bounds) j["bounds"] = {w.bounds->first, w.bounds->second};
}

void from_json(const nlohmann::json& j, ClassWorld& w) {
  w = ClassWorld{};
  for (const auto& m : j.at("means")) {
    const auto v = m.get<std::vector<double>>();
    w.means.push_back(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  const auto& stds = j.at("stds");
  for (std::size_t c = 0; c < stds.size(); ++c) {
    const Eigen::Index d = c < w.means.size() ? w.means[c].size() : 0;
    if (stds[c].is_number()) {
      w.stds.push_back(Vec::Constant(d, stds[c].get<double>()));
    } else {
      const auto v = stds[c].get<std::vector<double>>();
      w.stds.push_back(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
  }
  if (j.contains("bounds")) {
    const auto b = j.at("bounds").get<std::vector<double>>();
    if (b.size() != 2) throw ConfigError("world bounds must be [lo, hi]");
    w.bounds = std::make_pair(b[0], b[1]);
  }
  w.validate();
}

LabeledData generate_world_data(const ClassWorld& world, std::span<const int> counts, Rng& rng) {
  world.validate();
  if (counts.size() != world.means.size()) throw InputError("one count per class required");
  LabeledData out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 0) throw InputError("negative class count");
    for (int k = 0; k < counts[c]; ++k) {
      Vec x = world.means[c] + world.stds[c].cwiseProduct(rng.normal_vector(world.dim()));
      if (world.bounds) x = x.cwiseMax(world.bounds->first).cwiseMin(world.bounds->second);
      out.x.push_back(std::move(x));
      out.y.push_back(static_cast<int>(c));
    }
  }
  return out;
}

LabeledData generate_world_data(const ClassWorld& world, std::size_t n, Rng& rng) {
  const std::size_t k = world.means.size();
  std::vector<int> counts(k, static_cast<int>(n / std::max<std::size_t>(k, 1)));
  for (std::size_t c = 0; c < n % std::max<std::size_t>(k, 1); ++c) ++counts[c];
  return generate_world_data(world, counts, rng);
}

std::vector<Vec> sample_gaussian(const GaussianWorld& world, std::size_t n, Rng& rng) {
  const double sd = std::sqrt(world.sigma_x2);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(world.mu_x + sd * rng.normal_vector(world.dim()));
  return out;
}

double auroc(std::span<const double> nat, std::span<const double> adv) {
  if (nat.empty() || adv.empty()) throw InputError("auroc needs non-empty score lists");
  std::vector<double> sorted(nat.begin(), nat.end());
  for (double v : sorted)
    if (std::isnan(v)) throw InputError("auroc: NaN score");
  std::sort(sorted.begin(), sorted.end());
  // Twice the Mann-Whitney count, kept integral so ties are exact.
  std::uint64_t twice_u = 0;
  for (double a : adv) {
    if (std::isnan(a)) throw InputError("auroc: NaN score");
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), a);
    const auto hi = std::upper_bound(lo, sorted.end(), a);
    twice_u += 2 * static_cast<std::uint64_t>(lo - sorted.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(nat.size()) * static_cast<double>(adv.size()));
}

double auroc_se(double auc, std::size_t n_nat, std::size_t n_adv) {
  if (n_nat == 0 || n_adv == 0) throw InputError("auroc_se needs non-empty score lists");
  const double q1 = auc / (2.0 - auc);
  const double q2 = 2.0 * auc * auc / (1.0 + auc);
  const double np = static_cast<double>(n_adv);
  const double nn = static_cast<double>(n_nat);
  const double var =
      (auc * (1.0 - auc) + (np - 1.0) * (q1 - auc * auc) + (nn - 1.0) * (q2 - auc * auc)) / (np * nn);
  return std::sqrt(std::max(var, 0.0));
}

std::string to_string(Detector d) {
  switch (d) {
    case Detector::kEpsMmdDeep: return "eps-mmd-deep";
    case Detector::kEpsMmdGaussian: return "eps-mmd-gaussian";
    case Detector::kEpsNorm: return "eps-norm";
    case Detector::kSingleScoreNorm: return "single-score-norm";
    case Detector::kRawMmd: return "raw-mmd";
  }
  return "?";
}

Detector detector_from_string(const std::string& s) {
  for (Detector d : {Detector::kEpsMmdDeep, Detector::kEpsMmdGaussian, Detector::kEpsNorm,
                     Detector::kSingleScoreNorm, Detector::kRawMmd})
    if (to_string(d) == s) return d;
  throw ConfigError("unknown detector '" + s + "'");
}

std::vector<AttackConfig> default_kernel_attacks() {
  std::vector<AttackConfig> out(2);
  for (auto& a : out) {
    a.method = AttackMethod::kFgsm;
    a.epsilon = 1.0 / 255.0;
    a.steps = 1;
  }
  out[1].norm = Norm::kL2;
  return out;
}

namespace {

bool uses_score(Detector d) { return d != Detector::kRawMmd; }
bool uses_kernel(Detector d) {
  return d == Detector::kEpsMmdDeep || d == Detector::kEpsMmdGaussian || d == Detector::kRawMmd;
}

const char* score_source_name(ScoreSpec::Source s) {
  switch (s) {
    case ScoreSpec::Source::kAnalytic: return "analytic";
    case ScoreSpec::Source::kCheckpoint: return "checkpoint";
    case ScoreSpec::Source::kTrain: return "train";
  }
  return "?";
}

const char* kernel_source_name(KernelSourceSpec::Source s) {
  switch (s) {
    case KernelSourceSpec::Source::kMedian: return "median";
    case KernelSourceSpec::Source::kFixed: return "fixed";
    case KernelSourceSpec::Source::kFile: return "file";
    case KernelSourceSpec::Source::kTrain: return "train";
  }
  return "?";
}

double budget_value(const nlohmann::json& j) {
  return j.is_string() ? parse_epsilon(j.get<std::string>()) : j.get<double>();
}

std::string budget_label(double b) {
  const double k = b * 255.0;
  if (std::abs(k - std::round(k)) < 1e-9 && k >= 0.5)
    return std::to_string(static_cast<long>(std::round(k))) + "/255";
  return io::format_double(b);
}

std::vector<AttackConfig> parse_attacks(const nlohmann::json& j) {
  std::vector<AttackConfig> out;
  for (const auto& a : j) out.push_back(a.get<AttackConfig>());
  return out;
}

std::uint64_t training_seed(std::uint64_t root, std::uint64_t purpose, std::uint64_t nested) {
  return derive_seed(root, (streams::kTraining << 8) | purpose, nested);
}

AttackConfig scaled(AttackConfig a, double range, const std::optional<std::pair<double, double>>& bounds) {
  a.epsilon *= range;
  if (a.step_size) *a.step_size *= range;
  if (bounds && !a.bounds) a.bounds = bounds;
  return a;
}

std::filesystem::path resolve(const std::string& base, const std::string& p) {
  std::filesystem::path path(p);
  if (base.empty() || path.empty() || path.is_absolute()) return path;
  return std::filesystem::path(base) / path;
}

}  // namespace

Eigen::Index ExperimentConfig::dim() const {
  return std::visit([](const auto& w) { return w.dim(); }, world);
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  if (const auto* g = std::get_if<GaussianWorld>(&world)) {
    if (g->dim() < 1) problems.push_back("gaussian world has dimension 0");
  } else {
    std::get<ClassWorld>(world).validate();
  }
  if (!(feature_range > 0.0)) problems.push_back("feature_range must be > 0");
  if (n_ref < 1 || n_test_nat < 1 || n_test_adv < 1) problems.push_back("set sizes must be >= 1");
  if (single_score_index < 1) problems.push_back("single_score_index must be >= 1");
  grid.validate(schedule);
  if (uses_score(detector)) {
    if (score.source == ScoreSpec::Source::kAnalytic && !gaussian())
      problems.push_back("analytic score needs a gaussian world");
    if (score.source == ScoreSpec::Source::kCheckpoint && !std::filesystem::exists(score.path))
      problems.push_back("score checkpoint '" + score.path + "' not found");
    if (score.source == ScoreSpec::Source::kTrain) {
      if (score.n_train < 1) problems.push_back("score.n_train must be >= 1");
      score.train.validate();
    }
  }
  if (uses_kernel(detector)) {
    if (kernel.source == KernelSourceSpec::Source::kFile && !std::filesystem::exists(kernel.path))
      problems.push_back("kernel file '" + kernel.path + "' not found");
    if (detector == Detector::kEpsMmdDeep && (kernel.source == KernelSourceSpec::Source::kMedian ||
                                              kernel.source == KernelSourceSpec::Source::kFixed))
      problems.push_back("eps-mmd-deep needs kernel.source 'train' or 'file'");
    if (kernel.source == KernelSourceSpec::Source::kFixed && !(kernel.sigma > 0.0))
      problems.push_back("kernel.sigma must be > 0");
    if (kernel.source == KernelSourceSpec::Source::kTrain) {
      if (kernel.n_train < 1) problems.push_back("kernel.n_train must be >= 1");
      if (!gaussian() && kernel.attacks.empty()) problems.push_back("kernel.attacks is empty");
      kernel.train.validate();
    }
  }
  const bool needs_clf = !gaussian() && (adversary.type == AdversarySpec::Type::kAttack ||
                                         (uses_kernel(detector) &&
                                          kernel.source == KernelSourceSpec::Source::kTrain));
  if (needs_clf && classifier.source == ClassifierSpec::Source::kFile &&
      !std::filesystem::exists(classifier.path))
    problems.push_back("classifier checkpoint '" + classifier.path + "' not found");
  if (adversary.type == AdversarySpec::Type::kAttack) {
    if (gaussian()) problems.push_back("attack adversaries need a class world (use type 'shift')");
    if (adversary.attacks.empty()) problems.push_back("adversary.attacks is empty");
  } else if (adversary.shifts.empty()) {
    problems.push_back("adversary.budgets is empty");
  }
  if (!problems.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json::object();
  if (const auto* g = std::get_if<GaussianWorld>(&c.world)) {
    j["world"] = *g;
    j["world"]["type"] = "gaussian";
  } else {
    j["world"] = std::get<ClassWorld>(c.world);
  }
  j["world"]["feature_range"] = c.feature_range;
  j["schedule"] = c.schedule;
  j["grid"] = c.grid;
  j["perturb_mode"] = to_string(c.perturb_mode);
  j["detector"] = to_string(c.detector);

  auto& s = j["score"] = {{"source", score_source_name(c.score.source)}};
  if (c.score.source == ScoreSpec::Source::kCheckpoint) s["path"] = c.score.path;
  if (c.score.source == ScoreSpec::Source::kTrain) {
    s["n_train"] = c.score.n_train;
    s["hidden"] = c.score.hidden;
    s["time_embed"] = c.score.time_embed;
    s["T_max"] = c.score.T_max;
    s["train"] = c.score.train;
  }

  auto& k = j["kernel"] = {{"source", kernel_source_name(c.kernel.source)}};
  if (c.kernel.source == KernelSourceSpec::Source::kFixed) k["sigma"] = c.kernel.sigma;
  if (c.kernel.source == KernelSourceSpec::Source::kFile) k["path"] = c.kernel.path;
  if (c.kernel.source == KernelSourceSpec::Source::kTrain) {
    k["n_train"] = c.kernel.n_train;
    k["attacks"] = c.kernel.attacks;
    k["shift"] = c.kernel.shift;
    k["train"] = c.kernel.train;
  }

  auto& cl = j["classifier"] =
      {{"source", c.classifier.source == ClassifierSpec::Source::kTrain ? "train" : "file"}};
  if (c.classifier.source == ClassifierSpec::Source::kFile) cl["path"] = c.classifier.path;
  else {
    cl["n_train"] = c.classifier.n_train;
    cl["train"] = c.classifier.train;
  }

  if (c.adversary.type == AdversarySpec::Type::kShift)
    j["adversary"] = {{"type", "shift"}, {"budgets", c.adversary.shifts}};
  else
    j["adversary"] = {{"type", "attack"}, {"attacks", c.adversary.attacks}};

  j["n_ref"] = c.n_ref;
  j["n_test_nat"] = c.n_test_nat;
  j["n_test_adv"] = c.n_test_adv;
  j["single_score_index"] = c.single_score_index;
  j["seed"] = c.seed;
  auto& th = j["thresholds"] = nlohmann::json::object();
  if (c.thresholds.auroc_min) th["auroc_min"] = *c.thresholds.auroc_min;
  if (c.thresholds.max_violation) th["max_violation"] = *c.thresholds.max_violation;
  if (c.thresholds.eps_more_stable) th["eps_more_stable"] = true;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  const auto& w = j.at("world");
  const std::string type = w.value("type", std::string("gaussian"));
  if (type == "gaussian") c.world = w.get<GaussianWorld>();
  else if (type == "classes") c.world = w.get<ClassWorld>();
  else throw ConfigError("unknown world type '" + type + "'");
  c.feature_range = w.value("feature_range", 1.0);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<NoiseSchedule>();
  if (j.contains("grid")) c.grid = j.at("grid").get<TimeGrid>();
  c.perturb_mode = perturb_mode_from_string(j.value("perturb_mode", std::string("independent")));
  c.detector = detector_from_string(j.value("detector", std::string("eps-mmd-gaussian")));

  if (j.contains("score")) {
    const auto& s = j.at("score");
    const std::string src = s.value("source", std::string("analytic"));
    if (src == "analytic") c.score.source = ScoreSpec::Source::kAnalytic;
    else if (src == "checkpoint") c.score.source = ScoreSpec::Source::kCheckpoint;
    else if (src == "train") c.score.source = ScoreSpec::Source::kTrain;
    else throw ConfigError("unknown score source '" + src + "'");
    c.score.path = s.value("path", std::string());
    c.score.n_train = s.value("n_train", c.score.n_train);
    c.score.hidden = s.value("hidden", c.score.hidden);
    c.score.time_embed = s.value("time_embed", c.score.time_embed);
    c.score.T_max = s.value("T_max", c.score.T_max);
    if (s.contains("train")) c.score.train = s.at("train").get<TrainConfig>();
  }

  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    const std::string src = k.value("source", std::string("median"));
    if (src == "median") c.kernel.source = KernelSourceSpec::Source::kMedian;
    else if (src == "fixed") c.kernel.source = KernelSourceSpec::Source::kFixed;
    else if (src == "file") c.kernel.source = KernelSourceSpec::Source::kFile;
    else if (src == "train") c.kernel.source = KernelSourceSpec::Source::kTrain;
    else throw ConfigError("unknown kernel source '" + src + "'");
    c.kernel.sigma = k.value("sigma", c.kernel.sigma);
    c.kernel.path = k.value("path", std::string());
    c.kernel.n_train = k.value("n_train", c.kernel.n_train);
    if (k.contains("attacks")) c.kernel.attacks = parse_attacks(k.at("attacks"));
    if (k.contains("shift")) c.kernel.shift = budget_value(k.at("shift"));
    if (k.contains("train")) c.kernel.train = k.at("train").get<KernelTrainConfig>();
  }

  if (j.contains("classifier")) {
    const auto& cl = j.at("classifier");
    const std::string src = cl.value("source", std::string("train"));
    if (src == "train") c.classifier.source = ClassifierSpec::Source::kTrain;
    else if (src == "file") c.classifier.source = ClassifierSpec::Source::kFile;
    else throw ConfigError("unknown classifier source '" + src + "'");
    c.classifier.path = cl.value("path", std::string());
    c.classifier.n_train = cl.value("n_train", c.classifier.n_train);
    if (cl.contains("train")) c.classifier.train = cl.at("train").get<ClassifierTrainConfig>();
  }

  if (j.contains("adversary")) {
    const auto& a = j.at("adversary");
    const std::string t = a.value("type", std::string("shift"));
    if (t == "shift") {
      c.adversary.type = AdversarySpec::Type::kShift;
      if (a.contains("budgets")) {
        c.adversary.shifts.clear();
        for (const auto& b : a.at("budgets")) c.adversary.shifts.push_back(budget_value(b));
      }
    } else if (t == "attack") {
      c.adversary.type = AdversarySpec::Type::kAttack;
      c.adversary.attacks = parse_attacks(a.at("attacks"));
    } else {
      throw ConfigError("unknown adversary type '" + t + "'");
    }
  }

  c.n_ref = j.value("n_ref", c.n_ref);
  c.n_test_nat = j.value("n_test_nat", c.n_test_nat);
  c.n_test_adv = j.value("n_test_adv", c.n_test_adv);
  c.single_score_index = j.value("single_score_index", c.single_score_index);
  c.seed = j.value("seed", c.seed);
  if (j.contains("thresholds")) {
    const auto& th = j.at("thresholds");
    if (th.contains("auroc_min")) c.thresholds.auroc_min = th.at("auroc_min").get<double>();
    if (th.contains("max_violation")) c.thresholds.max_violation = th.at("max_violation").get<double>();
    c.thresholds.eps_more_stable = th.value("eps_more_stable", false);
  }
}

ExperimentConfig load_experiment(const nlohmann::json& j, const std::string& base_dir) {
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  c.score.path = resolve(base_dir, c.score.path).string();
  c.kernel.path = resolve(base_dir, c.kernel.path).string();
  c.classifier.path = resolve(base_dir, c.classifier.path).string();
  c.validate();
  return c;
}

namespace {

struct DataSets {
  std::vector<Vec> ref;
  LabeledData test_nat;
  LabeledData adv_source;
  LabeledData kernel_nat;
};

LabeledData draw(const ExperimentConfig& cfg, std::size_t n, std::uint64_t stream) {
  Rng rng(derive_seed(cfg.seed, stream));
  if (const auto* g = std::get_if<GaussianWorld>(&cfg.world)) {
    LabeledData out;
    out.x = sample_gaussian(*g, n, rng);
    out.y.assign(n, 0);
    return out;
  }
  return generate_world_data(std::get<ClassWorld>(cfg.world), n, rng);
}

ScoreSource make_score(const ExperimentConfig& cfg) {
  switch (cfg.score.source) {
    case ScoreSpec::Source::kAnalytic:
      return ScoreSource::analytic(std::get<GaussianWorld>(cfg.world), cfg.schedule);
    case ScoreSpec::Source::kCheckpoint: {
      auto net = std::make_shared<ScoreNet>(io::read_json(cfg.score.path).get<ScoreNet>());
      if (net->dim() != cfg.dim()) throw ConfigError("score checkpoint dimension does not match the world");
      return ScoreSource::learned(std::move(net), cfg.schedule);
    }
    case ScoreSpec::Source::kTrain: {
      const LabeledData data = draw(cfg, static_cast<std::size_t>(cfg.score.n_train), streams::kScoreData);
      TimeGrid g = cfg.grid;
      g.T_star = std::max(cfg.grid.T_star, cfg.score.T_max);
      ScoreNet net(static_cast<int>(cfg.dim()), cfg.score.hidden, cfg.score.time_embed);
      Rng init(training_seed(cfg.seed, 1, cfg.score.train.seed));
      net.init(init);
      TrainConfig tc = cfg.score.train;
      tc.seed = training_seed(cfg.seed, 2, cfg.score.train.seed);
      auto trained = train_score(std::move(net), data.x, cfg.schedule, g.times(), tc);
      return ScoreSource::learned(std::make_shared<ScoreNet>(std::move(trained.net)), cfg.schedule);
    }
  }
  throw ConfigError("unknown score source");
}

ToyClassifier make_classifier(const ExperimentConfig& cfg) {
  const auto& w = std::get<ClassWorld>(cfg.world);
  if (cfg.classifier.source == ClassifierSpec::Source::kFile) {
    auto clf = io::read_json(cfg.classifier.path).get<ToyClassifier>();
    if (clf.dim() != w.dim() || clf.classes() != w.classes())
      throw ConfigError("classifier checkpoint does not match the world");
    return clf;
  }
  const LabeledData data =
      draw(cfg, static_cast<std::size_t>(cfg.classifier.n_train), streams::kClassifierData);
  ClassifierTrainConfig tc = cfg.classifier.train;
  tc.seed = training_seed(cfg.seed, 3, tc.seed);
  return train_classifier(data, tc);
}

std::vector<Vec> shifted(std::span<const Vec> xs, double amount) {
  std::vector<Vec> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.array() + amount);
  return out;
}

}  // namespace

Prepared prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  Prepared p;
  p.cfg = cfg;
  const double range = cfg.feature_range;
  const ClassWorld* cw = std::get_if<ClassWorld>(&cfg.world);
  const auto bounds = cw ? cw->bounds : std::optional<std::pair<double, double>>{};

  p.ref = draw(cfg, static_cast<std::size_t>(cfg.n_ref), streams::kRef).x;
  p.test_nat = draw(cfg, static_cast<std::size_t>(cfg.n_test_nat), streams::kTestNat);
  const LabeledData source = draw(cfg, static_cast<std::size_t>(cfg.n_test_adv), streams::kTestAdvSource);

  if (uses_score(cfg.detector)) p.score = make_score(cfg);

  const bool train_kernel = uses_kernel(cfg.detector) && cfg.kernel.source == KernelSourceSpec::Source::kTrain;
  const bool needs_clf = !cfg.gaussian() && (cfg.adversary.type == AdversarySpec::Type::kAttack || train_kernel);
  if (needs_clf) {
    p.classifier = make_classifier(cfg);
    p.classifier_accuracy = accuracy(*p.classifier, p.test_nat);
  }

  if (train_kernel) {
    const LabeledData nat = draw(cfg, static_cast<std::size_t>(cfg.kernel.n_train), streams::kKernelNat);
    p.kernel_nat = nat.x;
    if (cfg.gaussian()) {
      p.kernel_adv = shifted(nat.x, cfg.kernel.shift * range);
    } else {
      for (std::size_t a = 0; a < cfg.kernel.attacks.size(); ++a) {
        const AttackConfig ac = scaled(cfg.kernel.attacks[a], range, bounds);
        auto adv = attack_batch_parallel(*p.classifier, nat.x, nat.y, ac,
                                         SeedStream{cfg.seed, (streams::kKernelAttack << 8) | a});
        for (auto& x : adv) p.kernel_adv.push_back(std::move(x));
      }
    }
  }

  if (cfg.adversary.type == AdversarySpec::Type::kShift) {
    for (double b : cfg.adversary.shifts) {
      p.attack_names.push_back("shift@" + budget_label(b));
      p.test_adv.push_back(shifted(source.x, b * range));
      p.max_violation.push_back(0.0);
      double miss = 0.0;
      if (p.classifier) {
        const LabeledData moved{p.test_adv.back(), source.y};
        miss = 1.0 - accuracy(*p.classifier, moved);
      }
      p.attack_success.push_back(miss);
    }
  } else {
    for (const auto& raw : cfg.adversary.attacks) {
      const AttackConfig ac = scaled(raw, range, bounds);
      p.attack_names.push_back(raw.name() + "@" + budget_label(raw.epsilon));
      auto adv = attack_batch_parallel(*p.classifier, source.x, source.y, ac,
                                       SeedStream{cfg.seed, streams::kAttack});
      double violation = 0.0;
      for (std::size_t i = 0; i < adv.size(); ++i)
        violation = std::max(violation, distance(source.x[i], adv[i], ac.norm) - ac.epsilon);
      p.max_violation.push_back(std::max(violation, 0.0));
      p.attack_success.push_back(1.0 - accuracy(*p.classifier, LabeledData{adv, source.y}));
      p.test_adv.push_back(std::move(adv));
    }
  }
  return p;
}

namespace {

struct Stats {
  std::vector<double> nat;
  std::vector<std::vector<double>> adv;
  std::optional<KernelSpec> kernel;
  std::vector<double> trace;
};

std::vector<Vec> eps_values(const Prepared& p, std::span<const Vec> xs, const TimeGrid& grid,
                            std::uint64_t stream) {
  const auto eps = eps_batch_parallel(*p.score, xs, grid, SeedStream{p.cfg.seed, stream}, p.cfg.perturb_mode);
  return values_of(eps);
}

std::vector<double> squared_norms(std::span<const Vec> xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i].squaredNorm();
  return out;
}

std::vector<Vec> pooled(std::span<const Vec> a, std::span<const Vec> b) {
  std::vector<Vec> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

KernelSpec choose_kernel(const Prepared& p, Detector detector, std::span<const Vec> ref,
                         std::span<const Vec> knat, std::span<const Vec> kadv, Stats& stats) {
  const auto& ks = p.cfg.kernel;
  switch (ks.source) {
    case KernelSourceSpec::Source::kFixed: return GaussianKernel{ks.sigma};
    case KernelSourceSpec::Source::kMedian: return GaussianKernel{median_heuristic(ref)};
    case KernelSourceSpec::Source::kFile: return io::read_json(ks.path).get<KernelSpec>();
    case KernelSourceSpec::Source::kTrain: {
      KernelTrainConfig tc = ks.train;
      tc.seed = training_seed(p.cfg.seed, 4, ks.train.seed);
      KernelTrainResult r =
          detector == Detector::kEpsMmdGaussian
              ? train_kernel_from(GaussianKernel{median_heuristic(pooled(knat, kadv))}, knat, kadv, tc)
              : train_deep_kernel(knat, kadv, tc);
      stats.trace = std::move(r.criterion_trace);
      return std::move(r.kernel);
    }
  }
  throw ConfigError("unknown kernel source");
}

Stats compute_stats(const Prepared& p, Detector detector, const TimeGrid& grid, double t_star) {
  Stats s;
  const auto& cfg = p.cfg;
  if (uses_score(detector) && !p.score) throw ConfigError("detector " + to_string(detector) + " needs a score model");
  switch (detector) {
    case Detector::kSingleScoreNorm: {
      s.nat = single_score_norm_batch_parallel(*p.score, p.test_nat.x, t_star,
                                               SeedStream{cfg.seed, streams::kEpsNat}, cfg.perturb_mode);
      for (const auto& adv : p.test_adv)
        s.adv.push_back(single_score_norm_batch_parallel(*p.score, adv, t_star,
                                                         SeedStream{cfg.seed, streams::kEpsAdv},
                                                         cfg.perturb_mode));
      return s;
    }
    case Detector::kEpsNorm: {
      s.nat = squared_norms(eps_values(p, p.test_nat.x, grid, streams::kEpsNat));
      for (const auto& adv : p.test_adv)
        s.adv.push_back(squared_norms(eps_values(p, adv, grid, streams::kEpsAdv)));
      return s;
    }
    case Detector::kRawMmd:
    case Detector::kEpsMmdGaussian:
    case Detector::kEpsMmdDeep: {
      const bool raw = detector == Detector::kRawMmd;
      const bool train = cfg.kernel.source == KernelSourceSpec::Source::kTrain;
      if (train && (p.kernel_nat.empty() || p.kernel_adv.empty()))
        throw ConfigError("kernel training set was not prepared");
      const auto feats = [&](std::span<const Vec> xs, std::uint64_t stream) {
        return raw ? std::vector<Vec>(xs.begin(), xs.end()) : eps_values(p, xs, grid, stream);
      };
      const std::vector<Vec> ref = feats(p.ref, streams::kEpsRef);
      std::vector<Vec> knat, kadv;
      if (train) {
        knat = feats(p.kernel_nat, streams::kEpsKernelNat);
        kadv = feats(p.kernel_adv, streams::kEpsKernelAdv);
      }
      s.kernel = choose_kernel(p, detector, ref, knat, kadv, s);
      const MmdReference mmd(*s.kernel, ref);
      s.nat = mmd_statistics_parallel(mmd, feats(p.test_nat.x, streams::kEpsNat));
      for (const auto& adv : p.test_adv) s.adv.push_back(mmd_statistics_parallel(mmd, feats(adv, streams::kEpsAdv)));
      return s;
    }
  }
  throw ConfigError("unknown detector");
}

std::vector<AttackReport> summarize(const Prepared& p, const Stats& s) {
  std::vector<AttackReport> out;
  for (std::size_t a = 0; a < s.adv.size(); ++a) {
    AttackReport r;
    r.attack = p.attack_names[a];
    r.auroc = auroc(s.nat, s.adv[a]);
    r.auroc_se = auroc_se(r.auroc, s.nat.size(), s.adv[a].size());
    r.max_violation = p.max_violation[a];
    r.attack_success = p.attack_success[a];
    out.push_back(r);
  }
  return out;
}

}  // namespace

DetectionReport detect(const Prepared& prep, Detector detector, const TimeGrid& grid) {
  grid.validate(prep.cfg.schedule);
  Stats s = compute_stats(prep, detector, grid, grid.time(prep.cfg.single_score_index));
  DetectionReport r;
  r.detector = detector;
  r.config = prep.cfg;
  r.config["detector"] = to_string(detector);
  r.config["grid"] = grid;
  r.classifier_accuracy = prep.classifier_accuracy;
  r.kernel = s.kernel;
  r.kernel_criterion_trace = s.trace;
  std::size_t id = 0;
  for (double v : s.nat) r.rows.push_back({id++, "natural", 0, v});
  for (std::size_t a = 0; a < s.adv.size(); ++a)
    for (double v : s.adv[a]) r.rows.push_back({id++, prep.attack_names[a], 1, v});
  r.attacks = summarize(prep, s);
  return r;
}

DetectionReport detect(const ExperimentConfig& cfg) {
  const Prepared p = prepare(cfg);
  return detect(p, cfg.detector, cfg.grid);
}

std::string report_csv(const DetectionReport& r) {
  std::string out = "id,attack,label,statistic\n";
  for (const auto& row : r.rows)
    out += std::to_string(row.id) + "," + row.attack + "," + std::to_string(row.label) + "," +
           io::format_double(row.statistic) + "\n";
  return out;
}

nlohmann::json report_summary(const DetectionReport& r) {
  nlohmann::json j;
  j["detector"] = to_string(r.detector);
  auto& attacks = j["attacks"] = nlohmann::json::array();
  std::size_t n_nat = 0;
  for (const auto& row : r.rows) n_nat += row.label == 0;
  for (const auto& a : r.attacks) {
    attacks.push_back({{"attack", a.attack},
                       {"auroc", a.auroc},
                       {"auroc_se", a.auroc_se},
                       {"max_violation", a.max_violation},
                       {"attack_success", a.attack_success}});
  }
  j["n_natural"] = n_nat;
  j["n_rows"] = r.rows.size();
  j["classifier_accuracy"] = r.classifier_accuracy;
  if (r.kernel) {
    nlohmann::json kj = *r.kernel;
    j["kernel_variant"] = kj.at("variant");
  }
  if (!r.kernel_criterion_trace.empty()) j["kernel_criterion_final"] = r.kernel_criterion_trace.back();
  j["config"] = r.config;
  return j;
}

bool thresholds_pass(const Thresholds& t, const DetectionReport& r) {
  for (const auto& a : r.attacks) {
    if (t.auroc_min && !(a.auroc >= *t.auroc_min)) return false;
    if (t.max_violation && !(a.max_violation <= *t.max_violation)) return false;
  }
  return true;
}

std::vector<SweepRow> timestep_sweep(const Prepared& prep, std::span<const int> T_values) {
  const Detector mmd = prep.cfg.detector == Detector::kEpsMmdDeep ? Detector::kEpsMmdDeep
                                                                   : Detector::kEpsMmdGaussian;
  std::vector<SweepRow> rows;
  for (int T : T_values) {
    TimeGrid g = prep.cfg.grid;
    g.T_star = T;
    g.validate(prep.cfg.schedule);
    for (Detector d : {mmd, Detector::kEpsNorm, Detector::kSingleScoreNorm}) {
      const auto reports = summarize(prep, compute_stats(prep, d, g, g.time(T)));
      for (const auto& a : reports) rows.push_back({to_string(d), T, a.attack, a.auroc, a.auroc_se});
    }
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "method,T,attack,auroc,auroc_se\n";
  for (const auto& r : rows)
    out += r.method + "," + std::to_string(r.T) + "," + r.attack + "," + io::format_double(r.auroc) + "," +
           io::format_double(r.auroc_se) + "\n";
  return out;
}

double sweep_stdev(std::span<const SweepRow> rows, const std::string& method) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.method == method) v.push_back(r.auroc);
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

namespace {

struct Moments {
  Vec mean;
  Vec var;
};

Moments moments(std::span<const Vec> xs) {
  const Eigen::Index d = xs.front().size();
  Vec mean = Vec::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  Vec var = Vec::Zero(d);
  for (const auto& x : xs) var.array() += (x - mean).array().square();
  var /= static_cast<double>(xs.size() - 1);
  return {mean, var};
}

}  // namespace

TheoremReport validate_theorem(const GaussianWorld& world, const NoiseSchedule& sched,
                               const TimeGrid& grid, const Vec& epsilon, long n,
                               std::uint64_t seed, PerturbMode mode) {
  if (n < 2) throw InputError("validate_theorem needs n >= 2");
  if (epsilon.size() != world.dim()) throw InputError("epsilon dimension does not match the world");
  grid.validate(sched);
  const auto count = static_cast<std::size_t>(n);
  Rng rx(derive_seed(seed, streams::kTestNat));
  Rng ry(derive_seed(seed, streams::kTestAdvSource));
  const std::vector<Vec> xs = sample_gaussian(world, count, rx);
  std::vector<Vec> ys = sample_gaussian(world, count, ry);
  for (auto& y : ys) y += epsilon;
  const ScoreSource src = ScoreSource::analytic(world, sched);
  const auto sx = values_of(eps_batch_parallel(src, xs, grid, SeedStream{seed, streams::kEpsNat}, mode));
  const auto sy = values_of(eps_batch_parallel(src, ys, grid, SeedStream{seed, streams::kEpsAdv}, mode));
  std::vector<Vec> diff(count);
  for (std::size_t i = 0; i < count; ++i) diff[i] = sx[i] - sy[i];

  const auto times = grid.times();
  const EpsTheory th = eps_theory(world, sched, epsilon, times);
  const Moments ms = moments(sx);
  const Moments md = moments(diff);
  const double root_n = std::sqrt(static_cast<double>(n));

  TheoremReport r;
  r.n = n;
  r.mean_S = ms.mean;
  r.se_S = ms.var.cwiseSqrt() / root_n;
  r.mean_diff = md.mean;
  r.se_diff = md.var.cwiseSqrt() / root_n;
  r.predicted_shift = th.mu_S;
  r.var_diff = md.var;
  r.predicted_var = 2.0 * th.sigma_S2;
  r.mean_ok = (r.mean_S.cwiseAbs().array() <= 3.0 * r.se_S.array()).all();
  r.shift_ok = ((r.mean_diff - r.predicted_shift).cwiseAbs().array() <= 3.0 * r.se_diff.array()).all();
  r.var_ok = ((r.var_diff.array() / r.predicted_var - 1.0).abs() <= 0.05).all();
  return r;
}

std::vector<CorollaryRow> validate_corollary(const Vec& mu_S, double sigma_S2, double sigma_kernel,
                                             std::span<const double> etas, long n,
                                             std::uint64_t seed) {
  if (n < 1) throw InputError("validate_corollary needs n >= 1");
  if (!(sigma_S2 > 0.0) || !(sigma_kernel > 0.0)) throw DomainError("validate_corollary: variances must be > 0");
  Rng rng(seed);
  const double sd = std::sqrt(2.0 * sigma_S2);
  std::vector<double> sq(static_cast<std::size_t>(n));
  for (auto& v : sq) v = (mu_S + sd * rng.normal_vector(mu_S.size())).squaredNorm();
  std::vector<CorollaryRow> rows;
  for (double eta : etas) {
    CorollaryRow row;
    row.eta = eta;
    row.predicted = kernel_exceed_prob(eta, sigma_kernel, sigma_S2, mu_S);
    long hits = 0;
    for (double v : sq) hits += std::exp(-v / (2.0 * sigma_kernel * sigma_kernel)) > eta;
    row.empirical = static_cast<double>(hits) / static_cast<double>(n);
    const double p = row.predicted;
    row.se = std::max(std::sqrt(p * (1.0 - p) / static_cast<double>(n)), 1.0 / static_cast<double>(n));
    row.ok = std::abs(row.empirical - row.predicted) <= 3.0 * row.se;
    rows.push_back(row);
  }
  return rows;
}

namespace {
std::vector<double> as_vector(const Vec& v) { return {v.begin(), v.end()}; }
}  // namespace

nlohmann::json to_json(const TheoremReport& r) {
  return {{"n", r.n},
          {"mean_S", as_vector(r.mean_S)},
          {"se_S", as_vector(r.se_S)},
          {"mean_diff", as_vector(r.mean_diff)},
          {"se_diff", as_vector(r.se_diff)},
          {"predicted_shift", as_vector(r.predicted_shift)},
          {"var_diff", as_vector(r.var_diff)},
          {"predicted_var", r.predicted_var},
          {"mean_ok", r.mean_ok},
          {"shift_ok", r.shift_ok},
          {"var_ok", r.var_ok}};
}

nlohmann::json to_json(const CorollaryRow& r) {
  return {{"eta", r.eta}, {"predicted", r.predicted}, {"empirical", r.empirical}, {"se", r.se}, {"ok", r.ok}};
}

}  // namespace epsad
