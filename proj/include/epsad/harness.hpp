#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "epsad/analytic.hpp"
#include "epsad/attacks.hpp"
#include "epsad/eps.hpp"
#include "epsad/mmd.hpp"
#include "epsad/scorenet.hpp"

namespace epsad {

// Class-conditional Gaussians with diagonal covariance.
struct ClassWorld {
  std::vector<Vec> means;
  std::vector<Vec> stds;
  std::optional<std::pair<double, double>> bounds;

  int classes() const noexcept { return static_cast<int>(means.size()); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const ClassWorld& w);
void from_json(const nlohmann::json& j, ClassWorld& w);

// counts[c] samples of class c, emitted class by class.
LabeledData generate_world_data(const ClassWorld& world, std::span<const int> counts, Rng& rng);
// n samples split as evenly as possible over the classes.
LabeledData generate_world_data(const ClassWorld& world, std::size_t n, Rng& rng);

std::vector<Vec> sample_gaussian(const GaussianWorld& world, std::size_t n, Rng& rng);

// Mann-Whitney AUROC, adversarial as the positive class:
// (#{adv > nat} + 0.5 #{adv == nat}) / (|nat| |adv|).
double auroc(std::span<const double> nat, std::span<const double> adv);
// Hanley-McNeil standard error of an AUROC estimate.
double auroc_se(double auc, std::size_t n_nat, std::size_t n_adv);

enum class Detector { kEpsMmdDeep, kEpsMmdGaussian, kEpsNorm, kSingleScoreNorm, kRawMmd };

std::string to_string(Detector d);
Detector detector_from_string(const std::string& s);

struct ScoreSpec {
  enum class Source { kAnalytic, kCheckpoint, kTrain } source = Source::kAnalytic;
  std::string path;
  long n_train = 10000;
  std::vector<int> hidden{128, 128, 128};
  int time_embed = 8;
  int T_max = 0;  // train on grid indices 1..max(T_max, grid.T_star)
  TrainConfig train{};
};

// FGSM in linf and l2 at budget 1/255.
std::vector<AttackConfig> default_kernel_attacks();

struct KernelSourceSpec {
  enum class Source { kMedian, kFixed, kFile, kTrain } source = Source::kMedian;
  double sigma = 1.0;
  std::string path;
  long n_train = 1000;
  // Attacks crafting the adversarial training set (class worlds), each
  // applied to every natural training sample; Gaussian worlds shift instead.
  std::vector<AttackConfig> attacks = default_kernel_attacks();
  double shift = 1.0 / 255.0;
  KernelTrainConfig train{};
};

struct ClassifierSpec {
  enum class Source { kTrain, kFile } source = Source::kTrain;
  std::string path;
  long n_train = 2000;
  ClassifierTrainConfig train{};
};

// Adversarial inputs: either a fixed additive shift of natural samples
// (Gaussian worlds), or gradient attacks on a classifier (class worlds).
// Attack and shift budgets are multiplied by the world's feature range.
struct AdversarySpec {
  enum class Type { kShift, kAttack } type = Type::kShift;
  std::vector<double> shifts{0.3};  // one report per budget, shift = budget * 1
  std::vector<AttackConfig> attacks;
};

struct Thresholds {
  std::optional<double> auroc_min;
  std::optional<double> max_violation;
  // Sweeps: eps-mmd AUROC varies less across T than single-score-norm across t.
  bool eps_more_stable = false;
};

struct ExperimentConfig {
  std::variant<GaussianWorld, ClassWorld> world;
  double feature_range = 1.0;
  NoiseSchedule schedule{};
  TimeGrid grid{};
  PerturbMode perturb_mode = PerturbMode::kIndependent;
  Detector detector = Detector::kEpsMmdGaussian;
  ScoreSpec score{};
  KernelSourceSpec kernel{};
  ClassifierSpec classifier{};
  AdversarySpec adversary{};
  long n_ref = 500;
  long n_test_nat = 500;
  long n_test_adv = 500;
  int single_score_index = 5;  // grid index of t* for single-score-norm
  std::uint64_t seed = 0;
  Thresholds thresholds{};

  bool gaussian() const noexcept { return std::holds_alternative<GaussianWorld>(world); }
  Eigen::Index dim() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
// Parses a config; relative artifact paths resolve against base_dir.
ExperimentConfig load_experiment(const nlohmann::json& j, const std::string& base_dir = "");

// Samples, artifacts and adversarial inputs shared by every detector run of
// one experiment. Built once so that sweeps use common random numbers.
struct Prepared {
  ExperimentConfig cfg;
  std::optional<ScoreSource> score;
  std::optional<ToyClassifier> classifier;
  double classifier_accuracy = 0.0;
  std::vector<Vec> ref;
  LabeledData test_nat;
  std::vector<Vec> kernel_nat;
  std::vector<Vec> kernel_adv;
  std::vector<std::string> attack_names;
  std::vector<std::vector<Vec>> test_adv;  // one set per attack / shift
  std::vector<double> max_violation;       // per attack, max(d(x, x_adv) - eps, 0)
  std::vector<double> attack_success;      // per attack, misclassification rate
};

// Seed streams of the per-sample generators. Every adversarial set shares
// the kEpsAdv and kAttack streams, so sample i sees the same noise under
// every attack and budget.
namespace streams {
inline constexpr std::uint64_t kRef = 1;
inline constexpr std::uint64_t kTestNat = 2;
inline constexpr std::uint64_t kTestAdvSource = 3;
inline constexpr std::uint64_t kKernelNat = 4;
inline constexpr std::uint64_t kScoreData = 5;
inline constexpr std::uint64_t kClassifierData = 6;
inline constexpr std::uint64_t kEpsRef = 10;
inline constexpr std::uint64_t kEpsNat = 11;
inline constexpr std::uint64_t kEpsAdv = 12;
inline constexpr std::uint64_t kEpsKernelNat = 13;
inline constexpr std::uint64_t kEpsKernelAdv = 14;
inline constexpr std::uint64_t kAttack = 15;
inline constexpr std::uint64_t kKernelAttack = 9;
inline constexpr std::uint64_t kTraining = 7;
}  // namespace streams

// Throws ConfigError naming every missing artifact or incompatible setting.
Prepared prepare(const ExperimentConfig& cfg);

struct ReportRow {
  std::size_t id = 0;
  std::string attack;
  int label = 0;  // 0 natural, 1 adversarial
  double statistic = 0.0;
};

struct AttackReport {
  std::string attack;
  double auroc = 0.0;
  double auroc_se = 0.0;
  double max_violation = 0.0;
  double attack_success = 0.0;
};

struct DetectionReport {
  Detector detector = Detector::kEpsMmdGaussian;
  std::vector<ReportRow> rows;
  std::vector<AttackReport> attacks;
  std::vector<double> kernel_criterion_trace;
  std::optional<KernelSpec> kernel;
  double classifier_accuracy = 0.0;
  nlohmann::json config;
};

// Statistics for natural and every adversarial test set, then AUROC per set.
DetectionReport detect(const Prepared& prep, Detector detector, const TimeGrid& grid);
DetectionReport detect(const ExperimentConfig& cfg);

std::string report_csv(const DetectionReport& r);
nlohmann::json report_summary(const DetectionReport& r);
// True iff every threshold declared in the config is met by every attack.
bool thresholds_pass(const Thresholds& t, const DetectionReport& r);

struct SweepRow {
  std::string method;
  int T = 0;
  std::string attack;
  double auroc = 0.0;
  double auroc_se = 0.0;
};

// eps-mmd and eps-norm at T_star = T, single-score-norm at t* = grid.time(T).
// The eps-mmd row uses the configured detector when it is an eps-mmd one,
// eps-mmd-gaussian otherwise.
std::vector<SweepRow> timestep_sweep(const Prepared& prep, std::span<const int> T_values);
std::string sweep_csv(std::span<const SweepRow> rows);
// Sample standard deviation of the AUROC of one method over the sweep rows.
double sweep_stdev(std::span<const SweepRow> rows, const std::string& method);

struct TheoremReport {
  long n = 0;
  Vec mean_S;
  Vec se_S;
  Vec mean_diff;
  Vec se_diff;
  Vec predicted_shift;
  Vec var_diff;
  double predicted_var = 0.0;
  bool mean_ok = false;   // |mean_S| <= 3 se
  bool shift_ok = false;  // |mean_diff - shift| <= 3 se
  bool var_ok = false;    // |var_diff / predicted - 1| <= 0.05
};

// Monte Carlo check of the EPS moments under the analytic score. Each
// draw uses an independent x ~ world and y = x' + epsilon, x' ~ world.
TheoremReport validate_theorem(const GaussianWorld& world, const NoiseSchedule& sched,
                               const TimeGrid& grid, const Vec& epsilon, long n,
                               std::uint64_t seed, PerturbMode mode = PerturbMode::kIndependent);

struct CorollaryRow {
  double eta = 0.0;
  double predicted = 0.0;
  double empirical = 0.0;
  double se = 0.0;
  bool ok = false;  // within 3 se
};

// Frequency of k(D) > eta for D ~ N(mu_S, 2 sigma_S2 I), k the Gaussian
// kernel of bandwidth sigma_kernel, against kernel_exceed_prob.
std::vector<CorollaryRow> validate_corollary(const Vec& mu_S, double sigma_S2, double sigma_kernel,
                                             std::span<const double> etas, long n,
                                             std::uint64_t seed);

nlohmann::json to_json(const TheoremReport& r);
nlohmann::json to_json(const CorollaryRow& r);

}  // namespace epsad
