#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "epsad/mlp.hpp"

namespace epsad {

// k(a, b) = exp(-||a - b||^2 / (2 sigma^2))
struct GaussianKernel {
  double sigma = 1.0;
};

// k(a, b) = [(1 - eps0) kappa(phi(a), phi(b)) + eps0] q(a, b)
// kappa: Gaussian of bandwidth sigma_phi on featurizer outputs.
// q:     Gaussian of bandwidth sigma_q on the raw inputs.
// The featurizer sees inputs standardised by (a - input_shift) / input_scale.
// eps0 and the bandwidths are stored unconstrained (logit / log).
struct DeepKernel {
  Mlp featurizer;
  Vec input_shift;
  Vec input_scale;
  double eps0_logit = 0.0;
  double log_sigma_phi = 0.0;
  double log_sigma_q = 0.0;

  double eps0() const;
  double sigma_phi() const;
  double sigma_q() const;

  // Featurizer outputs, one column per input column.
  Mat features(const Mat& x) const;
  Mat standardize(const Mat& x) const;
};

using KernelSpec = std::variant<GaussianKernel, DeepKernel>;

void to_json(nlohmann::json& j, const KernelSpec& k);
void from_json(const nlohmann::json& j, KernelSpec& k);

double kernel_eval(const KernelSpec& spec, const Vec& a, const Vec& b);

// Kernel matrix between the columns of a and b.
Mat gram(const KernelSpec& spec, const Mat& a, const Mat& b);

Mat to_columns(std::span<const Vec> xs);

// (1/n^2) sum_ij k(x_i, x_j) - (2/n) sum_i k(x_i, y) + k(y, y), diagonal included.
double mmd2_biased(const KernelSpec& spec, std::span<const Vec> refs, const Vec& test);

// Biased two-set V-statistic.
double mmd2_set(const KernelSpec& spec, std::span<const Vec> x, std::span<const Vec> y);

// sigma with 2 sigma^2 = median pairwise squared distance.
double median_heuristic(std::span<const Vec> x);

// Precomputed reference set for scoring many test points with mmd2_biased.
class MmdReference {
 public:
  MmdReference(KernelSpec spec, std::span<const Vec> refs);

  double statistic(const Vec& test) const;
  // Cross term J(y) = (2/n) sum_i k(x_i, y).
  double cross_term(const Vec& test) const;
  std::size_t size() const noexcept { return static_cast<std::size_t>(refs_.cols()); }

 private:
  Vec kernel_row(const Vec& test) const;

  KernelSpec spec_;
  Mat refs_;
  Mat ref_features_;
  double ref_mean_ = 0.0;
};

// Test-power criterion of a kernel on paired samples X, Y (|X| = |Y| = m >= 2):
//   H_ij = k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(y_i,x_j)
//   mmd2_u = sum_{i != j} H_ij / (m (m-1))
//   var    = 4 [ (1/m) sum_i ((1/m) sum_j H_ij)^2 - ((1/m^2) sum_ij H_ij)^2 ]
//   J      = mmd2_u / sqrt(var + 1e-8)
struct PowerCriterion {
  double value = 0.0;
  double mmd2_u = 0.0;
  double variance = 0.0;
};

inline constexpr double kPowerRegularizer = 1e-8;

PowerCriterion power_criterion(const KernelSpec& spec, std::span<const Vec> x, std::span<const Vec> y);

// Flattened trainable parameters:
//   gaussian: [log sigma]
//   deep:     [featurizer params..., eps0_logit, log_sigma_phi, log_sigma_q]
std::vector<double> kernel_params(const KernelSpec& spec);
void set_kernel_params(KernelSpec& spec, std::span<const double> params);

struct CriterionGrad {
  PowerCriterion criterion;
  std::vector<double> grad;  // dJ / d kernel_params
};

CriterionGrad power_criterion_grad(const KernelSpec& spec, std::span<const Vec> x,
                                   std::span<const Vec> y);

struct KernelTrainConfig {
  double learning_rate = 2e-3;
  int batch_size = 256;
  long iterations = 1000;
  std::uint64_t seed = 0;
  std::vector<int> hidden{64, 64};
  int feature_dim = 16;
  double eps0_init = 0.1;

  void validate() const;
};

void to_json(nlohmann::json& j, const KernelTrainConfig& c);
void from_json(const nlohmann::json& j, KernelTrainConfig& c);

// Deep kernel initialised from data: standardisation from the pooled
// training set, bandwidths from the median heuristic on raw inputs and on
// initial features.
DeepKernel init_deep_kernel(std::span<const Vec> nat, std::span<const Vec> adv,
                            const KernelTrainConfig& cfg);

struct KernelTrainResult {
  KernelSpec kernel;
  std::vector<double> criterion_trace;
};

// Gradient ascent (Adam) of the power criterion on paired mini-batches.
KernelTrainResult train_deep_kernel(std::span<const Vec> nat, std::span<const Vec> adv,
                                    const KernelTrainConfig& cfg);
// Continue from a given kernel.
KernelTrainResult train_kernel_from(KernelSpec init, std::span<const Vec> nat,
                                    std::span<const Vec> adv, const KernelTrainConfig& cfg);

}  // namespace epsad
