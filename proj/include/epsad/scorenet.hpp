#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "epsad/mlp.hpp"
#include "epsad/schedule.hpp"

namespace epsad {

// s_theta(x, t): MLP on [x ; time features], output in data space.
//
// Time features are sin/cos pairs of ln t at frequencies 2^k / 4,
// k = 0 .. time_embed/2 - 1 (ln t is floored at ln 1e-8). A log clock
// resolves timesteps that differ by orders of magnitude on one grid.
class ScoreNet {
 public:
  ScoreNet() = default;
  explicit ScoreNet(int dim, std::vector<int> hidden = {128, 128, 128}, int time_embed = 8,
                    Activation act = Activation::kSilu);
  ScoreNet(Mlp mlp, int time_embed);

  int dim() const { return mlp_.output_dim(); }
  int time_embed() const noexcept { return time_embed_; }
  const Mlp& mlp() const noexcept { return mlp_; }
  Mlp& mlp() noexcept { return mlp_; }

  // Random hidden layers, zero output layer (the net starts as s = 0).
  void init(Rng& rng);

  static Vec time_features(double t, int count);

  Vec forward(const Vec& x, double t) const;
  // x: d x B, one time per column.
  Mat forward_batch(const Mat& x, std::span<const double> t) const;
  Mat network_input(const Mat& x, std::span<const double> t) const;

 private:
  Mlp mlp_;
  int time_embed_ = 8;
};

void to_json(nlohmann::json& j, const ScoreNet& net);
void from_json(const nlohmann::json& j, ScoreNet& net);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 1024;
  long iterations = 5000;
  std::uint64_t seed = 0;
  // Weight lambda(t) of the matching loss; only "sigma2" (lambda = sigma_t^2) is supported.
  std::string weighting = "sigma2";
  bool cosine_decay = true;
  AdamConfig adam{};

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Plug-in form of the denoising objective for arbitrary score values:
//   loss = (1/B) sum_b || sigma_b s_b + z_b ||^2
// which is lambda(t) || s - (-z / sigma_t) ||^2 with lambda = sigma_t^2.
struct DsmTerms {
  double loss = 0.0;
  Mat d_score;  // dloss / d s, d x B
};

DsmTerms dsm_objective(const Mat& scores, const Mat& z, std::span<const double> sigma);

struct DsmResult {
  double loss = 0.0;
  std::vector<double> grad;  // dloss / dtheta
};

// Explicit draws: x0 and z are d x B, times has B entries, all with sigma_t > 0.
DsmResult dsm_loss_and_grad(const ScoreNet& net, const NoiseSchedule& sched, const Mat& x0,
                            std::span<const double> times, const Mat& z);

// Draws one grid timestep and one standard-normal noise vector per sample from rng.
DsmResult dsm_loss_and_grad(const ScoreNet& net, const NoiseSchedule& sched,
                            std::span<const Vec> batch, std::span<const double> timesteps, Rng& rng);

struct ScoreTrainResult {
  ScoreNet net;
  std::vector<double> loss_trace;
};

ScoreTrainResult train_score(ScoreNet net, std::span<const Vec> data, const NoiseSchedule& sched,
                             std::span<const double> timesteps, const TrainConfig& cfg);

}  // namespace epsad
