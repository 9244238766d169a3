#include "epsad/scorenet.hpp"

#include <cmath>

#include "epsad/errors.hpp"

namespace epsad {

namespace {

std::vector<int> score_widths(int dim, const std::vector<int>& hidden, int time_embed) {
  std::vector<int> w{dim + time_embed};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(dim);
  return w;
}

}  // namespace

ScoreNet::ScoreNet(int dim, std::vector<int> hidden, int time_embed, Activation act)
    : ScoreNet(Mlp(score_widths(dim, hidden, time_embed), act), time_embed) {}

ScoreNet::ScoreNet(Mlp mlp, int time_embed) : mlp_(std::move(mlp)), time_embed_(time_embed) {
  if (time_embed < 0 || time_embed % 2 != 0)
    throw InputError("ScoreNet: time embedding width must be even and non-negative");
  if (mlp_.input_dim() != mlp_.output_dim() + time_embed)
    throw InputError("ScoreNet: input width must equal output width plus time embedding");
}

void ScoreNet::init(Rng& rng) { mlp_.init(rng, /*zero_output=*/true); }

Vec ScoreNet::time_features(double t, int count) {
  Vec f(count);
  const double u = std::log(std::max(t, 1e-8));
  for (int k = 0; k < count / 2; ++k) {
    const double w = std::ldexp(1.0, k) / 4.0;
    f[2 * k] = std::sin(w * u);
    f[2 * k + 1] = std::cos(w * u);
  }
  return f;
}

Mat ScoreNet::network_input(const Mat& x, std::span<const double> t) const {
  if (x.rows() != dim()) throw InputError("ScoreNet: input dimension mismatch");
  if (static_cast<std::size_t>(x.cols()) != t.size())
    throw InputError("ScoreNet: one time per column required");
  if (!x.allFinite()) throw InputError("ScoreNet: non-finite input");
  Mat in(dim() + time_embed_, x.cols());
  in.topRows(dim()) = x;
  for (Eigen::Index b = 0; b < x.cols(); ++b)
    in.col(b).tail(time_embed_) = time_features(t[b], time_embed_);
  return in;
}

Mat ScoreNet::forward_batch(const Mat& x, std::span<const double> t) const {
  return mlp_.forward(network_input(x, t));
}

Vec ScoreNet::forward(const Vec& x, double t) const {
  return forward_batch(x, std::span<const double>(&t, 1)).col(0);
}

void to_json(nlohmann::json& j, const ScoreNet& net) {
  j = nlohmann::json{{"widths", net.mlp().widths()},
                     {"time_embed", net.time_embed()},
                     {"activation", to_string(net.mlp().activation())},
                     {"params", net.mlp().params()}};
}

void from_json(const nlohmann::json& j, ScoreNet& net) {
  Mlp mlp(j.at("widths").get<std::vector<int>>(),
          activation_from_string(j.value("activation", std::string("silu"))),
          j.at("params").get<std::vector<double>>());
  net = ScoreNet(std::move(mlp), j.at("time_embed").get<int>());
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (iterations < 0) throw ConfigError("iteration count must be >= 0");
  if (weighting != "sigma2") throw ConfigError("unsupported loss weighting '" + weighting + "'");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"iterations", c.iterations},       {"seed", c.seed},
                     {"weighting", c.weighting},         {"cosine_decay", c.cosine_decay}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.iterations = j.value("iterations", d.iterations);
  c.seed = j.value("seed", d.seed);
  c.weighting = j.value("weighting", d.weighting);
  c.cosine_decay = j.value("cosine_decay", d.cosine_decay);
  c.validate();
}

DsmTerms dsm_objective(const Mat& scores, const Mat& z, std::span<const double> sigma) {
  const Eigen::Index batch = scores.cols();
  if (z.rows() != scores.rows() || z.cols() != batch || static_cast<std::size_t>(batch) != sigma.size())
    throw InputError("dsm_objective: shape mismatch");
  if (batch == 0) throw InputError("dsm_objective: empty batch");
  DsmTerms out;
  out.d_score.resize(scores.rows(), batch);
  double acc = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Vec r = sigma[b] * scores.col(b) + z.col(b);
    acc += r.squaredNorm();
    out.d_score.col(b) = (2.0 * sigma[b] / static_cast<double>(batch)) * r;
  }
  out.loss = acc / static_cast<double>(batch);
  return out;
}

DsmResult dsm_loss_and_grad(const ScoreNet& net, const NoiseSchedule& sched, const Mat& x0,
                            std::span<const double> times, const Mat& z) {
  const Eigen::Index batch = x0.cols();
  if (batch == 0) throw InputError("dsm_loss_and_grad: empty batch");
  if (static_cast<std::size_t>(batch) != times.size() || z.rows() != x0.rows() || z.cols() != batch)
    throw InputError("dsm_loss_and_grad: shape mismatch");
  std::vector<double> sigma(times.size());
  Mat xt(x0.rows(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    sigma[b] = sched.sigma(times[b]);
    if (!(sigma[b] > 0.0))
      throw ConfigError("denoising target is singular at t = " + std::to_string(times[b]) +
                        " (sigma_t = 0)");
    xt.col(b) = sched.gamma(times[b]) * x0.col(b) + sigma[b] * z.col(b);
  }
  Mlp::Tape tape;
  const Mat scores = net.mlp().forward(net.network_input(xt, times), tape);
  const DsmTerms terms = dsm_objective(scores, z, sigma);
  DsmResult out{terms.loss, std::vector<double>(net.mlp().param_count(), 0.0)};
  net.mlp().backward(tape, terms.d_score, out.grad);
  return out;
}

DsmResult dsm_loss_and_grad(const ScoreNet& net, const NoiseSchedule& sched,
                            std::span<const Vec> batch, std::span<const double> timesteps, Rng& rng) {
  if (batch.empty()) throw InputError("dsm_loss_and_grad: empty batch");
  if (timesteps.empty()) throw ConfigError("dsm_loss_and_grad: empty timestep grid");
  for (double t : timesteps)
    if (!(sched.sigma2(t) > 0.0))
      throw ConfigError("timestep grid contains t = " + std::to_string(t) + " with sigma_t = 0");
  const Eigen::Index d = net.dim();
  const auto n = static_cast<Eigen::Index>(batch.size());
  Mat x0(d, n), z(d, n);
  std::vector<double> times(batch.size());
  for (Eigen::Index b = 0; b < n; ++b) {
    if (batch[b].size() != d) throw InputError("dsm_loss_and_grad: dimension mismatch");
    x0.col(b) = batch[b];
    times[b] = timesteps[rng.index(timesteps.size())];
    for (Eigen::Index k = 0; k < d; ++k) z(k, b) = rng.normal();
  }
  return dsm_loss_and_grad(net, sched, x0, times, z);
}

ScoreTrainResult train_score(ScoreNet net, std::span<const Vec> data, const NoiseSchedule& sched,
                             std::span<const double> timesteps, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InputError("train_score: empty data");
  if (timesteps.empty()) throw ConfigError("train_score: empty timestep grid");
  ScoreTrainResult result{std::move(net), {}};
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
  Rng rng(cfg.seed);
  AdamConfig adam_cfg = cfg.adam;
  adam_cfg.learning_rate = cfg.learning_rate;
  Adam adam(result.net.mlp().param_count(), adam_cfg);
  std::vector<Vec> batch(static_cast<std::size_t>(cfg.batch_size));
  for (long it = 0; it < cfg.iterations; ++it) {
    for (auto& x : batch) x = data[rng.index(data.size())];
    const DsmResult r = dsm_loss_and_grad(result.net, sched, batch, timesteps, rng);
    if (!std::isfinite(r.loss)) throw TrainingError("score training diverged", it);
    result.loss_trace.push_back(r.loss);
    adam.step(result.net.mlp().params(), r.grad,
              cosine_learning_rate(cfg.learning_rate, it, cfg.iterations, cfg.cosine_decay));
  }
  return result;
}

}  // namespace epsad
