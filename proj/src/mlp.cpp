#include "epsad/mlp.hpp"

#include <cmath>
#include <numbers>

#include "epsad/errors.hpp"

namespace epsad {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSilu: return "silu";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "silu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::kSilu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace {

void activate(Activation a, const Mat& pre, Mat& out) {
  switch (a) {
    case Activation::kSilu:
      out = pre.array() / (1.0 + (-pre.array()).exp());
      break;
    case Activation::kTanh:
      out = pre.array().tanh();
      break;
    case Activation::kRelu:
      out = pre.array().max(0.0);
      break;
  }
}

// d(act)/d(pre), elementwise.
Mat activation_slope(Activation a, const Mat& pre) {
  switch (a) {
    case Activation::kSilu: {
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
      return s * (1.0 + pre.array() * (1.0 - s));
    }
    case Activation::kTanh: {
      const Eigen::ArrayXXd t = pre.array().tanh();
      return 1.0 - t * t;
    }
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>();
  }
  return Mat();
}

std::vector<std::size_t> layer_offsets(const std::vector<int>& widths) {
  std::vector<std::size_t> off;
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    off.push_back(pos);
    pos += static_cast<std::size_t>(widths[l + 1]) * (widths[l] + 1);
  }
  off.push_back(pos);
  return off;
}

}  // namespace

std::size_t Mlp::count_params(const std::vector<int>& widths) {
  return layer_offsets(widths).back();
}

Mlp::Mlp(std::vector<int> widths, Activation act) : widths_(std::move(widths)), act_(act) {
  if (widths_.size() < 2) throw InputError("Mlp needs at least input and output widths");
  for (int w : widths_)
    if (w <= 0) throw InputError("Mlp widths must be positive");
  offsets_ = layer_offsets(widths_);
  params_.assign(offsets_.back(), 0.0);
}

Mlp::Mlp(std::vector<int> widths, Activation act, std::vector<double> params)
    : Mlp(std::move(widths), act) {
  if (params.size() != params_.size())
    throw InputError("Mlp parameter count " + std::to_string(params.size()) +
                     " does not match widths (expected " + std::to_string(params_.size()) + ")");
  params_ = std::move(params);
}

Eigen::Map<const Mat> Mlp::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}

Eigen::Map<const Vec> Mlp::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l + 1]) * widths_[l],
          widths_[l + 1]};
}

void Mlp::init(Rng& rng, bool zero_output) {
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t nw = static_cast<std::size_t>(widths_[l + 1]) * widths_[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    const bool zero = zero_output && l + 1 == layers;
    for (std::size_t k = 0; k < nw; ++k) params_[offsets_[l] + k] = zero ? 0.0 : scale * rng.normal();
    for (int k = 0; k < widths_[l + 1]; ++k) params_[offsets_[l] + nw + k] = 0.0;
  }
}

Mat Mlp::forward(const Mat& x) const {
  if (x.rows() != input_dim()) throw InputError("Mlp::forward: input dimension mismatch");
  Mat h = x;
  const std::size_t layers = widths_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    Mat pre = weight(l) * h;
    pre.colwise() += bias(l);
    if (l + 1 < layers) activate(act_, pre, h);
    else h = std::move(pre);
  }
  return h;
}

Mat Mlp::forward(const Mat& x, Tape& tape) const {
  if (x.rows() != input_dim()) throw InputError("Mlp::forward: input dimension mismatch");
  const std::size_t layers = widths_.size() - 1;
  tape.inputs.resize(layers);
  tape.pre.resize(layers);
  Mat h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    tape.inputs[l] = h;
    tape.pre[l] = weight(l) * h;
    tape.pre[l].colwise() += bias(l);
    if (l + 1 < layers) activate(act_, tape.pre[l], h);
    else h = tape.pre[l];
  }
  return h;
}

Mat Mlp::backward(const Tape& tape, const Mat& d_out, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw InputError("Mlp::backward: gradient size mismatch");
  const std::size_t layers = widths_.size() - 1;
  Mat delta = d_out;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) delta = delta.cwiseProduct(activation_slope(act_, tape.pre[l]));
    Eigen::Map<Mat> gw(grad.data() + offsets_[l], widths_[l + 1], widths_[l]);
    Eigen::Map<Vec> gb(grad.data() + offsets_[l] + static_cast<std::size_t>(widths_[l + 1]) * widths_[l],
                       widths_[l + 1]);
    gw.noalias() += delta * tape.inputs[l].transpose();
    gb += delta.rowwise().sum();
    delta = weight(l).transpose() * delta;
  }
  return delta;
}

void to_json(nlohmann::json& j, const Mlp& m) {
  j = nlohmann::json{{"widths", m.widths()}, {"activation", to_string(m.activation())},
                     {"params", m.params()}};
}

void from_json(const nlohmann::json& j, Mlp& m) {
  m = Mlp(j.at("widths").get<std::vector<int>>(),
          activation_from_string(j.value("activation", std::string("silu"))),
          j.at("params").get<std::vector<double>>());
}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw InputError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.epsilon);
  }
}

double cosine_learning_rate(double base, long step, long total, bool decay) {
  if (!decay || total <= 0) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total));
}

}  // namespace epsad
