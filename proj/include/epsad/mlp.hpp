#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epsad/rng.hpp"

namespace epsad {

enum class Activation { kSilu, kTanh, kRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Fully connected network on column batches (one sample per column) with
// layer-level reverse-mode differentiation. Hidden layers apply the
// activation; the output layer is affine.
//
// Parameters live in one flat array. Layer l (in = widths[l], out =
// widths[l+1]) stores its out x in weight matrix column-major, followed by
// its out-vector bias.
class Mlp {
 public:
  struct Tape {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(std::vector<int> widths, Activation act = Activation::kSilu);
  Mlp(std::vector<int> widths, Activation act, std::vector<double> params);

  static std::size_t count_params(const std::vector<int>& widths);

  const std::vector<int>& widths() const noexcept { return widths_; }
  Activation activation() const noexcept { return act_; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  std::size_t param_count() const noexcept { return params_.size(); }

  std::vector<double>& params() noexcept { return params_; }
  const std::vector<double>& params() const noexcept { return params_; }

  // Normal init with variance 1/fan_in; zero biases. zero_output clears the
  // last layer so the network starts as the zero map.
  void init(Rng& rng, bool zero_output = false);

  Mat forward(const Mat& x) const;
  Mat forward(const Mat& x, Tape& tape) const;

  // Given dL/d(output), accumulates dL/d(params) into grad and returns dL/d(input).
  Mat backward(const Tape& tape, const Mat& d_out, std::span<double> grad) const;

 private:
  Eigen::Map<const Mat> weight(std::size_t layer) const;
  Eigen::Map<const Vec> bias(std::size_t layer) const;

  std::vector<int> widths_;
  Activation act_ = Activation::kSilu;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

void to_json(nlohmann::json& j, const Mlp& m);
void from_json(const nlohmann::json& j, Mlp& m);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive moment estimation, descending on the supplied gradient.
class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double learning_rate);
  void step(std::span<double> params, std::span<const double> grad) {
    step(params, grad, cfg_.learning_rate);
  }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

// Cosine decay from base to 0 over total steps; constant when decay is off.
double cosine_learning_rate(double base, long step, long total, bool decay);

}  // namespace epsad
