#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "epsad/mlp.hpp"

namespace epsad {

// Softmax classifier on an MLP (no hidden layers = multinomial logistic).
class ToyClassifier {
 public:
  ToyClassifier() = default;
  ToyClassifier(int dim, int classes, std::vector<int> hidden = {}, Activation act = Activation::kTanh);
  explicit ToyClassifier(Mlp net);

  int dim() const { return net_.input_dim(); }
  int classes() const { return net_.output_dim(); }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }

  Vec logits(const Vec& x) const;
  int predict(const Vec& x) const;
  // Cross-entropy of softmax(logits(x)) against label.
  double loss(const Vec& x, int label) const;

 private:
  Mlp net_;
};

void to_json(nlohmann::json& j, const ToyClassifier& c);
void from_json(const nlohmann::json& j, ToyClassifier& c);

struct LabeledData {
  std::vector<Vec> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return x.size(); }
};

struct ClassifierTrainConfig {
  std::vector<int> hidden{};
  double learning_rate = 1e-2;
  int batch_size = 256;
  long iterations = 2000;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ClassifierTrainConfig& c);
void from_json(const nlohmann::json& j, ClassifierTrainConfig& c);

ToyClassifier train_classifier(const LabeledData& data, const ClassifierTrainConfig& cfg);

double accuracy(const ToyClassifier& clf, const LabeledData& data);

// d loss / d x of the cross-entropy at (x, label).
Vec input_gradient(const ToyClassifier& clf, const Vec& x, int label);

enum class AttackMethod { kFgsm, kBim, kPgd, kMim };
enum class Norm { kLinf, kL2 };

std::string to_string(AttackMethod m);
std::string to_string(Norm n);
AttackMethod attack_method_from_string(const std::string& s);
Norm norm_from_string(const std::string& s);

// "k/255" or a decimal.
double parse_epsilon(const std::string& text);

struct AttackConfig {
  AttackMethod method = AttackMethod::kPgd;
  Norm norm = Norm::kLinf;
  double epsilon = 4.0 / 255.0;
  int steps = 5;
  std::optional<double> step_size;  // default epsilon / steps
  double momentum = 1.0;            // mim decay
  bool random_init = true;          // pgd only
  // Input-domain box, applied after every step when the data world declares one.
  std::optional<std::pair<double, double>> bounds;

  double effective_step() const;
  void validate() const;
  std::string name() const;  // e.g. "pgd-linf"
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

// Projection onto the eps-ball around x0: componentwise clamp (linf) or
// radial rescale (l2). Idempotent.
Vec project(const Vec& x_adv, const Vec& x0, Norm norm, double eps);

double distance(const Vec& a, const Vec& b, Norm norm);

// Untargeted gradient attack maximising the classifier loss inside the ball.
Vec attack(const ToyClassifier& clf, const Vec& x, int label, const AttackConfig& cfg, Rng& rng);

}  // namespace epsad
