#include "epsad/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "epsad/errors.hpp"

namespace epsad {

ToyClassifier::ToyClassifier(int dim, int classes, std::vector<int> hidden, Activation act) {
  if (classes < 2) throw InputError("classifier needs at least two classes");
  std::vector<int> w{dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(classes);
  net_ = Mlp(w, act);
}

ToyClassifier::ToyClassifier(Mlp net) : net_(std::move(net)) {
  if (net_.output_dim() < 2) throw InputError("classifier needs at least two classes");
}

Vec ToyClassifier::logits(const Vec& x) const { return net_.forward(x).col(0); }

int ToyClassifier::predict(const Vec& x) const {
  Eigen::Index best = 0;
  logits(x).maxCoeff(&best);
  return static_cast<int>(best);
}

namespace {

// Softmax probabilities with the usual max shift.
Vec softmax(const Vec& z) {
  const Vec e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

void check_label(const ToyClassifier& clf, int label) {
  if (label < 0 || label >= clf.classes())
    throw InputError("label " + std::to_string(label) + " outside [0, " + std::to_string(clf.classes()) + ")");
}

}  // namespace

double ToyClassifier::loss(const Vec& x, int label) const {
  check_label(*this, label);
  const Vec z = logits(x);
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum()) - z[label];
}

void to_json(nlohmann::json& j, const ToyClassifier& c) { j = nlohmann::json{{"net", c.net()}}; }

void from_json(const nlohmann::json& j, ToyClassifier& c) { c = ToyClassifier(j.at("net").get<Mlp>()); }

void to_json(nlohmann::json& j, const ClassifierTrainConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},         {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size}, {"iterations", c.iterations},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ClassifierTrainConfig& c) {
  const ClassifierTrainConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.iterations = j.value("iterations", d.iterations);
  c.seed = j.value("seed", d.seed);
}

ToyClassifier train_classifier(const LabeledData& data, const ClassifierTrainConfig& cfg) {
  if (data.x.empty() || data.x.size() != data.y.size()) throw InputError("classifier: malformed data");
  const std::set<int> labels(data.y.begin(), data.y.end());
  if (labels.size() < 2) throw InputError("classifier: data must contain at least two classes");
  if (*labels.begin() < 0) throw InputError("classifier: negative label");
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) throw ConfigError("classifier: invalid training config");
  const int classes = *labels.rbegin() + 1;
  const int dim = static_cast<int>(data.x.front().size());

  ToyClassifier clf(dim, classes, cfg.hidden);
  Rng rng(cfg.seed);
  clf.net().init(rng);
  Adam adam(clf.net().param_count(), AdamConfig{cfg.learning_rate});
  const auto b = static_cast<Eigen::Index>(cfg.batch_size);
  Mat x(dim, b);
  std::vector<int> y(static_cast<std::size_t>(b));
  std::vector<double> grad(clf.net().param_count());
  for (long it = 0; it < cfg.iterations; ++it) {
    for (Eigen::Index k = 0; k < b; ++k) {
      const std::size_t i = rng.index(data.size());
      x.col(k) = data.x[i];
      y[k] = data.y[i];
    }
    Mlp::Tape tape;
    const Mat z = clf.net().forward(x, tape);
    Mat dz(classes, b);
    double loss = 0.0;
    for (Eigen::Index k = 0; k < b; ++k) {
      const Vec p = softmax(z.col(k));
      loss -= std::log(std::max(p[y[k]], 1e-300));
      dz.col(k) = p;
      dz(y[k], k) -= 1.0;
    }
    if (!std::isfinite(loss)) throw TrainingError("classifier training diverged", it);
    dz /= static_cast<double>(b);
    std::fill(grad.begin(), grad.end(), 0.0);
    clf.net().backward(tape, dz, grad);
    adam.step(clf.net().params(), grad);
  }
  return clf;
}

double accuracy(const ToyClassifier& clf, const LabeledData& data) {
  if (data.x.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += clf.predict(data.x[i]) == data.y[i];
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

Vec input_gradient(const ToyClassifier& clf, const Vec& x, int label) {
  check_label(clf, label);
  if (x.size() != clf.dim()) throw InputError("input_gradient: dimension mismatch");
  Mlp::Tape tape;
  const Mat z = clf.net().forward(x, tape);
  Vec dz = softmax(z.col(0));
  dz[label] -= 1.0;
  std::vector<double> scratch(clf.net().param_count(), 0.0);
  return clf.net().backward(tape, dz, scratch).col(0);
}

std::string to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::kFgsm: return "fgsm";
    case AttackMethod::kBim: return "bim";
    case AttackMethod::kPgd: return "pgd";
    case AttackMethod::kMim: return "mim";
  }
  return "pgd";
}

std::string to_string(Norm n) { return n == Norm::kLinf ? "linf" : "l2"; }

AttackMethod attack_method_from_string(const std::string& s) {
  if (s == "fgsm") return AttackMethod::kFgsm;
  if (s == "bim") return AttackMethod::kBim;
  if (s == "pgd") return AttackMethod::kPgd;
  if (s == "mim") return AttackMethod::kMim;
  throw ConfigError("unknown attack method '" + s + "'");
}

Norm norm_from_string(const std::string& s) {
  if (s == "linf") return Norm::kLinf;
  if (s == "l2") return Norm::kL2;
  throw ConfigError("unknown norm '" + s + "'");
}

double parse_epsilon(const std::string& text) {
  std::size_t used = 0;
  try {
    const auto slash = text.find('/');
    if (slash != std::string::npos) {
      const double num = std::stod(text.substr(0, slash), &used);
      if (used != slash) throw ConfigError("bad epsilon '" + text + "'");
      const std::string den_text = text.substr(slash + 1);
      const double den = std::stod(den_text, &used);
      if (used != den_text.size() || !(den > 0.0)) throw ConfigError("bad epsilon '" + text + "'");
      return num / den;
    }
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError("bad epsilon '" + text + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad epsilon '" + text + "'");
  }
}

double AttackConfig::effective_step() const {
  return step_size ? *step_size : epsilon / static_cast<double>(steps);
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (step_size && !(*step_size > 0.0)) throw ConfigError("attack step size must be > 0");
  if (bounds && !(bounds->first < bounds->second)) throw ConfigError("attack bounds must satisfy lo < hi");
}

std::string AttackConfig::name() const { return to_string(method) + "-" + to_string(norm); }

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = nlohmann::json{{"method", to_string(c.method)}, {"norm", to_string(c.norm)},
                     {"epsilon", c.epsilon},           {"steps", c.steps},
                     {"step_size", c.effective_step()}, {"momentum", c.momentum},
                     {"random_init", c.random_init}};
  if (c.bounds) j["bounds"] = {c.bounds->first, c.bounds->second};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  c = AttackConfig{};
  c.method = attack_method_from_string(j.value("method", std::string("pgd")));
  c.norm = norm_from_string(j.value("norm", std::string("linf")));
  if (j.contains("epsilon")) {
    const auto& e = j.at("epsilon");
    c.epsilon = e.is_string() ? parse_epsilon(e.get<std::string>()) : e.get<double>();
  }
  c.steps = j.value("steps", c.steps);
  if (j.contains("step_size")) c.step_size = j.at("step_size").get<double>();
  c.momentum = j.value("momentum", c.momentum);
  c.random_init = j.value("random_init", c.random_init);
  if (j.contains("bounds")) {
    const auto b = j.at("bounds").get<std::vector<double>>();
    if (b.size() != 2) throw ConfigError("attack bounds must be [lo, hi]");
    c.bounds = std::make_pair(b[0], b[1]);
  }
  c.validate();
}

Vec project(const Vec& x_adv, const Vec& x0, Norm norm, double eps) {
  if (x_adv.size() != x0.size()) throw InputError("project: dimension mismatch");
  if (norm == Norm::kLinf) {
    Vec out(x_adv.size());
    for (Eigen::Index i = 0; i < x_adv.size(); ++i)
      out[i] = std::clamp(x_adv[i], x0[i] - eps, x0[i] + eps);
    return out;
  }
  const Vec delta = x_adv - x0;
  const double n = delta.norm();
  // The relative slack keeps a second projection from rescaling a point that
  // the first one already put on the sphere (rounding in n).
  if (n <= eps * (1.0 + 1e-12)) return x_adv;
  return x0 + delta * (eps / n);
}

double distance(const Vec& a, const Vec& b, Norm norm) {
  return norm == Norm::kLinf ? (a - b).lpNorm<Eigen::Infinity>() : (a - b).norm();
}

namespace {

Vec step_direction(const Vec& g, Norm norm) {
  if (norm == Norm::kLinf) return g.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
  const double n = g.norm();
  return n > 0.0 ? Vec(g / n) : Vec(Vec::Zero(g.size()));
}

Vec apply_bounds(Vec x, const AttackConfig& cfg) {
  if (cfg.bounds) x = x.cwiseMax(cfg.bounds->first).cwiseMin(cfg.bounds->second);
  return x;
}

Vec random_start(const Vec& x, const AttackConfig& cfg, Rng& rng) {
  Vec delta(x.size());
  if (cfg.norm == Norm::kLinf) {
    for (Eigen::Index i = 0; i < x.size(); ++i) delta[i] = rng.uniform(-cfg.epsilon, cfg.epsilon);
  } else {
    const Vec dir = rng.normal_vector(x.size());
    const double radius = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size()));
    const double n = dir.norm();
    delta = n > 0.0 ? Vec(dir * (radius / n)) : Vec(Vec::Zero(x.size()));
  }
  return apply_bounds(project(x + delta, x, cfg.norm, cfg.epsilon), cfg);
}

}  // namespace

Vec attack(const ToyClassifier& clf, const Vec& x, int label, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  if (x.size() != clf.dim()) throw InputError("attack: dimension mismatch");
  if (cfg.epsilon == 0.0) return x;

  if (cfg.method == AttackMethod::kFgsm) {
    const Vec step = cfg.epsilon * step_direction(input_gradient(clf, x, label), cfg.norm);
    return apply_bounds(project(x + step, x, cfg.norm, cfg.epsilon), cfg);
  }

  const double alpha = cfg.effective_step();
  Vec adv = (cfg.method == AttackMethod::kPgd && cfg.random_init) ? random_start(x, cfg, rng) : x;
  Vec momentum = Vec::Zero(x.size());
  for (int s = 0; s < cfg.steps; ++s) {
    Vec g = input_gradient(clf, adv, label);
    if (cfg.method == AttackMethod::kMim) {
      const double l1 = g.lpNorm<1>();
      momentum = cfg.momentum * momentum + (l1 > 0.0 ? Vec(g / l1) : Vec(g));
      g = momentum;
    }
    adv = apply_bounds(project(adv + alpha * step_direction(g, cfg.norm), x, cfg.norm, cfg.epsilon), cfg);
  }
  return adv;
}

}  // namespace epsad
