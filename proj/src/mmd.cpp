#include "epsad/mmd.hpp"

#include <algorithm>
#include <cmath>

#include "epsad/errors.hpp"

namespace epsad {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Pairwise squared distances between columns, computed by explicit differences
// so that identical columns give exactly zero.
Mat sq_dist(const Mat& a, const Mat& b) {
  Mat d(a.cols(), b.cols());
  for (Eigen::Index j = 0; j < b.cols(); ++j)
    for (Eigen::Index i = 0; i < a.cols(); ++i) d(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  return d;
}

Mat gaussian_of(const Mat& d2, double sigma) { return (-d2.array() / (2.0 * sigma * sigma)).exp(); }

Mat deep_combine(const DeepKernel& k, const Mat& dphi, const Mat& dq) {
  const double e = k.eps0();
  return ((1.0 - e) * gaussian_of(dphi, k.sigma_phi()).array() + e) *
         gaussian_of(dq, k.sigma_q()).array();
}

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

double DeepKernel::eps0() const { return logistic(eps0_logit); }
double DeepKernel::sigma_phi() const { return std::exp(log_sigma_phi); }
double DeepKernel::sigma_q() const { return std::exp(log_sigma_q); }

Mat DeepKernel::standardize(const Mat& x) const {
  if (x.rows() != input_shift.size()) throw InputError("deep kernel: input dimension mismatch");
  return (x.colwise() - input_shift).array().colwise() / input_scale.array();
}

Mat DeepKernel::features(const Mat& x) const { return featurizer.forward(standardize(x)); }

void to_json(nlohmann::json& j, const KernelSpec& k) {
  if (const auto* g = std::get_if<GaussianKernel>(&k)) {
    j = nlohmann::json{{"variant", "gaussian"}, {"sigma", g->sigma}};
    return;
  }
  const auto& d = std::get<DeepKernel>(k);
  j = nlohmann::json{{"variant", "deep"},
                     {"eps0", d.eps0()},
                     {"sigma_phi", d.sigma_phi()},
                     {"sigma_q", d.sigma_q()},
                     {"eps0_logit", d.eps0_logit},
                     {"log_sigma_phi", d.log_sigma_phi},
                     {"log_sigma_q", d.log_sigma_q},
                     {"input_shift", to_std(d.input_shift)},
                     {"input_scale", to_std(d.input_scale)},
                     {"featurizer", d.featurizer}};
}

void from_json(const nlohmann::json& j, KernelSpec& k) {
  const auto variant = j.at("variant").get<std::string>();
  if (variant == "gaussian") {
    const double s = j.at("sigma").get<double>();
    if (!(s > 0.0)) throw InputError("gaussian kernel bandwidth must be > 0");
    k = GaussianKernel{s};
    return;
  }
  if (variant != "deep") throw InputError("unknown kernel variant '" + variant + "'");
  DeepKernel d;
  d.featurizer = j.at("featurizer").get<Mlp>();
  d.input_shift = to_vec(j.at("input_shift").get<std::vector<double>>());
  d.input_scale = to_vec(j.at("input_scale").get<std::vector<double>>());
  d.eps0_logit = j.at("eps0_logit").get<double>();
  d.log_sigma_phi = j.at("log_sigma_phi").get<double>();
  d.log_sigma_q = j.at("log_sigma_q").get<double>();
  if (d.input_shift.size() != d.featurizer.input_dim() || d.input_scale.size() != d.input_shift.size())
    throw InputError("deep kernel: standardisation does not match featurizer input");
  k = std::move(d);
}

Mat to_columns(std::span<const Vec> xs) {
  if (xs.empty()) return Mat();
  Mat m(xs.front().size(), static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != m.rows()) throw InputError("sample dimension mismatch");
    m.col(static_cast<Eigen::Index>(i)) = xs[i];
  }
  return m;
}

Mat gram(const KernelSpec& spec, const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) throw InputError("kernel: dimension mismatch");
  const Mat dq = sq_dist(a, b);
  if (const auto* g = std::get_if<GaussianKernel>(&spec)) return gaussian_of(dq, g->sigma);
  const auto& d = std::get<DeepKernel>(spec);
  return deep_combine(d, sq_dist(d.features(a), d.features(b)), dq);
}

double kernel_eval(const KernelSpec& spec, const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw InputError("kernel: dimension mismatch");
  return gram(spec, a, b)(0, 0);
}

double mmd2_biased(const KernelSpec& spec, std::span<const Vec> refs, const Vec& test) {
  if (refs.empty()) throw InputError("mmd2_biased: empty reference set");
  const Mat r = to_columns(refs);
  const auto n = static_cast<double>(refs.size());
  return gram(spec, r, r).sum() / (n * n) - 2.0 * gram(spec, r, test).sum() / n +
         gram(spec, test, test)(0, 0);
}

double mmd2_set(const KernelSpec& spec, std::span<const Vec> x, std::span<const Vec> y) {
  if (x.empty() || y.empty()) throw InputError("mmd2_set: empty sample set");
  const Mat a = to_columns(x), b = to_columns(y);
  const auto n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  return gram(spec, a, a).sum() / (n * n) + gram(spec, b, b).sum() / (m * m) -
         2.0 * gram(spec, a, b).sum() / (n * m);
}

double median_heuristic(std::span<const Vec> x) {
  if (x.size() < 2) throw InputError("median_heuristic needs at least two points");
  std::vector<double> d2;
  d2.reserve(x.size() * (x.size() - 1) / 2);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) d2.push_back((x[i] - x[j]).squaredNorm());
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid), d2.end());
  double med = d2[mid];
  if (d2.size() % 2 == 0) {
    const double lower = *std::max_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  if (!(med > 0.0)) throw InputError("median_heuristic: median pairwise distance is zero");
  return std::sqrt(0.5 * med);
}

MmdReference::MmdReference(KernelSpec spec, std::span<const Vec> refs)
    : spec_(std::move(spec)), refs_(to_columns(refs)) {
  if (refs.empty()) throw InputError("MmdReference: empty reference set");
  if (const auto* d = std::get_if<DeepKernel>(&spec_)) ref_features_ = d->features(refs_);
  const auto n = static_cast<double>(refs.size());
  ref_mean_ = gram(spec_, refs_, refs_).sum() / (n * n);
}

Vec MmdReference::kernel_row(const Vec& test) const {
  if (test.size() != refs_.rows()) throw InputError("MmdReference: dimension mismatch");
  Vec dq(refs_.cols());
  for (Eigen::Index i = 0; i < refs_.cols(); ++i) dq[i] = (refs_.col(i) - test).squaredNorm();
  if (const auto* g = std::get_if<GaussianKernel>(&spec_)) return gaussian_of(dq, g->sigma);
  const auto& d = std::get<DeepKernel>(spec_);
  const Vec f = d.features(test);
  Vec dphi(refs_.cols());
  for (Eigen::Index i = 0; i < refs_.cols(); ++i) dphi[i] = (ref_features_.col(i) - f).squaredNorm();
  return deep_combine(d, dphi, dq);
}

double MmdReference::cross_term(const Vec& test) const {
  return 2.0 * kernel_row(test).sum() / static_cast<double>(refs_.cols());
}

double MmdReference::statistic(const Vec& test) const {
  return ref_mean_ - cross_term(test) + gram(spec_, test, test)(0, 0);
}

namespace {

struct HStats {
  PowerCriterion crit;
  Mat d_h;  // dJ / dH
};

// Criterion and its derivative w.r.t. H from the joint kernel matrix of [X, Y].
HStats criterion_from_gram(const Mat& k, Eigen::Index m) {
  const Mat kxx = k.topLeftCorner(m, m);
  const Mat kyy = k.bottomRightCorner(m, m);
  const Mat kxy = k.topRightCorner(m, m);
  const Mat h = kxx + kyy - kxy - kxy.transpose();
  const double md = static_cast<double>(m);
  const double mmd2 = (h.sum() - h.trace()) / (md * (md - 1.0));
  const Vec r = h.rowwise().sum() / md;
  const double v1 = r.squaredNorm() / md;
  const double v2 = h.sum() / (md * md);
  const double var = 4.0 * (v1 - v2 * v2);
  const double s = std::sqrt(var + kPowerRegularizer);
  HStats out;
  out.crit = {mmd2 / s, mmd2, var};
  // dJ/dH_ij = dM/dH_ij / s - M / (2 s^3) dV/dH_ij
  //   dM/dH_ij = (1 - delta_ij) / (m (m-1)),  dV/dH_ij = 8 (r_i - v2) / m^2
  Mat dm = Mat::Constant(m, m, 1.0 / (md * (md - 1.0)));
  dm.diagonal().setZero();
  Mat dv = (8.0 / (md * md)) * (r.array() - v2).matrix().replicate(1, m);
  out.d_h = dm / s - (mmd2 / (2.0 * s * s * s)) * dv;
  return out;
}

// dJ/dK for the joint (2m x 2m) kernel matrix, one entry per ordered pair.
Mat gram_gradient(const Mat& d_h, Eigen::Index m) {
  Mat g = Mat::Zero(2 * m, 2 * m);
  g.topLeftCorner(m, m) = d_h;
  g.bottomRightCorner(m, m) = d_h;
  g.topRightCorner(m, m) = -d_h - d_h.transpose();
  return g;
}

void check_pairs(std::span<const Vec> x, std::span<const Vec> y) {
  if (x.size() != y.size()) throw InputError("power criterion needs |X| = |Y|");
  if (x.size() < 2) throw InputError("power criterion needs at least two pairs");
}

}  // namespace

PowerCriterion power_criterion(const KernelSpec& spec, std::span<const Vec> x, std::span<const Vec> y) {
  check_pairs(x, y);
  const auto m = static_cast<Eigen::Index>(x.size());
  Mat z(x.front().size(), 2 * m);
  z.leftCols(m) = to_columns(x);
  z.rightCols(m) = to_columns(y);
  return criterion_from_gram(gram(spec, z, z), m).crit;
}

std::vector<double> kernel_params(const KernelSpec& spec) {
  if (const auto* g = std::get_if<GaussianKernel>(&spec)) return {std::log(g->sigma)};
  const auto& d = std::get<DeepKernel>(spec);
  std::vector<double> p = d.featurizer.params();
  p.push_back(d.eps0_logit);
  p.push_back(d.log_sigma_phi);
  p.push_back(d.log_sigma_q);
  return p;
}

void set_kernel_params(KernelSpec& spec, std::span<const double> p) {
  if (auto* g = std::get_if<GaussianKernel>(&spec)) {
    if (p.size() != 1) throw InputError("gaussian kernel has one parameter");
    g->sigma = std::exp(p[0]);
    return;
  }
  auto& d = std::get<DeepKernel>(spec);
  const std::size_t nf = d.featurizer.param_count();
  if (p.size() != nf + 3) throw InputError("deep kernel parameter count mismatch");
  std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(nf), d.featurizer.params().begin());
  d.eps0_logit = p[nf];
  d.log_sigma_phi = p[nf + 1];
  d.log_sigma_q = p[nf + 2];
}

CriterionGrad power_criterion_grad(const KernelSpec& spec, std::span<const Vec> x,
                                   std::span<const Vec> y) {
  check_pairs(x, y);
  const auto m = static_cast<Eigen::Index>(x.size());
  Mat z(x.front().size(), 2 * m);
  z.leftCols(m) = to_columns(x);
  z.rightCols(m) = to_columns(y);
  const Mat dq = sq_dist(z, z);

  if (const auto* g = std::get_if<GaussianKernel>(&spec)) {
    const Mat k = gaussian_of(dq, g->sigma);
    const HStats hs = criterion_from_gram(k, m);
    const Mat gk = gram_gradient(hs.d_h, m);
    const double dlog = (gk.array() * k.array() * dq.array()).sum() / (g->sigma * g->sigma);
    return {hs.crit, {dlog}};
  }

  const auto& d = std::get<DeepKernel>(spec);
  Mlp::Tape tape;
  const Mat f = d.featurizer.forward(d.standardize(z), tape);
  const Mat dphi = sq_dist(f, f);
  const double e = d.eps0();
  const double sphi2 = d.sigma_phi() * d.sigma_phi();
  const double sq2 = d.sigma_q() * d.sigma_q();
  const Mat kappa = gaussian_of(dphi, d.sigma_phi());
  const Mat q = gaussian_of(dq, d.sigma_q());
  const Mat k = (((1.0 - e) * kappa.array() + e) * q.array()).matrix();
  const HStats hs = criterion_from_gram(k, m);
  const Mat gk = gram_gradient(hs.d_h, m);

  CriterionGrad out{hs.crit, std::vector<double>(d.featurizer.param_count() + 3, 0.0)};
  const std::size_t nf = d.featurizer.param_count();
  out.grad[nf] = (gk.array() * (1.0 - kappa.array()) * q.array()).sum() * e * (1.0 - e);
  out.grad[nf + 1] = (gk.array() * (1.0 - e) * q.array() * kappa.array() * dphi.array()).sum() / sphi2;
  out.grad[nf + 2] = (gk.array() * k.array() * dq.array()).sum() / sq2;

  // dK_ab/dF_a = -(1-e) q_ab kappa_ab (F_a - F_b) / sigma_phi^2
  const Mat w = ((gk + gk.transpose()).array() * (1.0 - e) * q.array() * kappa.array()).matrix() / sphi2;
  const Mat d_f = f * w - f * w.rowwise().sum().asDiagonal();
  d.featurizer.backward(tape, d_f, std::span<double>(out.grad.data(), nf));
  return out;
}

void KernelTrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("kernel learning rate must be > 0");
  if (batch_size < 2) throw ConfigError("kernel batch size must be >= 2");
  if (iterations < 0) throw ConfigError("kernel iteration count must be >= 0");
  if (feature_dim < 1) throw ConfigError("featurizer output width must be >= 1");
  if (!(eps0_init > 0.0 && eps0_init < 1.0)) throw ConfigError("eps0 must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const KernelTrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"iterations", c.iterations},       {"seed", c.seed},
                     {"hidden", c.hidden},               {"feature_dim", c.feature_dim},
                     {"eps0_init", c.eps0_init}};
}

void from_json(const nlohmann::json& j, KernelTrainConfig& c) {
  const KernelTrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.iterations = j.value("iterations", d.iterations);
  c.seed = j.value("seed", d.seed);
  c.hidden = j.value("hidden", d.hidden);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.eps0_init = j.value("eps0_init", d.eps0_init);
  c.validate();
}

namespace {

// At most `cap` evenly strided points, for bandwidth initialisation.
std::vector<Vec> subsample(std::span<const Vec> a, std::span<const Vec> b, std::size_t cap) {
  std::vector<Vec> out;
  const std::size_t total = a.size() + b.size();
  const std::size_t stride = std::max<std::size_t>(1, total / cap);
  for (std::size_t i = 0; i < total; i += stride) out.push_back(i < a.size() ? a[i] : b[i - a.size()]);
  return out;
}

}  // namespace

DeepKernel init_deep_kernel(std::span<const Vec> nat, std::span<const Vec> adv,
                            const KernelTrainConfig& cfg) {
  cfg.validate();
  if (nat.empty() || adv.empty()) throw InputError("kernel training needs natural and adversarial sets");
  const Eigen::Index dim = nat.front().size();
  Mat pooled(dim, static_cast<Eigen::Index>(nat.size() + adv.size()));
  pooled.leftCols(static_cast<Eigen::Index>(nat.size())) = to_columns(nat);
  pooled.rightCols(static_cast<Eigen::Index>(adv.size())) = to_columns(adv);

  DeepKernel k;
  k.input_shift = pooled.rowwise().mean();
  const Mat centered = pooled.colwise() - k.input_shift;
  k.input_scale = (centered.array().square().rowwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < dim; ++i)
    if (!(k.input_scale[i] > 0.0)) k.input_scale[i] = 1.0;

  std::vector<int> widths{static_cast<int>(dim)};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.feature_dim);
  k.featurizer = Mlp(widths, Activation::kSilu);
  Rng rng(derive_seed(cfg.seed, 0x6b65726eull));
  k.featurizer.init(rng);

  const auto sample = subsample(nat, adv, 512);
  k.log_sigma_q = std::log(median_heuristic(sample));
  const Mat feats = k.features(to_columns(sample));
  std::vector<Vec> fv;
  for (Eigen::Index i = 0; i < feats.cols(); ++i) fv.emplace_back(feats.col(i));
  k.log_sigma_phi = std::log(median_heuristic(fv));
  k.eps0_logit = std::log(cfg.eps0_init / (1.0 - cfg.eps0_init));
  return k;
}

KernelTrainResult train_kernel_from(KernelSpec init, std::span<const Vec> nat,
                                    std::span<const Vec> adv, const KernelTrainConfig& cfg) {
  cfg.validate();
  if (nat.empty() || adv.empty()) throw InputError("kernel training needs natural and adversarial sets");
  KernelTrainResult result{std::move(init), {}};
  std::vector<double> params = kernel_params(result.kernel);
  Adam adam(params.size(), AdamConfig{cfg.learning_rate});
  Rng rng(cfg.seed);
  const auto m = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Vec> bx(m), by(m);
  std::vector<double> ascent(params.size());
  for (long it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      bx[i] = nat[rng.index(nat.size())];
      by[i] = adv[rng.index(adv.size())];
    }
    const CriterionGrad cg = power_criterion_grad(result.kernel, bx, by);
    if (!std::isfinite(cg.criterion.value)) throw TrainingError("kernel criterion is non-finite", it);
    result.criterion_trace.push_back(cg.criterion.value);
    for (std::size_t i = 0; i < params.size(); ++i) ascent[i] = -cg.grad[i];
    adam.step(params, ascent);
    set_kernel_params(result.kernel, params);
  }
  return result;
}

KernelTrainResult train_deep_kernel(std::span<const Vec> nat, std::span<const Vec> adv,
                                    const KernelTrainConfig& cfg) {
  return train_kernel_from(init_deep_kernel(nat, adv, cfg), nat, adv, cfg);
}

}  // namespace epsad
