#include "epsad/kernels.hpp"

#include <exception>

#include "epsad/errors.hpp"

namespace epsad {

namespace {

// Runs body(i) for i in [0, n) across OpenMP threads; the first exception
// thrown by any iteration is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
  const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(epsad_parallel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

template <typename Body>
void serial_for(std::size_t n, Body&& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace

std::vector<EpsVector> eps_batch_serial(const ScoreSource& src, std::span<const Vec> xs,
                                        const TimeGrid& grid, SeedStream seeds, PerturbMode mode) {
  std::vector<EpsVector> out(xs.size());
  serial_for(xs.size(), [&](std::size_t i) {
    Rng rng(seeds.seed(i));
    out[i] = compute_eps(src, xs[i], grid, rng, mode);
  });
  return out;
}

std::vector<EpsVector> eps_batch_parallel(const ScoreSource& src, std::span<const Vec> xs,
                                          const TimeGrid& grid, SeedStream seeds, PerturbMode mode) {
  std::vector<EpsVector> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    Rng rng(seeds.seed(i));
    out[i] = compute_eps(src, xs[i], grid, rng, mode);
  });
  return out;
}

std::vector<double> single_score_norm_batch_serial(const ScoreSource& src, std::span<const Vec> xs,
                                                   double t_star, SeedStream seeds, PerturbMode mode) {
  std::vector<double> out(xs.size());
  serial_for(xs.size(), [&](std::size_t i) {
    Rng rng(seeds.seed(i));
    out[i] = single_score_norm(src, xs[i], t_star, rng, mode);
  });
  return out;
}

std::vector<double> single_score_norm_batch_parallel(const ScoreSource& src, std::span<const Vec> xs,
                                                     double t_star, SeedStream seeds, PerturbMode mode) {
  std::vector<double> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    Rng rng(seeds.seed(i));
    out[i] = single_score_norm(src, xs[i], t_star, rng, mode);
  });
  return out;
}

std::vector<double> mmd_statistics_serial(const MmdReference& ref, std::span<const Vec> tests) {
  std::vector<double> out(tests.size());
  serial_for(tests.size(), [&](std::size_t i) { out[i] = ref.statistic(tests[i]); });
  return out;
}

std::vector<double> mmd_statistics_parallel(const MmdReference& ref, std::span<const Vec> tests) {
  std::vector<double> out(tests.size());
  parallel_for(tests.size(), [&](std::size_t i) { out[i] = ref.statistic(tests[i]); });
  return out;
}

namespace {

void check_labels(std::span<const Vec> xs, std::span<const int> labels) {
  if (xs.size() != labels.size()) throw InputError("attack batch: one label per sample required");
}

}  // namespace

std::vector<Vec> attack_batch_serial(const ToyClassifier& clf, std::span<const Vec> xs,
                                     std::span<const int> labels, const AttackConfig& cfg,
                                     SeedStream seeds) {
  check_labels(xs, labels);
  std::vector<Vec> out(xs.size());
  serial_for(xs.size(), [&](std::size_t i) {
    Rng rng(seeds.seed(i));
    out[i] = attack(clf, xs[i], labels[i], cfg, rng);
  });
  return out;
}

std::vector<Vec> attack_batch_parallel(const ToyClassifier& clf, std::span<const Vec> xs,
                                       std::span<const int> labels, const AttackConfig& cfg,
                                       SeedStream seeds) {
  check_labels(xs, labels);
  std::vector<Vec> out(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    Rng rng(seeds.seed(i));
    out[i] = attack(clf, xs[i], labels[i], cfg, rng);
  });
  return out;
}

std::vector<Vec> values_of(std::span<const EpsVector> eps) {
  std::vector<Vec> out;
  out.reserve(eps.size());
  for (const auto& e : eps) out.push_back(e.values);
  return out;
}

}  // namespace epsad
