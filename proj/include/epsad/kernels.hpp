#pragma once

// Data-parallel batch kernels. Each comes as a serial reference and an
// OpenMP version producing bit-identical results: every sample owns a
// generator seeded by derive_seed(root, stream, index), and outputs are
// written by sample index.

#include <cstdint>
#include <span>
#include <vector>

#include "epsad/attacks.hpp"
#include "epsad/eps.hpp"
#include "epsad/mmd.hpp"

namespace epsad {

struct SeedStream {
  std::uint64_t root = 0;
  std::uint64_t stream = 0;

  std::uint64_t seed(std::size_t index) const { return derive_seed(root, stream, index); }
};

std::vector<EpsVector> eps_batch_serial(const ScoreSource& src, std::span<const Vec> xs,
                                        const TimeGrid& grid, SeedStream seeds,
                                        PerturbMode mode = PerturbMode::kIndependent);
std::vector<EpsVector> eps_batch_parallel(const ScoreSource& src, std::span<const Vec> xs,
                                          const TimeGrid& grid, SeedStream seeds,
                                          PerturbMode mode = PerturbMode::kIndependent);

std::vector<double> single_score_norm_batch_serial(const ScoreSource& src, std::span<const Vec> xs,
                                                   double t_star, SeedStream seeds, PerturbMode mode);
std::vector<double> single_score_norm_batch_parallel(const ScoreSource& src, std::span<const Vec> xs,
                                                     double t_star, SeedStream seeds, PerturbMode mode);

std::vector<double> mmd_statistics_serial(const MmdReference& ref, std::span<const Vec> tests);
std::vector<double> mmd_statistics_parallel(const MmdReference& ref, std::span<const Vec> tests);

std::vector<Vec> attack_batch_serial(const ToyClassifier& clf, std::span<const Vec> xs,
                                     std::span<const int> labels, const AttackConfig& cfg,
                                     SeedStream seeds);
std::vector<Vec> attack_batch_parallel(const ToyClassifier& clf, std::span<const Vec> xs,
                                       std::span<const int> labels, const AttackConfig& cfg,
                                       SeedStream seeds);

std::vector<Vec> values_of(std::span<const EpsVector> eps);

}  // namespace epsad
