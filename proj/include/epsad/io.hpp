#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "epsad/attacks.hpp"
#include "epsad/eps.hpp"

namespace epsad::io {

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  // Index of a column, or -1.
  int column(const std::string& name) const;
};

Table read_csv(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// Labeled data: columns x0..x{d-1}, label.
std::string data_csv(const LabeledData& data);
// Vectors only: columns x0..x{d-1}.
std::string vectors_csv(const std::vector<Vec>& xs);
// EPS batch: columns s0..s{d-1}, seed, T_star.
std::string eps_csv(const std::vector<EpsVector>& eps);

// Reads x*/s* feature columns and, when present, the label column (else 0).
LabeledData read_data(const std::filesystem::path& path);
std::vector<Vec> read_vectors(const std::filesystem::path& path);

}  // namespace epsad::io
