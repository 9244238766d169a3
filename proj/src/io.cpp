#include "epsad/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "epsad/errors.hpp"

namespace epsad::io {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

bool is_feature(const std::string& name) {
  if (name.size() < 2 || (name[0] != 'x' && name[0] != 's')) return false;
  return name.find_first_not_of("0123456789", 1) == std::string::npos;
}

std::vector<int> feature_columns(const Table& t) {
  std::vector<int> cols;
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (is_feature(t.header[i])) cols.push_back(static_cast<int>(i));
  if (cols.empty()) throw InputError("CSV has no x*/s* feature columns");
  return cols;
}

}  // namespace

Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV '" + path.string() + "'");
  t.header = split(line);
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size())
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), row[i]);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size())
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + c + "'");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

namespace {

std::string header(const char* prefix, Eigen::Index d) {
  std::string h;
  for (Eigen::Index i = 0; i < d; ++i) h += (i ? "," : "") + std::string(prefix) + std::to_string(i);
  return h;
}

void append_vec(std::string& out, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
}

}  // namespace

std::string data_csv(const LabeledData& data) {
  const Eigen::Index d = data.x.empty() ? 0 : data.x.front().size();
  std::string out = header("x", d) + ",label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    append_vec(out, data.x[i]);
    out += "," + std::to_string(data.y[i]) + "\n";
  }
  return out;
}

std::string vectors_csv(const std::vector<Vec>& xs) {
  const Eigen::Index d = xs.empty() ? 0 : xs.front().size();
  std::string out = header("x", d) + "\n";
  for (const auto& x : xs) {
    append_vec(out, x);
    out += "\n";
  }
  return out;
}

std::string eps_csv(const std::vector<EpsVector>& eps) {
  const Eigen::Index d = eps.empty() ? 0 : eps.front().values.size();
  std::string out = header("s", d) + ",seed,T_star\n";
  for (const auto& e : eps) {
    append_vec(out, e.values);
    out += "," + std::to_string(e.seed) + "," + std::to_string(e.T_star) + "\n";
  }
  return out;
}

LabeledData read_data(const std::filesystem::path& path) {
  const Table t = read_csv(path);
  const auto cols = feature_columns(t);
  const int label = t.column("label");
  LabeledData out;
  for (const auto& row : t.rows) {
    Vec x(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) x[static_cast<Eigen::Index>(k)] = row[cols[k]];
    out.x.push_back(std::move(x));
    out.y.push_back(label >= 0 ? static_cast<int>(row[label]) : 0);
  }
  return out;
}

std::vector<Vec> read_vectors(const std::filesystem::path& path) { return read_data(path).x; }

}  // namespace epsad::io
