#pragma once

// Artifact I/O: raw little-endian double arrays with JSON sidecars, JSON/CSV/text files,
// FNV-1a content hashes and atomic directory publication.

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plume/error.hpp"

namespace plume::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "artifact format assumes a little-endian host");

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string hash_text(const std::string& s) { return hex(fnv1a(s.data(), s.size())); }

inline std::string hash_file(const fs::path& p) { return hash_text(read_text(p)); }

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed for " + p.string());
}

/// Canonical JSON text: keys sorted, two-space indent, trailing newline.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void write_json(const fs::path& p, const json& j) { write_text(p, dump(j)); }

inline json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("cannot parse JSON in " + p.string() + ": " + e.what());
  }
}

/// Typed field access with the file name in the error message.
template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(where + ": bad field '" + key + "': " + e.what());
  }
}

/// Writes `name.bin` (raw doubles, row-major for matrices) and `name.json`.
inline void write_array(const fs::path& dir, const std::string& name, const std::vector<double>& v,
                        std::vector<std::size_t> shape = {}, const json& meta = json::object()) {
  if (shape.empty()) shape = {v.size()};
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  if (n != v.size()) throw DataError("write_array: shape does not match data for " + name);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / (name + ".bin"), std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw DataError("write failed for " + (dir / (name + ".bin")).string());
  }
  json side = meta;
  side["dtype"] = "f64le";
  side["shape"] = shape;
  side["fnv1a"] = hex(fnv1a(v.data(), v.size() * sizeof(double)));
  write_json(dir / (name + ".json"), side);
}

inline void write_matrix(const fs::path& dir, const std::string& name, const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), m.rows(), m.cols()) = m;
  write_array(dir, name, v, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
}

struct Array {
  std::vector<double> data;
  std::vector<std::size_t> shape;
};

inline Array read_array(const fs::path& dir, const std::string& name) {
  const fs::path side = dir / (name + ".json"), bin = dir / (name + ".bin");
  const json j = read_json(side);
  Array a;
  a.shape = get<std::vector<std::size_t>>(j, "shape", side.string());
  if (get<std::string>(j, "dtype", side.string()) != "f64le") throw DataError(side.string() + ": unsupported dtype");
  std::size_t n = 1;
  for (auto s : a.shape) n *= s;
  if (!fs::exists(bin)) throw DataError("missing array file " + bin.string());
  if (fs::file_size(bin) != n * sizeof(double)) throw DataError(bin.string() + ": size does not match its sidecar shape");
  a.data.resize(n);
  std::ifstream in(bin, std::ios::binary);
  in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("read failed for " + bin.string());
  if (hex(fnv1a(a.data.data(), n * sizeof(double))) != get<std::string>(j, "fnv1a", side.string())) {
    throw DataError(bin.string() + ": checksum mismatch with " + side.string());
  }
  return a;
}

inline Eigen::MatrixXd read_matrix(const fs::path& dir, const std::string& name) {
  const auto a = read_array(dir, name);
  if (a.shape.size() != 2) throw DataError((dir / name).string() + ": expected a matrix");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      a.data.data(), static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
}

inline json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) rows.back()[static_cast<std::size_t>(j)] = m(i, j);
  }
  return rows;
}

inline Eigen::VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::MatrixXd mat_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) throw DataError("ragged matrix in JSON");
    for (std::size_t c = 0; c < rows[i].size(); ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  }
  return m;
}

/// 17 significant digits, so strtod recovers the exact double.
inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw DataError(where + ": not a number: '" + s + "'");
  return v;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& where) const {
    for (std::size_t i = 0; i < header.size(); ++i) if (header[i] == name) return i;
    throw DataError(where + ": missing column '" + name + "'");
  }
};

inline Csv read_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  Csv csv;
  std::string line;
  const auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw DataError(p.string() + ": empty CSV file");
  csv.header = split(line);
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    csv.rows.push_back(split(line));
    if (csv.rows.back().size() != csv.header.size()) {
      throw DataError(p.string() + ": line " + std::to_string(n) + " has " + std::to_string(csv.rows.back().size()) +
                      " fields, expected " + std::to_string(csv.header.size()));
    }
  }
  return csv;
}

inline void write_csv(const fs::path& p, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::string text;
  for (std::size_t i = 0; i < header.size(); ++i) text += (i ? "," : "") + header[i];
  text += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) text += (i ? "," : "") + r[i];
    text += "\n";
  }
  write_text(p, text);
}

/// Stages files into a sibling temporary directory and renames it over the target on commit.
class AtomicDir {
 public:
  explicit AtomicDir(fs::path target) : target_(std::move(target)) {
    tmp_ = target_;
    tmp_ += ".tmp";
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  AtomicDir(const AtomicDir&) = delete;
  AtomicDir& operator=(const AtomicDir&) = delete;
  ~AtomicDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& path() const { return tmp_; }

  void commit() {
    fs::path old = target_;
    old += ".old";
    fs::remove_all(old);
    if (fs::exists(target_)) fs::rename(target_, old);
    fs::rename(tmp_, target_);
    fs::remove_all(old);
    committed_ = true;
  }

 private:
  fs::path target_, tmp_;
  bool committed_ = false;
};

}  // namespace plume::io
