#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/retrieval.hpp"

namespace xview {

inline constexpr const char* kManifestHeader = "id,ground,aerial,synth,lat,lon";

struct ManifestRow {
  std::string id;
  std::string ground;  // paths as written in the file (relative to the manifest)
  std::string aerial;
  std::string synth;   // may be empty
  std::optional<double> lat;
  std::optional<double> lon;
  std::size_t line = 0;
};

struct Manifest {
  std::string split;  // "train" / "test" when the file stem says so
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  bool has_geo() const { return !rows.empty() && rows.front().lat.has_value(); }
  bool has_synth() const {
    for (const auto& r : rows)
      if (r.synth.empty()) return false;
    return !rows.empty();
  }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::map<std::string, GeoSample> geo_index() const {
    std::map<std::string, GeoSample> out;
    for (const auto& r : rows)
      if (r.lat && r.lon) out[r.id] = GeoSample{r.id, *r.lat, *r.lon};
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_coord(const std::string& s, const std::string& path, std::size_t line,
                                         const char* what) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw DataError(path + ":" + std::to_string(line) + ": malformed " + what + " '" + s + "'");
  }
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::string& path, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  const auto stem = std::filesystem::path(path).stem().string();
  if (stem == "train" || stem == "test") m.split = stem;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError(path + ": empty manifest");
  ++lineno;
  if (detail::trim(line) != kManifestHeader) {
    throw DataError(path + ":1: expected header '" + std::string(kManifestHeader) + "'");
  }
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 6) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed row, expected 6 fields, got " +
                      std::to_string(f.size()));
    }
    for (auto& s : f) s = detail::trim(s);
    ManifestRow r;
    r.id = f[0];
    r.ground = f[1];
    r.aerial = f[2];
    r.synth = f[3];
    r.line = lineno;
    if (r.id.empty() || r.ground.empty() || r.aerial.empty()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed row, id/ground/aerial must be non-empty");
    }
    r.lat = detail::parse_coord(f[4], path, lineno, "latitude");
    r.lon = detail::parse_coord(f[5], path, lineno, "longitude");
    if (r.lat.has_value() != r.lon.has_value()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": partial geo for '" + r.id +
                      "' (latitude and longitude must both be present or both empty)");
    }
    if (r.lat) validate_geo(GeoSample{r.id, *r.lat, *r.lon});
    auto [it, inserted] = seen.emplace(r.id, lineno);
    if (!inserted) {
      throw DataError(path + ": duplicate id '" + r.id + "' on lines " + std::to_string(it->second) + " and " +
                      std::to_string(lineno));
    }
    m.rows.push_back(std::move(r));
  }
  for (const auto& r : m.rows) {
    if (r.lat.has_value() != m.rows.front().lat.has_value()) {
      throw DataError(path + ": partial geo coverage, line " + std::to_string(r.line) +
                      (r.lat ? " has" : " lacks") + " coordinates unlike line " + std::to_string(m.rows.front().line));
    }
  }
  return m;
}

// Loads and validates a manifest. With `check_files` every referenced image
// must exist.
inline Manifest load_manifest(const std::string& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  Manifest m = parse_manifest(in, path, std::filesystem::path(path).parent_path());
  if (check_files) {
    for (const auto& r : m.rows) {
      for (const std::string* p : {&r.ground, &r.aerial, &r.synth}) {
        if (p->empty()) continue;
        if (!std::filesystem::exists(m.resolve(*p))) {
          throw DataError(path + ":" + std::to_string(r.line) + ": file '" + *p + "' for '" + r.id + "' does not exist");
        }
      }
    }
  }
  return m;
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << kManifestHeader << '\n';
  out.precision(10);
  for (const auto& r : m.rows) {
    out << r.id << ',' << r.ground << ',' << r.aerial << ',' << r.synth << ',';
    if (r.lat) out << std::fixed << *r.lat;
    out << ',';
    if (r.lon) out << std::fixed << *r.lon;
    out << '\n';
  }
}

}  // namespace xview
