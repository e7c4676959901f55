#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "mesde/errors.hpp"
#include "mesde/model.hpp"
#include "mesde/simulate.hpp"

namespace mesde::io {

namespace fs = std::filesystem;

/// Shortest decimal that round-trips to the same double; locale-free.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Fixed-point with `digits` decimals; locale-free.
inline std::string format_fixed(double v, int digits) {
  if (!std::isfinite(v)) return format_double(v);
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  std::string s(buf, res.ptr);
  if (s.size() > 1 && s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Writes `content` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw ConfigError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csv_quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) out += ',';
    out += csv_quote(fields[k]);
  }
  out += '\n';
  return out;
}

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
/// Blank lines are skipped.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1;
  auto end_row = [&] {
    if (field_started || !row.empty() || !field.empty()) {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
    }
    row.clear();
    field.clear();
    field_started = false;
  };
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
    case '"':
      quoted = true;
      field_started = true;
      break;
    case ',':
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
      break;
    case '\r': break;
    case '\n':
      end_row();
      ++line;
      break;
    default: field += c; field_started = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", rows.size() + 1, row.size() + 1);
  end_row();
  return rows;
}

// ---------------------------------------------------------------------------
// Panels
// ---------------------------------------------------------------------------

/// Wide panel CSV: header `id,t0,...,tn`, one row per individual.
inline std::string panel_to_csv(const PanelData& panel) {
  std::string out = "id";
  for (std::size_t j = 0; j <= panel.n(); ++j) out += ",t" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < panel.N(); ++i) {
    out += std::to_string(i);
    for (std::size_t j = 0; j <= panel.n(); ++j) {
      out += ',';
      out += format_double(panel(i, j));
    }
    out += '\n';
  }
  return out;
}

/// Sidecar of true random effects: `id,tau,phi_r1,...`.
inline std::string effects_to_csv(const std::vector<RandomEffectDraw>& effects) {
  std::string out = "id,tau";
  const auto pr = effects.empty() ? 0 : effects.front().phi_r.size();
  for (Eigen::Index k = 0; k < pr; ++k) out += ",phi_r" + std::to_string(k + 1);
  out += '\n';
  for (std::size_t i = 0; i < effects.size(); ++i) {
    out += std::to_string(i) + "," + format_double(effects[i].tau);
    for (Eigen::Index k = 0; k < pr; ++k) out += "," + format_double(effects[i].phi_r[k]);
    out += '\n';
  }
  return out;
}

/// Relative tolerance on the spacing of observation times.
inline constexpr double kGridTolerance = 1e-6;

namespace detail {

inline double cell_number(const std::vector<std::string>& row, std::size_t line, std::size_t col) {
  const auto v = parse_double(row[col]);
  if (!v) throw ParseError("non-numeric value '" + row[col] + "'", line, col + 1);
  if (!std::isfinite(*v)) throw ParseError("non-finite value '" + row[col] + "'", line, col + 1);
  return *v;
}

inline PanelData read_wide(const std::vector<std::vector<std::string>>& rows, double h, double scale) {
  const std::size_t cols = rows.front().size();
  if (cols < 3) throw ParseError("wide panel needs id and at least two time columns", 1, cols);
  for (std::size_t c = 1; c < cols; ++c)
    if (rows.front()[c] != "t" + std::to_string(c - 1))
      throw ParseError("expected header 't" + std::to_string(c - 1) + "', found '" + rows.front()[c] + "'", 1,
                       c + 1);
  RowMat y(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(cols - 1));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != cols)
      throw ParseError("ragged row: expected " + std::to_string(cols) + " fields, found " +
                           std::to_string(rows[r].size()),
                       r + 1, std::min(rows[r].size(), cols) + 1);
    for (std::size_t c = 1; c < cols; ++c)
      y(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c - 1)) = scale * cell_number(rows[r], r + 1, c);
  }
  return PanelData(std::move(y), h);
}

inline PanelData read_long(const std::vector<std::vector<std::string>>& rows, double scale) {
  // Keep individuals in order of first appearance.
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<std::pair<double, double>>> series;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 3)
      throw ParseError("ragged row: expected 3 fields, found " + std::to_string(row.size()), r + 1,
                       std::min<std::size_t>(row.size(), 3) + 1);
    const double t = cell_number(row, r + 1, 1);
    const double y = cell_number(row, r + 1, 2);
    auto [it, inserted] = index.try_emplace(row[0], ids.size());
    if (inserted) {
      ids.push_back(row[0]);
      series.emplace_back();
    }
    series[it->second].emplace_back(t, y);
  }
  if (series.empty()) throw DataError("panel has no observations");
  for (auto& s : series) std::stable_sort(s.begin(), s.end(), [](auto& a, auto& b) { return a.first < b.first; });
  const auto& first = series.front();
  if (first.size() < 2) throw DataError("panel needs at least two observation times");
  const double h = (first.back().first - first.front().first) / static_cast<double>(first.size() - 1);
  if (!(h > 0.0)) throw DataError("observation times must increase");
  RowMat y(static_cast<Eigen::Index>(series.size()), static_cast<Eigen::Index>(first.size()));
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.size() != first.size())
      throw DataError("individual '" + ids[i] + "' has " + std::to_string(s.size()) + " observations, expected " +
                      std::to_string(first.size()));
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (std::abs(s[j].first - first[j].first) > kGridTolerance * h)
        throw DataError("individual '" + ids[i] + "' is observed on a different time grid");
      if (j > 0 && std::abs((s[j].first - s[j - 1].first) - h) > kGridTolerance * h)
        throw DataError("observation times of individual '" + ids[i] +
                        "' are not equally spaced; the estimators require a uniform grid t_j = j h");
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = scale * s[j].second;
    }
  }
  return PanelData(std::move(y), h);
}

} // namespace detail

/// Reads a panel from CSV text, either wide (`id,t0,...,tn`, step `h` required)
/// or long (`id,t,y`, step inferred and checked for uniformity). Every value
/// is multiplied by `scale`.
inline PanelData parse_panel(std::string_view text, std::optional<double> h, double scale = 1.0) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("scale factor must be positive");
  const auto rows = parse_csv(text);
  if (rows.empty()) throw ParseError("empty panel file", 1, 1);
  const auto& header = rows.front();
  if (header.empty() || header[0] != "id") throw ParseError("first header field must be 'id'", 1, 1);
  if (rows.size() < 2) throw DataError("panel has no individuals");
  if (header.size() == 3 && header[1] == "t" && header[2] == "y") return detail::read_long(rows, scale);
  if (!h) throw ConfigError("wide panel files need the observation step h (flag or metadata)");
  if (!(*h > 0.0)) throw ConfigError("observation step h must be positive");
  return detail::read_wide(rows, *h, scale);
}

/// Reads a panel file. For wide files without an explicit step, `h` is taken
/// from a `metadata.json` next to the file when present.
inline PanelData ingest_panel(const fs::path& path, double scale = 1.0, std::optional<double> h = std::nullopt) {
  if (!fs::exists(path)) throw ConfigError("panel file not found: " + path.string());
  if (!h) {
    const fs::path meta = path.parent_path() / "metadata.json";
    if (fs::exists(meta)) {
      const auto j = nlohmann::json::parse(read_file(meta), nullptr, false);
      if (!j.is_discarded() && j.contains("design") && j["design"].contains("h")) h = j["design"]["h"].get<double>();
    }
  }
  return parse_panel(read_file(path), h, scale);
}

/// Long-format CSV `id,t,y`.
inline std::string panel_to_long_csv(const PanelData& panel) {
  std::string out = "id,t,y\n";
  for (std::size_t i = 0; i < panel.N(); ++i)
    for (std::size_t j = 0; j <= panel.n(); ++j)
      out += std::to_string(i) + "," + format_double(panel.time(j)) + "," + format_double(panel(i, j)) + "\n";
  return out;
}

} // namespace mesde::io
