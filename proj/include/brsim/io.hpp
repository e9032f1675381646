#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <concepts>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "model_fit.hpp"
#include "scenario.hpp"

namespace brsim::io {

using json = nlohmann::json;

/// Shortest form is not used on purpose: 17 significant digits, locale independent.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void write_string(std::string& out, const std::string& s) {
  out += json(s).dump();
}

inline void write_canonical(std::string& out, const json& j, int depth) {
  const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(2 * depth), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        write_string(out, it.key());
        out += ": ";
        write_canonical(out, it.value(), depth + 1);
      }
      out += "\n" + close_pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i > 0) out += ",\n";
        out += pad;
        write_canonical(out, j[i], depth + 1);
      }
      out += "\n" + close_pad + "]";
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (std::isfinite(v)) {
        out += format_double(v);
      } else {
        write_string(out, format_double(v));
      }
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// Sorted keys, two-space indent, 17-digit floats, non-finite floats as strings.
inline std::string canonical_dump(const json& j) {
  std::string out;
  detail::write_canonical(out, j, 0);
  out += "\n";
  return out;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << content;
  if (!f) throw DataError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Accepts 17-digit floats and the "inf" / "-inf" / "nan" spellings used on output.
inline double json_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf") return kInfinity;
    if (s == "-inf") return -kInfinity;
    if (s == "nan") return std::nan("");
  }
  throw ConfigError("expected a number, got " + j.dump());
}

inline json json_double(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row_strings(header); }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out_ += ',';
      out_ += cells[i];
    }
    out_ += '\n';
  }

  template <typename... Ts>
  void row(const Ts&... cells) {
    std::vector<std::string> s;
    (s.push_back(cell(cells)), ...);
    row_strings(s);
  }

  const std::string& str() const { return out_; }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  template <std::integral T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

  std::string out_;
};

inline constexpr std::string_view kObservationHeader = "v_s,v_lc,gap,ttc";

inline std::string observations_csv(const ObservationSet& obs) {
  CsvWriter w({"v_s", "v_lc", "gap", "ttc"});
  for (const Observation& o : obs.records) w.row(o.v_s, o.v_lc, o.gap, o.ttc);
  return w.str();
}

namespace detail {

inline bool parse_field(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses an observations CSV. Every bad row is reported with its line number.
inline ObservationSet parse_observations(std::string_view text, bool sensor_ttc = false,
                                         std::size_t max_reported = 20) {
  ObservationSet obs;
  std::vector<std::string> errors;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kObservationHeader) {
        throw DataError("line 1: header must be exactly '" + std::string(kObservationHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::array<double, 4> f{};
    std::size_t k = 0;
    bool ok = true;
    std::string_view rest = line;
    for (; k < 4; ++k) {
      const std::size_t comma = rest.find(',');
      const std::string_view field = rest.substr(0, comma);
      if (!detail::parse_field(field, f[k])) {
        ok = false;
        break;
      }
      if (comma == std::string_view::npos) {
        rest = {};
        ++k;
        break;
      }
      rest = rest.substr(comma + 1);
    }
    if (!ok || k != 4 || !rest.empty()) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 4 numeric fields");
      continue;
    }
    const Observation o{f[0], f[1], f[2], f[3]};
    if (const auto err = observation_error(o, sensor_ttc)) {
      errors.push_back("line " + std::to_string(line_no) + ": " + *err);
      continue;
    }
    obs.records.push_back(o);
  }
  if (!header_seen) throw DataError("line 1: missing header");
  if (!errors.empty()) {
    std::string msg = std::to_string(errors.size()) + " malformed row(s)";
    for (std::size_t i = 0; i < errors.size() && i < max_reported; ++i) msg += "\n  " + errors[i];
    throw DataError(msg);
  }
  return obs;
}

inline ObservationSet read_observations(const std::string& path, bool sensor_ttc = false) {
  try {
    return parse_observations(read_file(path), sensor_ttc);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline std::string trajectory_csv(const Trajectory& t) {
  CsvWriter w({"t", "subject_pos", "subject_vel", "target_pos", "target_vel", "gap", "in_lane"});
  for (std::size_t k = 0; k < t.size(); ++k) {
    w.row(t.times[k], t.subject[k].pos, t.subject[k].vel, t.target[k].pos, t.target[k].vel, t.gap_series[k],
          k >= t.crossing_index);
  }
  return w.str();
}

inline std::string qq_csv(const QQResult& qq) {
  CsvWriter w({"prob_level", "theoretical", "empirical"});
  for (std::size_t i = 0; i < qq.prob_levels.size(); ++i) w.row(qq.prob_levels[i], qq.theoretical[i], qq.empirical[i]);
  return w.str();
}

}  // namespace brsim::io
