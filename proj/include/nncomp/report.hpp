#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "binio.hpp"
#include "error.hpp"

namespace nncomp {

// One evaluated point: a metric value at a sweep coordinate for one
// compression descriptor ("baseline", "t=0.05", "B=7", ...).
struct ResultRow {
  std::string metric;      // BER | NMSE_dB
  std::string sweep;       // snr_db | cr
  double coordinate = 0.0;
  std::string descriptor = "baseline";
  double value = 0.0;
  double ci_lo = std::nan("");
  double ci_hi = std::nan("");
  double remaining = std::nan("");  // surviving weight fraction, if pruned
  size_t samples = 0;
  uint64_t seed = 0;
};

namespace detail {

inline std::string fmt_g(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += "\"";
  return out;
}

}  // namespace detail

inline std::string render_csv(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ConfigError("report: no result rows");
  std::string out = "metric,sweep,coordinate,descriptor,value,ci_lo,ci_hi,remaining,samples,seed\n";
  for (const auto& r : rows) {
    out += detail::csv_field(r.metric) + "," + detail::csv_field(r.sweep) + "," +
           detail::fmt_g(r.coordinate) + "," + detail::csv_field(r.descriptor) + "," +
           detail::fmt_g(r.value) + "," + detail::fmt_g(r.ci_lo) + "," + detail::fmt_g(r.ci_hi) +
           "," + detail::fmt_g(r.remaining) + "," + std::to_string(r.samples) + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

inline void emit_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  write_file_atomic(path, render_csv(rows));
}

// Per-metric whitespace-separated columns: coordinate, then one column per
// descriptor in first-seen order. Pruned series annotate the surviving
// fraction in parentheses, the Table I convention.
inline std::map<std::string, std::string> render_plotdata(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ConfigError("report: no result rows");
  std::map<std::string, std::string> files;
  std::set<std::string> metrics;
  for (const auto& r : rows) metrics.insert(r.metric);
  for (const auto& metric : metrics) {
    std::vector<std::string> series;
    std::vector<double> coords;
    std::map<std::string, std::map<double, std::string>> cells;
    std::string sweep = "x";
    for (const auto& r : rows) {
      if (r.metric != metric) continue;
      sweep = r.sweep;
      bool known = false;
      for (const auto& s : series) known = known || s == r.descriptor;
      if (!known) series.push_back(r.descriptor);
      bool seen = false;
      for (double c : coords) seen = seen || c == r.coordinate;
      if (!seen) coords.push_back(r.coordinate);
      std::string cell = detail::fmt_g(r.value);
      if (!std::isnan(r.remaining)) cell += "(" + detail::fmt_g(100.0 * r.remaining) + "%)";
      cells[r.descriptor][r.coordinate] = cell;
    }
    std::string out = "# " + metric + "\n" + sweep;
    for (const auto& s : series) out += "\t" + s;
    out += "\n";
    for (double c : coords) {
      out += detail::fmt_g(c);
      for (const auto& s : series) {
        const auto& col = cells[s];
        const auto it = col.find(c);
        out += "\t" + (it == col.end() ? std::string("nan") : it->second);
      }
      out += "\n";
    }
    files[metric] = out;
  }
  return files;
}

inline std::vector<std::string> emit_plotdata(const std::vector<ResultRow>& rows,
                                              const std::string& dir) {
  const auto files = render_plotdata(rows);
  std::vector<std::string> written;
  for (const auto& [metric, text] : files) {
    const std::string path = dir + "/" + metric + ".dat";
    write_file_atomic(path, text);
    written.push_back(path);
  }
  return written;
}

// Parses render_csv output back into rows (used by the report subcommand).
inline std::vector<ResultRow> parse_csv(const std::string& text) {
  std::vector<ResultRow> rows;
  size_t pos = 0;
  auto next_line = [&](std::string& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    return true;
  };
  std::string header;
  if (!next_line(header) ||
      header != "metric,sweep,coordinate,descriptor,value,ci_lo,ci_hi,remaining,samples,seed")
    throw DataError("report: unrecognized CSV header");
  std::string line;
  size_t lineno = 1;
  while (next_line(line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 10)
      throw DataError("report: CSV line " + std::to_string(lineno) + " has " +
                      std::to_string(fields.size()) + " fields, expected 10");
    ResultRow r;
    r.metric = fields[0];
    r.sweep = fields[1];
    r.coordinate = std::stod(fields[2]);
    r.descriptor = fields[3];
    r.value = std::stod(fields[4]);
    r.ci_lo = fields[5].empty() ? std::nan("") : std::stod(fields[5]);
    r.ci_hi = fields[6].empty() ? std::nan("") : std::stod(fields[6]);
    r.remaining = fields[7].empty() ? std::nan("") : std::stod(fields[7]);
    r.samples = static_cast<size_t>(std::stoull(fields[8]));
    r.seed = std::stoull(fields[9]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace nncomp
