#pragma once

// Trace CSV (RFC 4180, LF, %.17g), gnuplot scripts, JSON files.

#include "hand/analysis.hpp"
#include "hand/cli/config.hpp"
#include "hand/core.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace hand::cli {

namespace fs = std::filesystem;

/// Per-trace column semantics: how V and the target distance are computed.
struct TraceColumns {
  std::function<double(const HybridState&)> lyapunov;  // nan when not defined
  std::function<double(const HybridState&)> distance;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_header(int n) {
  std::vector<std::string> h{"t", "j", "tau"};
  for (int i = 0; i < n; ++i) h.push_back("x1_" + std::to_string(i));
  for (int i = 0; i < n; ++i) h.push_back("x2_" + std::to_string(i));
  for (const char* s : {"f_gap", "V", "dist_A", "event"}) h.emplace_back(s);
  return h;
}

inline void write_trace_csv(std::ostream& out, const Trace& trace, const CostFunction& f,
                            const TraceColumns& cols) {
  const int n = f.dim();
  const auto header = csv_header(n);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_field(header[i]);
  out << '\n';
  std::string line;
  for (const auto& p : trace.points) {
    line.clear();
    line += format_double(p.time.t);
    line += ',';
    line += std::to_string(p.time.j);
    line += ',';
    line += format_double(p.state.tau());
    for (int i = 0; i < n; ++i) (line += ',') += format_double(p.state.x1()(i));
    for (int i = 0; i < n; ++i) (line += ',') += format_double(p.state.x2()(i));
    const bool finite = p.state.finite();
    (line += ',') += format_double(finite ? f.gap(p.state.x1()) : std::nan(""));
    (line += ',') += format_double(finite && cols.lyapunov ? cols.lyapunov(p.state) : std::nan(""));
    (line += ',') += format_double(finite && cols.distance ? cols.distance(p.state) : std::nan(""));
    (line += ',') += to_string(p.kind);
    out << line << '\n';
  }
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_trace_file(const fs::path& path, const Trace& trace, const CostFunction& f,
                             const TraceColumns& cols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_trace_csv(out, trace, f, cols);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_json_file(const fs::path& path, const json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

/// gnuplot script plotting f_gap and dist_A for every trace in `csv_names`.
inline std::string gnuplot_script(const std::string& title,
                                  const std::vector<std::string>& csv_names) {
  std::string s;
  s += "# gnuplot script; run from the output directory: gnuplot plot.gp\n";
  s += "set datafile separator ','\n";
  s += "set terminal pngcairo size 1000,700\n";
  s += "set xlabel 't'\n";
  s += "set grid\n";
  for (const auto& name : csv_names) {
    const std::string stem = name.substr(0, name.rfind('.'));
    s += "\nset output '" + stem + "_fgap.png'\n";
    s += "set title '" + title + ": " + stem + " sub-optimality'\n";
    s += "set logscale y\n";
    s += "plot '" + name + "' using (column('t')):(column('f_gap')) skip 1 with lines title 'f - f*'\n";
    s += "unset logscale y\n";
    s += "\nset output '" + stem + "_dist.png'\n";
    s += "set title '" + title + ": " + stem + " distance'\n";
    s += "plot '" + name + "' using (column('t')):(column('dist_A')) skip 1 with lines title '|z|_A', \\\n";
    s += "     '" + name + "' using (column('t')):(column('x1_0')) skip 1 with lines title 'x1_0'\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reading traces back
// ---------------------------------------------------------------------------

/// Splits one RFC 4180 record. Quoted fields may contain commas and "".
inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvTrace {
  int dim = 0;
  Trace trace;
  std::vector<double> f_gap;  // as written
};

/// Rebuilds points (and jump events) from a trace CSV.
inline CsvTrace read_trace_csv(const std::string& path, double h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument(path + ": cannot open trace");
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path + ": empty trace file");
  const auto header = csv_split(line);
  const int cols = static_cast<int>(header.size());
  if (cols < 8 || (cols - 7) % 2 != 0)
    throw InvalidArgument(path + ": unexpected header with " + std::to_string(cols) + " columns");
  const int n = (cols - 7) / 2;
  if (header != csv_header(n)) throw InvalidArgument(path + ": header does not match trace format");

  CsvTrace out;
  out.dim = n;
  out.trace.config.h = h;
  int lineno = 1;
  auto num = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      if (s == "nan" || s == "-nan") return std::nan("");
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (static_cast<int>(f.size()) != cols)
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(cols) + " fields");
    Vector x1(n), x2(n);
    for (int i = 0; i < n; ++i) {
      x1(i) = num(f[3 + i]);
      x2(i) = num(f[3 + n + i]);
    }
    TracePoint p{{num(f[0]), std::stoi(f[1])}, HybridState(x1, x2, num(f[2])), PointKind::Flow};
    const std::string& ev = f[cols - 1];
    if (ev == "jump") p.kind = PointKind::Jump;
    else if (ev == "fault") p.kind = PointKind::Fault;
    else if (ev != "flow")
      throw InvalidArgument(path + ":" + std::to_string(lineno) + ": unknown event '" + ev + "'");
    if (p.kind == PointKind::Jump && !out.trace.points.empty())
      out.trace.events.push_back({out.trace.points.back().time, out.trace.points.back().state,
                                  p.state});
    if (p.kind == PointKind::Fault) out.trace.termination = Termination::BlowUp;
    out.f_gap.push_back(num(f[cols - 4]));
    out.trace.points.push_back(std::move(p));
  }
  return out;
}

}  // namespace hand::cli
