#pragma once

// CSV tables, two-column plot data and the criterion report. Every artifact
// starts with a comment line carrying the config hash and seed.

#include "hypodens/config.hpp"
#include "hypodens/core.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hypodens {

class OutputError : public Error {
public:
  using Error::Error;
};

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Stamp {
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string line() const { return "# config_hash=" + config_hash + " seed=" + std::to_string(seed); }
};

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw OutputError("output directory '" + dir + "' cannot be created");
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw OutputError("cannot write " + p.string());
  return f;
}

/// Buffers rows and writes them in one go.
class CsvTable {
public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw ArgumentError("csv row width mismatch");
    rows_.push_back(std::move(row));
  }
  std::size_t size() const { return rows_.size(); }

  void write(const std::filesystem::path& p, const Stamp& stamp) const {
    auto f = open_out(p);
    f << stamp.line() << '\n';
    write_row(f, header_);
    for (const auto& r : rows_) write_row(f, r);
    if (!f) throw OutputError("write failed: " + p.string());
  }

private:
  static void write_row(std::ofstream& f, const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
    f << '\n';
  }
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Two whitespace-separated columns, for log-log series.
inline void write_plot_data(const std::filesystem::path& p, const Stamp& stamp, const std::vector<double>& x,
                            const std::vector<double>& y) {
  auto f = open_out(p);
  f << stamp.line() << '\n';
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) f << fmt_num(x[i]) << ' ' << fmt_num(y[i]) << '\n';
}

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string measured;
  std::string expected;
  double runtime_s = 0.0;
};

inline std::string status_line(const CriterionResult& c) {
  return std::string(c.passed ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " [" + c.name +
         "] measured: " + c.measured + " | expected: " + c.expected;
}

/// Structured report. Runtimes go to a separate timings table so the report
/// itself is byte-identical across reruns.
inline void emit_report(const std::vector<CriterionResult>& results, const std::string& dir, const Stamp& stamp,
                        const Json& config) {
  if (results.empty()) throw ArgumentError("emit_report: no completed suite");
  const auto base = ensure_dir(dir);
  Json j;
  j["config_hash"] = stamp.config_hash;
  j["seed"] = stamp.seed;
  j["config"] = config;
  j["criteria"] = Json::array();
  bool all = true;
  for (const auto& c : results) {
    j["criteria"].push_back(
        {{"id", c.id}, {"name", c.name}, {"passed", c.passed}, {"measured", c.measured}, {"expected", c.expected}});
    all = all && c.passed;
  }
  j["all_passed"] = all;
  auto f = open_out(base / "report.json");
  f << j.dump(2) << '\n';
  CsvTable t({"id", "name", "passed", "runtime_s"});
  for (const auto& c : results) t.add({std::to_string(c.id), c.name, c.passed ? "1" : "0", fmt_num(c.runtime_s)});
  t.write(base / "timings.csv", stamp);
}

}  // namespace hypodens
