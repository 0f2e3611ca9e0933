#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "asyncflow/sampler.hpp"

namespace af {

// "%.17g" with "." as the decimal separator regardless of locale.
std::string fmt_float(double x);

// Comma-separated table with a header row; floats are written via fmt_float.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string to_string() const;
};

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal polyline chart; no timestamps, so identical inputs give identical
// bytes.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series);

nlohmann::json step_record_to_json(const StepRecord& rec);
StepRecord step_record_from_json(const nlohmann::json& j);

// JSON lines: one step record per line plus a trailer carrying the final
// sample and reward.
std::string trajectory_to_jsonl(const Trajectory& traj);
Trajectory trajectory_from_jsonl(const std::string& text);

// Creates <base>/<label>-<hash16> (content-addressed by config hash) and
// returns the path.
std::string make_run_dir(const std::string& base, const std::string& label,
                         std::uint64_t config_hash);

}  // namespace af
