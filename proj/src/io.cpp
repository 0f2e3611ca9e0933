#include "asyncflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace af {

std::string fmt_float(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
  require(row.size() == header.size(), "CsvTable: row width mismatch");
  rows.push_back(std::move(row));
}

std::string CsvTable::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) os << ",";
    os << header[i];
  }
  os << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ",";
      os << row[i];
    }
    os << "\n";
  }
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << content;
  if (!os) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {

std::string svg_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series) {
  require(!series.empty(), "write_line_chart_svg: no series");
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const Series& s : series) {
    require(s.x.size() == s.y.size() && !s.x.empty(),
            "write_line_chart_svg: bad series '" + s.name + "'");
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\""
     << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
  // axes
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\""
     << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R
     << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << svg_coord(px(xv)) << "\" y=\"" << H - B + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
       << fmt_float(std::round(xv * 1e6) / 1e6) << "</text>\n";
    os << "<text x=\"" << L - 8 << "\" y=\"" << svg_coord(py(yv) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << fmt_float(std::round(yv * 1e6) / 1e6) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << xlabel << "</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        "transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">" << ylabel
     << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) os << " ";
      os << svg_coord(px(series[s].x[i])) << "," << svg_coord(py(series[s].y[i]));
    }
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 6 << "\" y=\"" << T + 16 + 16 * double(s)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
       << color << "\">" << series[s].name << "</text>\n";
  }
  os << "</svg>\n";
  write_text_file(path, os.str());
}

namespace {

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vec vec_from_json(const nlohmann::json& arr) {
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json step_record_to_json(const StepRecord& rec) {
  nlohmann::json j;
  j["k"] = rec.k;
  j["t_k"] = rec.t_k;
  j["t_next"] = rec.t_next;
  j["t_star"] = rec.t_star;
  j["t_star_next"] = rec.t_star_next;
  if (rec.beta) {
    j["alpha"] = rec.beta->alpha;
    j["beta"] = rec.beta->beta;
  } else {
    j["alpha"] = nullptr;
    j["beta"] = nullptr;
  }
  j["r"] = rec.r;
  j["log_prob"] = rec.log_prob;
  j["deviation"] = rec.deviation;
  j["clamped"] = rec.clamped;
  j["r_clamped"] = rec.r_clamped;
  j["is_final"] = rec.is_final;
  j["x_before"] = vec_to_json(rec.x_before);
  j["v"] = vec_to_json(rec.v);
  j["x0_hat"] = vec_to_json(rec.x0_hat);
  j["x_after"] = vec_to_json(rec.x_after);
  return j;
}

StepRecord step_record_from_json(const nlohmann::json& j) {
  StepRecord rec;
  rec.k = j.at("k").get<int>();
  rec.t_k = j.at("t_k").get<double>();
  rec.t_next = j.at("t_next").get<double>();
  rec.t_star = j.at("t_star").get<double>();
  rec.t_star_next = j.at("t_star_next").get<double>();
  if (!j.at("alpha").is_null())
    rec.beta = BetaParams{j.at("alpha").get<double>(), j.at("beta").get<double>()};
  rec.r = j.at("r").get<double>();
  rec.log_prob = j.at("log_prob").get<double>();
  rec.deviation = j.at("deviation").get<double>();
  rec.clamped = j.at("clamped").get<bool>();
  rec.r_clamped = j.at("r_clamped").get<bool>();
  rec.is_final = j.at("is_final").get<bool>();
  rec.x_before = vec_from_json(j.at("x_before"));
  rec.v = vec_from_json(j.at("v"));
  rec.x0_hat = vec_from_json(j.at("x0_hat"));
  rec.x_after = vec_from_json(j.at("x_after"));
  return rec;
}

std::string trajectory_to_jsonl(const Trajectory& traj) {
  std::ostringstream os;
  for (const StepRecord& rec : traj.steps) os << step_record_to_json(rec).dump() << "\n";
  nlohmann::json trailer;
  trailer["trailer"] = true;
  trailer["grid"] = traj.grid.values;
  trailer["label"] = traj.cond.is_null() ? nlohmann::json(nullptr)
                                         : nlohmann::json(traj.cond.label);
  trailer["guidance"] = traj.guidance;
  trailer["final_sample"] = vec_to_json(traj.final_sample);
  trailer["reward"] = traj.reward;
  trailer["old_log_prob"] = traj.old_log_prob;
  os << trailer.dump() << "\n";
  return os.str();
}

Trajectory trajectory_from_jsonl(const std::string& text) {
  Trajectory traj;
  std::istringstream is(text);
  std::string line;
  bool saw_trailer = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw IoError(std::string("bad trajectory JSONL: ") + e.what());
    }
    if (j.contains("trailer")) {
      traj.grid.values = j.at("grid").get<std::vector<double>>();
      if (!j.at("label").is_null()) traj.cond = Condition::of(j.at("label").get<int>());
      traj.guidance = j.at("guidance").get<double>();
      traj.final_sample = vec_from_json(j.at("final_sample"));
      traj.reward = j.at("reward").get<double>();
      traj.old_log_prob = j.at("old_log_prob").get<double>();
      saw_trailer = true;
    } else {
      traj.steps.push_back(step_record_from_json(j));
    }
  }
  if (!saw_trailer) throw IoError("trajectory JSONL has no trailer line");
  return traj;
}

std::string make_run_dir(const std::string& base, const std::string& label,
                         std::uint64_t config_hash) {
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash));
  const std::filesystem::path dir =
      std::filesystem::path(base) / (label + "-" + hex);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());
  return dir.string();
}

}  // namespace af
