#include "eoss/harness/artifacts.h"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "eoss/harness/spec.h"
#include "eoss/numerics.h"
#include "eoss/sharpness_metrics.h"
#include "eoss/tiny_nn/trainer.h"

namespace eoss::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kMetricNames[] = {"batch_sharpness", "gni", "ias", "lambda_max", "lambda_max_b",
                                    "step_sharpness"};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_cell(const std::string& s, const std::string& file, long line,
                                 const std::string& col) {
  if (s.empty()) return std::nullopt;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw CsvParseError(file, line, "column '" + col + "': not a number: '" + s + "'");
  return v;
}

json opt_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

json fit_json(const numerics::PowerLawFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}};
}

json gap_summary(const Table& g) {
  json out;
  const int cb = g.column("b"), cg = g.column("gap"), cs = g.column("lambda_max_b_stderr");
  if (cb < 0 || cg < 0) throw CsvParseError("gap_scan.csv", 1, "missing b or gap column");
  std::vector<std::pair<double, double>> pts;
  int excluded = 0;
  bool monotone = true;
  std::optional<double> prev_gap, prev_se;
  for (const auto& r : g.rows) {
    if (!r[cb] || !r[cg] || !std::isfinite(*r[cg])) {
      ++excluded;
      continue;
    }
    const double se = cs >= 0 && r[cs] ? *r[cs] : 0.0;
    if (prev_gap && *r[cg] > *prev_gap + 2.0 * std::hypot(se, *prev_se)) monotone = false;
    prev_gap = *r[cg];
    prev_se = se;
    if (*r[cg] > 0.0) pts.emplace_back(*r[cb], *r[cg]);
    else ++excluded;
  }
  out["points"] = pts.size();
  out["excluded"] = excluded;
  out["monotone_non_increasing"] = monotone;
  try {
    out["fit"] = fit_json(numerics::powerlaw_fit(pts));
  } catch (const std::exception&) {
    out["fit"] = nullptr;
  }
  try {
    const auto two = numerics::two_segment_powerlaw_fit(pts);
    out["two_segment"] = {{"knee_b", pts[two.knee].first},
                          {"left", fit_json(two.left)},
                          {"right", fit_json(two.right)}};
  } catch (const std::exception&) {
    out["two_segment"] = nullptr;
  }
  return out;
}

std::pair<int, double> catapult_settings(const fs::path& dir) {
  std::ifstream f(dir / "spec.json", std::ios::binary);
  if (!f) return {20, 3.0};
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    const ExperimentSpec s = parse_spec(ss.str());
    return {s.training.catapult_window, s.training.catapult_factor};
  } catch (const std::exception&) {
    return {20, 3.0};
  }
}

}  // namespace

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<double> Table::present(const std::string& name) const {
  std::vector<double> v;
  const int c = column(name);
  if (c < 0) return v;
  for (const auto& r : rows)
    if (r[c]) v.push_back(*r[c]);
  return v;
}

Table read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CsvParseError(path, 0, "cannot open file");
  Table t;
  std::string line;
  long lineno = 0;
  if (!std::getline(f, line)) throw CsvParseError(path, 1, "empty file, header expected");
  ++lineno;
  t.columns = split(line);
  for (const auto& c : t.columns)
    if (c.empty()) throw CsvParseError(path, 1, "empty column name in header");
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) throw CsvParseError(path, lineno, "blank line");
    const auto fields = split(line);
    if (fields.size() != t.columns.size())
      throw CsvParseError(path, lineno, "expected " + std::to_string(t.columns.size()) + " fields, found " +
                                            std::to_string(fields.size()));
    std::vector<std::optional<double>> row;
    for (std::size_t i = 0; i < fields.size(); ++i)
      row.push_back(parse_cell(fields[i], path, lineno, t.columns[i]));
    t.rows.push_back(std::move(row));
  }
  const int cs = t.column("step");
  if (cs >= 0) {
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (!t.rows[i][cs]) throw CsvParseError(path, static_cast<long>(i) + 2, "missing step");
      if (i > 0 && !(*t.rows[i][cs] > *t.rows[i - 1][cs]))
        throw CsvParseError(path, static_cast<long>(i) + 2, "steps must be strictly increasing");
    }
  }
  return t;
}

const std::vector<std::string>& metrics_csv_columns() {
  static const std::vector<std::string> cols = [] {
    auto c = metrics::report_columns();
    for (const char* extra : {"loss", "eta", "batch_size", "diverged"}) c.push_back(extra);
    return c;
  }();
  return cols;
}

json stationary_estimates(const Table& t, double burn) {
  json out;
  const int cs = t.column("step");
  const long last = t.rows.empty() ? 0 : static_cast<long>(*t.rows.back()[cs]);
  const double start = burn * static_cast<double>(last);
  auto ratio = [&](const char* metric, const char* weight) -> json {
    const int cm = t.column(metric), cw = t.column(weight);
    if (cm < 0 || cw < 0) return nullptr;
    double num = 0.0, den = 0.0;
    int used = 0;
    for (const auto& r : t.rows) {
      if (*r[cs] < start || !r[cm] || !r[cw]) continue;
      num += *r[cm] * *r[cw];
      den += *r[cw];
      ++used;
    }
    if (used == 0 || !(den > 0.0)) return nullptr;
    return num / den;
  };
  out["gni"] = ratio("gni", "grad_full_sq");
  out["batch_sharpness"] = ratio("batch_sharpness", "grad_batch_sq_mean");
  out["ias"] = ratio("ias", "grad_batch_sq_mean");
  out["burn_in_fraction"] = burn;
  return out;
}

json summarize(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const bool has_metrics = fs::exists(dir / "metrics.csv");
  const bool has_gap = fs::exists(dir / "gap_scan.csv");
  if (!has_metrics && !has_gap) throw std::runtime_error("no metrics.csv or gap_scan.csv in " + run_dir);
  json out;
  if (has_metrics) {
    const std::string path = (dir / "metrics.csv").string();
    const Table t = read_csv(path);
    for (const char* c : {"step", "loss", "eta", "batch_size", "diverged"})
      if (t.column(c) < 0) throw CsvParseError(path, 1, std::string("missing column '") + c + "'");
    if (t.rows.empty()) throw CsvParseError(path, 2, "no data rows");
    const int cs = t.column("step"), cl = t.column("loss"), ce = t.column("eta"), cd = t.column("diverged");
    bool diverged = false;
    for (const auto& r : t.rows) diverged = diverged || (r[cd] && *r[cd] != 0.0);
    const auto& last = t.rows.back();
    out["rows"] = t.rows.size();
    out["final_step"] = static_cast<long>(*last[cs]);
    out["diverged"] = diverged;
    const double two_over_eta = last[ce] ? 2.0 / *last[ce] : std::numeric_limits<double>::quiet_NaN();
    out["two_over_eta_final"] = opt_json(two_over_eta);

    json plateau, normalized;
    for (const char* m : kMetricNames) {
      std::optional<double> v;
      if (!diverged) v = nn::plateau_median(t.present(m));
      plateau[m] = opt_json(v);
      normalized[m] = v ? opt_json(*v / two_over_eta) : json(nullptr);
    }
    {
      std::vector<double> losses;
      for (const auto& r : t.rows)
        if (r[cl] && !(r[cd] && *r[cd] != 0.0)) losses.push_back(*r[cl]);
      plateau["loss"] = diverged ? json(nullptr) : opt_json(nn::plateau_median(losses));
    }
    out["plateau"] = plateau;
    out["plateau_over_two_over_eta"] = normalized;
    out["stationary"] = diverged ? json(nullptr) : stationary_estimates(t);

    const auto [window, factor] = catapult_settings(dir);
    std::vector<double> series;
    std::vector<long> steps;
    for (const auto& r : t.rows) {
      if (*r[cs] < 1 || !r[cl]) continue;
      series.push_back(*r[cl]);
      steps.push_back(static_cast<long>(*r[cs]));
    }
    json cats = json::array();
    for (const auto& e : nn::detect_catapult(series, window, factor, 0))
      cats.push_back({{"start_step", steps[e.start_step]}, {"peak_step", steps[e.peak_step]},
                      {"peak_ratio", opt_json(e.peak_ratio)}});
    out["catapult_count"] = cats.size();
    out["catapults"] = cats;
  }
  if (fs::exists(dir / "probe.json")) {
    std::ifstream f(dir / "probe.json");
    out["oscillation"] = json::parse(f);
  }
  if (has_gap) out["gap_scan"] = gap_summary(read_csv((dir / "gap_scan.csv").string()));
  return out;
}

json write_summary(const std::string& run_dir) {
  const json s = summarize(run_dir);
  std::ofstream f(fs::path(run_dir) / "summary.json", std::ios::binary | std::ios::trunc);
  f << s.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write summary.json in " + run_dir);
  return s;
}

std::string emit_plotdata(const std::string& run_dir, const std::vector<std::string>& names,
                          bool normalize) {
  const std::string path = (fs::path(run_dir) / "metrics.csv").string();
  const Table t = read_csv(path);
  std::vector<int> cols;
  for (const auto& n : names) {
    const int c = t.column(n);
    if (c < 0 || n == "step") throw std::invalid_argument("unknown metric '" + n + "'");
    cols.push_back(c);
  }
  const int cs = t.column("step"), ce = t.column("eta");
  if (normalize && ce < 0) throw CsvParseError(path, 1, "missing eta column");
  std::string out = "step,metric,value\n";
  for (const auto& r : t.rows) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto& v = r[cols[k]];
      if (!v) continue;
      double x = *v;
      if (normalize) {
        if (!r[ce]) continue;
        x /= 2.0 / *r[ce];
      }
      out += std::to_string(static_cast<long>(*r[cs])) + "," + names[k] + "," + metrics::format_double(x) + "\n";
    }
  }
  return out;
}

}  // namespace eoss::harness
