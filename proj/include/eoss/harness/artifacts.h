#pragma once

// Reading run directories back: the metrics CSV, derived summaries, and
// long-format plot data.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace eoss::harness {

class CsvParseError : public std::runtime_error {
 public:
  CsvParseError(std::string file, long line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}
  const std::string& file() const { return file_; }
  long line() const { return line_; }

 private:
  std::string file_;
  long line_;
};

/// A numeric CSV with a header row. Empty cells are absent values; "nan",
/// "inf" and "-inf" are accepted.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;

  int column(const std::string& name) const;  // -1 when absent
  std::vector<double> present(const std::string& name) const;
};

Table read_csv(const std::string& path);

// Metrics CSV header: report columns, then loss, eta, batch_size, diverged.
const std::vector<std::string>& metrics_csv_columns();

/// Summary of a run directory computed from its CSV files alone (plus the
/// oscillation verdict in probe.json when present).
nlohmann::json summarize(const std::string& run_dir);

// Writes summary.json (2-space indent, trailing newline) and returns it.
nlohmann::json write_summary(const std::string& run_dir);

/// Long-format step,metric,value rows. With `normalize`, values are divided
/// by 2/eta of the same row. Throws std::invalid_argument for unknown names.
std::string emit_plotdata(const std::string& run_dir, const std::vector<std::string>& metrics,
                          bool normalize);

// Stationary ratio-of-means estimates over rows past the burn-in fraction.
nlohmann::json stationary_estimates(const Table& t, double burn_in_fraction = 0.5);

}  // namespace eoss::harness
