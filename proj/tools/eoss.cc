// Command-line front end for the experiment harness.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "eoss/harness/artifacts.h"
#include "eoss/harness/runner.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitInternal = 4;

using nlohmann::json;
using namespace eoss::harness;

int report_cells(const std::vector<CellOutcome>& cells) {
  bool failed = false, diverged = false;
  for (const auto& c : cells) {
    std::cout << to_string(c.status) << "\t" << c.dir;
    if (!c.error.empty()) std::cout << "\t" << c.error;
    std::cout << "\n";
    failed = failed || c.status == CellStatus::kFailed;
    diverged = diverged || c.status == CellStatus::kDiverged;
  }
  return failed ? kExitInternal : diverged ? kExitDiverged : kExitOk;
}

template <class F>
int guarded(F body) {
  try {
    return body();
  } catch (const SpecError& e) {
    std::cerr << json{{"error", "validation"}, {"field", e.field()}, {"message", e.what()}}.dump() << "\n";
    return kExitValidation;
  } catch (const CsvParseError& e) {
    std::cerr << json{{"error", "parse"}, {"file", e.file()}, {"line", e.line()}, {"message", e.what()}}.dump()
              << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return kExitInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-of-stochastic-stability experiment harness"};
  app.require_subcommand(1);

  std::string spec_path, run_dir, out_dir, output_file;
  int jobs = 0;
  std::vector<std::string> metric_names;
  bool normalize = false;

  auto* run = app.add_subcommand("run", "Run every sweep cell of a spec");
  run->add_option("spec", spec_path, "Spec file (JSON)")->required();
  run->add_option("--out", out_dir, "Override the spec's output_dir");
  run->add_option("--jobs", jobs, "Parallel cells (default: EOSS_PARALLELISM or core count)");

  auto* plot = app.add_subcommand("plotdata", "Long-format step,metric,value CSV");
  plot->add_option("run_dir", run_dir)->required();
  plot->add_option("--metrics", metric_names, "Metric columns")->delimiter(',');
  plot->add_flag("--normalize", normalize, "Divide by 2/eta of each row");
  plot->add_option("--output", output_file, "Write to a file instead of stdout");

  auto* summ = app.add_subcommand("summarize", "Recompute summary.json from the CSV files");
  summ->add_option("run_dir", run_dir)->required();

  auto* gaps = app.add_subcommand("scan-gaps", "Batch-size gap scan of a spec with a gap_scan section");
  gaps->add_option("spec", spec_path)->required();
  gaps->add_option("--out", out_dir, "Override the spec's output_dir");
  gaps->add_option("--jobs", jobs);

  auto* cls = app.add_subcommand("classify", "Probe a finished run and classify its oscillation");
  cls->add_option("run_dir", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  RunOptions opts;
  if (!out_dir.empty()) opts.output_dir = out_dir;
  opts.parallelism = jobs;

  if (*run) return guarded([&] { return report_cells(run_experiment(load_spec(spec_path), opts)); });
  if (*gaps) return guarded([&] { return report_cells(scan_gaps(load_spec(spec_path), opts)); });
  if (*summ) return guarded([&] {
      std::cout << write_summary(run_dir).dump(2) << "\n";
      return kExitOk;
    });
  if (*cls) return guarded([&] {
      std::cout << classify_run(run_dir).dump(2) << "\n";
      return kExitOk;
    });
  if (*plot) return guarded([&] {
      const std::string csv = emit_plotdata(run_dir, metric_names, normalize);
      if (output_file.empty()) {
        std::cout << csv;
      } else {
        std::ofstream f(output_file, std::ios::binary | std::ios::trunc);
        f << csv;
        if (!f) throw std::runtime_error("cannot write " + output_file);
      }
      return kExitOk;
    });
  return kExitInternal;
}
