#pragma once

// Executes experiment specs: one run directory per sweep cell, cells run as
// independent jobs.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eoss/harness/spec.h"

namespace eoss::harness {

enum class CellStatus { kOk, kDiverged, kFailed };
std::string to_string(CellStatus s);

struct CellOutcome {
  Cell cell;
  std::string dir;
  CellStatus status = CellStatus::kOk;
  std::string error;
};

struct RunOptions {
  std::optional<std::string> output_dir;  // overrides the spec's output_dir
  int parallelism = 0;                    // 0: EOSS_PARALLELISM, else hardware
};

// EOSS_PARALLELISM when set to a positive integer, else the core count.
int default_parallelism();

std::vector<CellOutcome> run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Needs a gap_scan section. Static scans train each cell and scan its final
/// parameters; trained scans run one training per listed b for every
/// (eta, init_scale, seed) combination.
std::vector<CellOutcome> scan_gaps(const ExperimentSpec& spec, const RunOptions& options = {});

/// Restores the run's final state and perturbs it per the spec's probe
/// section (default: double eta). Writes probe.json and returns it.
nlohmann::json classify_run(const std::string& run_dir);

}  // namespace eoss::harness
