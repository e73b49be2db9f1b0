#include "eoss/harness/runner.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "eoss/harness/artifacts.h"
#include "eoss/tiny_nn/checkpoint.h"
#include "rng.h"

namespace eoss::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using Eigen::VectorXd;

namespace {

constexpr std::uint64_t kQuadMetricTag = 0x51a7;

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

std::unique_ptr<quad::QuadraticEnsemble> make_ensemble(const QuadraticSpec& q) {
  using quad::QuadraticEnsemble;
  if (q.kind == "gaussian_means_1d")
    return std::make_unique<QuadraticEnsemble>(quad::make_1d_gaussian_means(q.n, q.seed));
  if (q.kind == "means_1d") return std::make_unique<QuadraticEnsemble>(quad::make_1d_from_means(q.means));
  if (q.kind == "random_psd")
    return std::make_unique<QuadraticEnsemble>(quad::make_random_psd_ensemble(q.n, q.d, q.rank, q.scale, q.seed));
  return std::make_unique<QuadraticEnsemble>(quad::make_counterexample(q.alpha, q.gamma));
}

// A back end positioned at the start of one sweep cell.
class World {
 public:
  virtual ~World() = default;
  virtual metrics::TrainerHandle& trainer() = 0;
  virtual metrics::SharpnessReport measure(const metrics::MetricsRequest& req) = 0;
  virtual void save_checkpoint(const fs::path& p) const = 0;
};

class QuadWorld final : public World {
 public:
  QuadWorld(const ExperimentSpec& s, const Cell& c)
      : ens_(make_ensemble(s.quadratic)), oracle_(*ens_), seed_(c.seed), kind_(s.training.replacement) {
    VectorXd theta0;
    if (s.quadratic.theta0) {
      theta0 = Eigen::Map<const VectorXd>(s.quadratic.theta0->data(), s.quadratic.d);
    } else {
      theta0 = ens_->theta_star() + VectorXd::Ones(ens_->dim()) / std::sqrt(static_cast<double>(ens_->dim()));
    }
    trainer_ = std::make_unique<metrics::QuadraticTrainer>(*ens_, c.eta, quad::BatchMode{kind_, c.b}, theta0, c.seed);
  }

  metrics::TrainerHandle& trainer() override { return *trainer_; }

  metrics::SharpnessReport measure(const metrics::MetricsRequest& req) override {
    const long step = trainer_->steps_taken();
    const quad::BatchMode mode{kind_, trainer_->batch_size()};
    const std::uint64_t ms = detail::mix_seed(seed_, kQuadMetricTag + static_cast<std::uint64_t>(step));
    metrics::Indices step_batch;
    if (req.step_sharpness)
      step_batch = quad::sample_batch(ens_->size(), mode, seed_, static_cast<std::uint64_t>(step));
    return metrics::measure(oracle_, trainer_->theta(), mode, req, step, ms, step_batch, &warm_);
  }

  void save_checkpoint(const fs::path& p) const override {
    nn::RawCheckpoint c;
    c.activation_code = 2;
    c.dims = {static_cast<std::uint64_t>(ens_->dim())};
    c.flat = trainer_->theta();
    nn::write_raw_checkpoint(p.string(), c);
  }

 private:
  std::unique_ptr<quad::QuadraticEnsemble> ens_;
  metrics::QuadraticOracle oracle_;
  std::uint64_t seed_;
  quad::Replacement kind_;
  std::unique_ptr<metrics::QuadraticTrainer> trainer_;
  VectorXd warm_;
};

nn::TrainConfig train_config(const ExperimentSpec& s, const Cell& c) {
  nn::TrainConfig t;
  t.eta = c.eta;
  t.mode = {s.training.replacement, c.b};
  t.steps = s.training.steps;
  t.seed = c.seed;
  t.cadence = s.metrics.cadence;
  t.noise_mode = s.mlp.noise_mode;
  t.init_scale = c.init_scale;
  t.noise_refresh = s.mlp.noise_refresh;
  t.noise_scale = s.mlp.noise_scale;
  t.blowup = s.training.blowup;
  t.catapult_window = s.training.catapult_window;
  t.catapult_factor = s.training.catapult_factor;
  return t;
}

nn::MlpParams initial_params(const ExperimentSpec& s, const Cell& c) {
  return nn::init_mlp(s.mlp.dims, s.mlp.activation, c.init_scale, s.mlp.init_seed.value_or(c.seed));
}

class MlpWorld final : public World {
 public:
  MlpWorld(const ExperimentSpec& s, const Cell& c)
      : data_(nn::make_synthetic_dataset(s.mlp.dataset)),
        init_(initial_params(s, c)) {
    trainer_ = std::make_unique<nn::MlpTrainer>(init_.shape, data_, init_.flat, train_config(s, c));
  }

  metrics::TrainerHandle& trainer() override { return *trainer_; }
  metrics::SharpnessReport measure(const metrics::MetricsRequest& req) override {
    return trainer_->measure_now(req);
  }
  void save_checkpoint(const fs::path& p) const override {
    nn::write_checkpoint(p.string(), nn::MlpParams{init_.shape, trainer_->theta()});
  }

  const nn::Dataset& data() const { return data_; }
  const nn::MlpParams& init() const { return init_; }
  const VectorXd& theta() const { return trainer_->theta(); }

 private:
  nn::Dataset data_;
  nn::MlpParams init_;
  std::unique_ptr<nn::MlpTrainer> trainer_;
};

std::unique_ptr<World> make_world(const ExperimentSpec& s, const Cell& c) {
  if (s.backend == Backend::kQuadratic) return std::make_unique<QuadWorld>(s, c);
  return std::make_unique<MlpWorld>(s, c);
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  out += '\n';
  return out;
}

std::string row_line(long step, const metrics::SharpnessReport* r, double loss, double eta, int b,
                     bool diverged) {
  std::vector<std::string> f;
  if (r != nullptr) {
    f = metrics::report_fields(*r);
  } else {
    f.assign(metrics::report_columns().size(), "");
    f[0] = std::to_string(step);
  }
  f.push_back(metrics::format_double(loss));
  f.push_back(metrics::format_double(eta));
  f.push_back(std::to_string(b));
  f.push_back(diverged ? "1" : "0");
  return csv_line(f);
}

json cell_json(const Cell& c) {
  return json{{"eta", c.eta}, {"b", c.b}, {"seed", c.seed}, {"init_scale", c.init_scale}};
}

struct LoopResult {
  bool diverged = false;
  long steps_completed = 0;
};

// Trains one cell and writes metrics.csv, events.json, checkpoint.bin.
LoopResult run_loop(World& w, const ExperimentSpec& s, const Cell& cell, const fs::path& dir) {
  metrics::TrainerHandle& tr = w.trainer();
  const metrics::MetricsRequest req = metrics_request(s.metrics);
  std::string csv = csv_line(metrics_csv_columns());

  std::vector<bool> applied(s.schedule.size(), false);
  std::size_t next = 0;
  long step = 0;
  auto apply_events = [&]() {
    while (next < s.schedule.size() && s.schedule[next].at_step == step) {
      const auto& e = s.schedule[next];
      if (e.action == nn::ScheduleEvent::Action::kSetEta) tr.set_eta(e.value);
      else tr.set_batch_size(static_cast<int>(e.value));
      applied[next++] = true;
    }
  };
  auto metric_row = [&](double loss) {
    const metrics::SharpnessReport r = w.measure(req);
    csv += row_line(step, &r, loss, tr.eta(), tr.batch_size(), false);
  };

  const double loss0 = tr.full_loss();
  const double limit = s.training.blowup * std::max(loss0, 1e-300);
  apply_events();
  metric_row(loss0);
  LoopResult res;
  while (step < s.training.steps) {
    tr.step();
    ++step;
    const double loss = tr.loss_history().back();
    if (!std::isfinite(loss) || loss > limit) {
      res.diverged = true;
      csv += row_line(step, nullptr, loss, tr.eta(), tr.batch_size(), true);
      break;
    }
    apply_events();
    if (step % s.metrics.cadence == 0 || step == s.training.steps) metric_row(loss);
    else if (step % s.training.log_every == 0) csv += row_line(step, nullptr, loss, tr.eta(), tr.batch_size(), false);
  }
  res.steps_completed = step;
  write_text(dir / "metrics.csv", csv);

  json events;
  events["cell"] = cell_json(cell);
  events["diverged"] = res.diverged;
  events["steps_completed"] = res.steps_completed;
  json sched = json::array();
  for (std::size_t i = 0; i < s.schedule.size(); ++i) {
    const auto& e = s.schedule[i];
    sched.push_back({{"at_step", e.at_step}, {"action", nn::to_string(e.action)}, {"value", e.value},
                     {"applied", static_cast<bool>(applied[i])}});
  }
  events["schedule"] = sched;
  json cats = json::array();
  for (const auto& c : nn::detect_catapult(tr.loss_history(), s.training.catapult_window,
                                           s.training.catapult_factor, 1))
    cats.push_back({{"start_step", c.start_step}, {"peak_step", c.peak_step}, {"peak_ratio", c.peak_ratio}});
  events["catapults"] = cats;
  write_text(dir / "events.json", events.dump(2) + "\n");
  w.save_checkpoint(dir / "checkpoint.bin");
  return res;
}

fs::path output_root(const ExperimentSpec& s, const RunOptions& o) {
  return fs::path(o.output_dir.value_or(s.output_dir));
}

template <class Job>
void run_parallel(std::size_t count, int parallelism, Job job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(count, parallelism));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < count; i = next++) job(i);
  };
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

void record_failure(CellOutcome& out, const std::string& what) {
  out.status = CellStatus::kFailed;
  out.error = what;
  try {
    fs::create_directories(out.dir);
    write_text(fs::path(out.dir) / "error.json", json{{"error", what}}.dump(2) + "\n");
  } catch (...) {
  }
}

void write_gap_csv(const fs::path& p, const std::vector<std::string>& cols,
                   const std::vector<std::vector<std::string>>& rows) {
  std::string s = csv_line(cols);
  for (const auto& r : rows) s += csv_line(r);
  write_text(p, s);
}

}  // namespace

std::string to_string(CellStatus s) {
  switch (s) {
    case CellStatus::kOk: return "ok";
    case CellStatus::kDiverged: return "diverged";
    case CellStatus::kFailed: return "failed";
  }
  return "?";
}

int default_parallelism() {
  if (const char* env = std::getenv("EOSS_PARALLELISM")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min(v, 1024L));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<CellOutcome> run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  const std::vector<Cell> cells = expand_sweep(spec);
  const fs::path root = output_root(spec, options);
  std::vector<CellOutcome> out(cells.size());
  run_parallel(cells.size(), options.parallelism > 0 ? options.parallelism : default_parallelism(),
               [&](std::size_t i) {
                 CellOutcome& o = out[i];
                 o.cell = cells[i];
                 o.dir = (root / cells[i].rel_dir).string();
                 try {
                   const fs::path dir(o.dir);
                   fs::create_directories(dir);
                   fs::remove(dir / "error.json");
                   fs::remove(dir / "probe.json");
                   write_text(dir / "spec.json", spec.raw_text);
                   auto world = make_world(spec, cells[i]);
                   const LoopResult r = run_loop(*world, spec, cells[i], dir);
                   o.status = r.diverged ? CellStatus::kDiverged : CellStatus::kOk;
                   if (spec.gap_scan && spec.gap_scan->mode == "static" && !r.diverged) {
                     auto* mw = dynamic_cast<MlpWorld*>(world.get());
                     const auto rows = nn::gap_scan_static(mw->init().shape, mw->theta(), mw->data(),
                                                           spec.gap_scan->b_list, spec.gap_scan->num_batches,
                                                           detail::mix_seed(cells[i].seed, 0x6a95),
                                                           {spec.metrics.max_iters, spec.metrics.full_tol, 0, {}});
                     std::vector<std::vector<std::string>> lines;
                     for (const auto& g : rows)
                       lines.push_back({std::to_string(g.b), metrics::format_double(g.lambda_max_b),
                                        metrics::format_double(g.lambda_max_b_stderr),
                                        metrics::format_double(g.lambda_max), metrics::format_double(g.gap),
                                        std::to_string(g.failed)});
                     write_gap_csv(dir / "gap_scan.csv",
                                   {"b", "lambda_max_b", "lambda_max_b_stderr", "lambda_max", "gap", "failed"}, lines);
                   }
                   write_summary(o.dir);
                 } catch (const std::exception& e) {
                   record_failure(o, e.what());
                 }
               });
  return out;
}

std::vector<CellOutcome> scan_gaps(const ExperimentSpec& spec, const RunOptions& options) {
  if (!spec.gap_scan) throw SpecError("gap_scan", "required by scan-gaps");
  if (spec.gap_scan->mode == "static") return run_experiment(spec, options);

  // Trained scans: b is the scan axis, so cells collapse over it.
  std::vector<Cell> cells;
  for (Cell c : expand_sweep(spec)) {
    const std::string key = "/b=" + std::to_string(c.b);
    const auto pos = c.rel_dir.find(key + "/");
    if (pos != std::string::npos) c.rel_dir.erase(pos, key.size());
    if (std::none_of(cells.begin(), cells.end(), [&](const Cell& o) { return o.rel_dir == c.rel_dir; }))
      cells.push_back(c);
  }
  const fs::path root = output_root(spec, options);
  std::vector<CellOutcome> out(cells.size());
  run_parallel(cells.size(), options.parallelism > 0 ? options.parallelism : default_parallelism(),
               [&](std::size_t i) {
                 CellOutcome& o = out[i];
                 o.cell = cells[i];
                 o.dir = (root / cells[i].rel_dir).string();
                 try {
                   const fs::path dir(o.dir);
                   fs::create_directories(dir);
                   write_text(dir / "spec.json", spec.raw_text);
                   const nn::Dataset data = nn::make_synthetic_dataset(spec.mlp.dataset);
                   const nn::MlpParams init = initial_params(spec, cells[i]);
                   const auto rows = nn::gap_scan_trained(init, data, train_config(spec, cells[i]),
                                                          spec.gap_scan->b_list, metrics_request(spec.metrics),
                                                          spec.gap_scan->num_batches);
                   std::vector<std::vector<std::string>> lines;
                   bool any_div = false;
                   for (const auto& g : rows) {
                     any_div = any_div || g.diverged;
                     lines.push_back({std::to_string(g.b), metrics::format_double(g.final_lambda_max),
                                      metrics::format_double(g.final_batch_sharpness),
                                      metrics::format_double(g.final_lambda_max_b),
                                      metrics::format_double(g.final_gap), g.diverged ? "1" : "0"});
                   }
                   write_gap_csv(dir / "gap_scan.csv",
                                 {"b", "final_lambda_max", "final_batch_sharpness", "final_lambda_max_b", "gap",
                                  "diverged"},
                                 lines);
                   write_summary(o.dir);
                   o.status = any_div ? CellStatus::kDiverged : CellStatus::kOk;
                 } catch (const std::exception& e) {
                   record_failure(o, e.what());
                 }
               });
  return out;
}

json classify_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const ExperimentSpec spec = load_spec((dir / "spec.json").string());
  std::ifstream ef(dir / "events.json");
  if (!ef) throw std::runtime_error("missing events.json in " + run_dir);
  const json events = json::parse(ef);
  if (events.at("diverged").get<bool>()) throw std::runtime_error("cannot probe a diverged run");
  Cell cell;
  cell.eta = events.at("cell").at("eta").get<double>();
  cell.b = events.at("cell").at("b").get<int>();
  cell.seed = events.at("cell").at("seed").get<std::uint64_t>();
  cell.init_scale = events.at("cell").at("init_scale").get<double>();

  const Table t = read_csv((dir / "metrics.csv").string());
  const int c_step = t.column("step"), c_loss = t.column("loss"), c_eta = t.column("eta"),
            c_b = t.column("batch_size");
  if (c_step < 0 || c_loss < 0 || c_eta < 0 || c_b < 0 || t.rows.empty())
    throw CsvParseError((dir / "metrics.csv").string(), 1, "missing step/loss/eta/batch_size columns");
  metrics::TrainerState st;
  st.params = nn::read_raw_checkpoint((dir / "checkpoint.bin").string()).flat;
  const auto& last = t.rows.back();
  st.step = static_cast<long>(*last[c_step]);
  st.eta = *last[c_eta];
  st.batch_size = static_cast<int>(*last[c_b]);
  for (const auto& r : t.rows)
    if (r[c_step] && *r[c_step] >= 1 && r[c_loss]) st.loss_history.push_back(*r[c_loss]);

  auto world = make_world(spec, cell);
  world->trainer().restore(st);
  const ProbeSpec ps = spec.probe.value_or(ProbeSpec{2.0, std::nullopt, 200, 3.0, 20});
  metrics::ProbeConfig pc;
  pc.eta_factor = ps.eta_factor;
  pc.new_b = ps.new_b;
  pc.probe_steps = ps.probe_steps;
  pc.catapult_factor = ps.catapult_factor;
  pc.window = ps.window;
  const metrics::OscillationVerdict v = metrics::classify_oscillation(world->trainer(), pc);

  json out;
  out["kind"] = metrics::to_string(v.kind);
  out["peak_loss_ratio"] = v.peak_loss_ratio;
  out["restabilized"] = v.restabilized;
  out["batch_sharpness_before"] = v.batch_sharpness_before;
  out["batch_sharpness_after"] = v.batch_sharpness_after ? json(*v.batch_sharpness_after) : json(nullptr);
  out["threshold"] = v.threshold;
  out["amplitude_before"] = v.amplitude_before;
  out["amplitude_after"] = v.amplitude_after;
  out["probe"] = {{"eta_factor", ps.eta_factor ? json(*ps.eta_factor) : json(nullptr)},
                  {"new_b", ps.new_b ? json(*ps.new_b) : json(nullptr)},
                  {"probe_steps", ps.probe_steps},
                  {"catapult_factor", ps.catapult_factor},
                  {"window", ps.window}};
  write_text(dir / "probe.json", out.dump(2) + "\n");
  write_summary(run_dir);
  return out;
}

}  // namespace eoss::harness
