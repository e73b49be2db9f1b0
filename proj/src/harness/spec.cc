#include "eoss/harness/spec.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace eoss::harness {

using nlohmann::json;

namespace {

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown fields.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SpecError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = get(key);
    if (v == nullptr) throw SpecError(field(key), "required field missing");
    return *v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw SpecError(field(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

double as_double(const json& v, const std::string& f) {
  if (!v.is_number()) throw SpecError(f, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw SpecError(f, "must be finite");
  return x;
}

long as_long(const json& v, const std::string& f) {
  if (!v.is_number_integer()) throw SpecError(f, "expected an integer");
  return v.get<long>();
}

std::string as_string(const json& v, const std::string& f) {
  if (!v.is_string()) throw SpecError(f, "expected a string");
  return v.get<std::string>();
}

template <class F>
auto as_list(const json& v, const std::string& f, F elem) {
  if (!v.is_array()) throw SpecError(f, "expected a list");
  std::vector<decltype(elem(v, f))> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(elem(v[i], f + "[" + std::to_string(i) + "]"));
  return out;
}

void positive(double x, const std::string& f) {
  if (!(x > 0.0)) throw SpecError(f, "must be positive");
}

void at_least(long x, long lo, const std::string& f) {
  if (x < lo) throw SpecError(f, "must be >= " + std::to_string(lo));
}

template <class T>
void opt_set(Obj& o, const std::string& key, T& dst, T (*conv)(const json&, const std::string&)) {
  if (const json* v = o.get(key)) dst = conv(*v, o.field(key));
}

int as_int(const json& v, const std::string& f) {
  const long x = as_long(v, f);
  if (x > 1'000'000'000L || x < -1'000'000'000L) throw SpecError(f, "out of range");
  return static_cast<int>(x);
}

std::uint64_t as_u64(const json& v, const std::string& f) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
    throw SpecError(f, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

void parse_quadratic(Obj& o, QuadraticSpec& q) {
  opt_set(o, "kind", q.kind, as_string);
  static const std::set<std::string> kinds{"gaussian_means_1d", "means_1d", "random_psd", "counterexample"};
  if (!kinds.count(q.kind))
    throw SpecError(o.field("kind"), "must be one of gaussian_means_1d, means_1d, random_psd, counterexample");
  opt_set(o, "n", q.n, as_int);
  opt_set(o, "d", q.d, as_int);
  opt_set(o, "rank", q.rank, as_int);
  opt_set(o, "scale", q.scale, as_double);
  opt_set(o, "alpha", q.alpha, as_double);
  opt_set(o, "gamma", q.gamma, as_double);
  opt_set(o, "seed", q.seed, as_u64);
  if (const json* v = o.get("means")) q.means = as_list(*v, o.field("means"), as_double);
  if (const json* v = o.get("theta0")) q.theta0 = as_list(*v, o.field("theta0"), as_double);
  o.finish();

  if (q.kind == "means_1d") {
    if (q.means.empty()) throw SpecError(o.field("means"), "required for kind means_1d");
    q.n = static_cast<int>(q.means.size());
    q.d = 1;
  } else if (q.kind == "gaussian_means_1d") {
    at_least(q.n, 1, o.field("n"));
    q.d = 1;
  } else if (q.kind == "random_psd") {
    at_least(q.n, 1, o.field("n"));
    at_least(q.d, 1, o.field("d"));
    at_least(q.rank, 1, o.field("rank"));
    if (q.rank > q.d) throw SpecError(o.field("rank"), "must not exceed d");
    positive(q.scale, o.field("scale"));
  } else {
    q.n = 2;
    q.d = 2;
  }
  if (q.theta0 && static_cast<int>(q.theta0->size()) != q.d)
    throw SpecError(o.field("theta0"), "length must equal d = " + std::to_string(q.d));
}

void parse_mlp(Obj& o, MlpSpec& m) {
  if (const json* v = o.get("dims")) m.dims = as_list(*v, o.field("dims"), as_int);
  if (m.dims.size() < 3) throw SpecError(o.field("dims"), "need input, >= 1 hidden, and output widths");
  for (std::size_t i = 0; i < m.dims.size(); ++i) at_least(m.dims[i], 1, o.field("dims") + "[" + std::to_string(i) + "]");
  if (const json* v = o.get("activation")) {
    try {
      m.activation = nn::parse_activation(as_string(*v, o.field("activation")));
    } catch (const InvalidArgument& e) {
      throw SpecError(o.field("activation"), "must be tanh, relu or identity");
    }
  }
  if (const json* v = o.get("noise_mode")) {
    try {
      m.noise_mode = nn::parse_noise_mode(as_string(*v, o.field("noise_mode")));
    } catch (const InvalidArgument&) {
      throw SpecError(o.field("noise_mode"), "must be none, sgd, anisotropic-sampling, diagonal or isotropic");
    }
  }
  opt_set(o, "noise_refresh", m.noise_refresh, as_int);
  at_least(m.noise_refresh, 1, o.field("noise_refresh"));
  opt_set(o, "noise_scale", m.noise_scale, as_double);
  if (m.noise_scale < 0) throw SpecError(o.field("noise_scale"), "must be >= 0");
  if (const json* v = o.get("init_seed")) m.init_seed = as_u64(*v, o.field("init_seed"));
  if (const json* v = o.get("dataset")) {
    Obj d(*v, o.field("dataset"));
    auto& ds = m.dataset;
    if (const json* k = d.get("kind")) {
      try {
        ds.kind = nn::parse_dataset_kind(as_string(*k, d.field("kind")));
      } catch (const InvalidArgument&) {
        throw SpecError(d.field("kind"), "must be blobs, easy-separable or noisy-labels");
      }
    }
    opt_set(d, "n", ds.n, as_int);
    opt_set(d, "d_in", ds.d_in, as_int);
    opt_set(d, "classes", ds.classes, as_int);
    opt_set(d, "spread", ds.spread, as_double);
    opt_set(d, "label_noise", ds.label_noise, as_double);
    opt_set(d, "seed", ds.seed, as_u64);
    d.finish();
    at_least(ds.n, 1, d.field("n"));
    at_least(ds.classes, 2, d.field("classes"));
    if (ds.spread < 0) throw SpecError(d.field("spread"), "must be >= 0");
    if (ds.label_noise < 0 || ds.label_noise > 1) throw SpecError(d.field("label_noise"), "must lie in [0, 1]");
  } else {
    m.dataset.d_in = m.dims.front();
    m.dataset.classes = m.dims.back();
  }
  o.finish();
  if (m.dataset.d_in != m.dims.front())
    throw SpecError(o.field("dataset.d_in"), "must equal dims[0] = " + std::to_string(m.dims.front()));
  if (m.dataset.classes != m.dims.back())
    throw SpecError(o.field("dataset.classes"), "must equal the output width " + std::to_string(m.dims.back()));
  if (m.dataset.kind == nn::DatasetKind::kEasySeparable && m.dataset.classes > m.dataset.d_in)
    throw SpecError(o.field("dataset.classes"), "easy-separable needs classes <= d_in");
}

const std::set<std::string> kMetricNames{"batch_sharpness", "gni", "ias", "lambda_max",
                                         "lambda_max_b", "step_sharpness"};

}  // namespace

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

int sample_count(const ExperimentSpec& s) {
  return s.backend == Backend::kMlp ? s.mlp.dataset.n : s.quadratic.n;
}

metrics::MetricsRequest metrics_request(const MetricsSpec& m) {
  metrics::MetricsRequest r;
  auto on = [&](const char* k) { return std::find(m.which.begin(), m.which.end(), k) != m.which.end(); };
  r.batch_sharpness = on("batch_sharpness");
  r.gni = on("gni");
  r.ias = on("ias");
  r.lambda_max = on("lambda_max");
  r.lambda_max_b = on("lambda_max_b");
  r.step_sharpness = on("step_sharpness");
  r.num_batches = m.num_batches;
  r.full_power = {m.max_iters, m.full_tol, 0, {}};
  r.batch_power = {m.max_iters, m.batch_tol, 0, {}};
  return r;
}

ExperimentSpec parse_spec(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError("<root>", std::string("malformed JSON: ") + e.what());
  }
  ExperimentSpec s;
  s.raw_text = text;
  Obj o(root, "");

  s.name = as_string(o.require("name"), "name");
  if (s.name.empty() || s.name.find('/') != std::string::npos || s.name == "." || s.name == "..")
    throw SpecError("name", "must be a non-empty single path component");
  const std::string backend = as_string(o.require("backend"), "backend");
  if (backend == "quadratic") s.backend = Backend::kQuadratic;
  else if (backend == "mlp") s.backend = Backend::kMlp;
  else throw SpecError("backend", "must be quadratic or mlp");

  if (const json* v = o.get("quadratic")) {
    if (s.backend != Backend::kQuadratic) throw SpecError("quadratic", "only valid with backend quadratic");
    Obj q(*v, "quadratic");
    parse_quadratic(q, s.quadratic);
  } else if (s.backend == Backend::kQuadratic) {
    throw SpecError("quadratic", "required for backend quadratic");
  }
  if (const json* v = o.get("mlp")) {
    if (s.backend != Backend::kMlp) throw SpecError("mlp", "only valid with backend mlp");
    Obj m(*v, "mlp");
    parse_mlp(m, s.mlp);
  } else if (s.backend == Backend::kMlp) {
    throw SpecError("mlp", "required for backend mlp");
  }

  if (const json* v = o.get("training")) {
    Obj t(*v, "training");
    auto& tr = s.training;
    opt_set(t, "steps", tr.steps, as_long);
    at_least(tr.steps, 1, t.field("steps"));
    if (const json* r = t.get("replacement")) {
      const std::string k = as_string(*r, t.field("replacement"));
      if (k == "with") tr.replacement = quad::Replacement::kWith;
      else if (k == "without") tr.replacement = quad::Replacement::kWithout;
      else throw SpecError(t.field("replacement"), "must be with or without");
    }
    opt_set(t, "log_every", tr.log_every, as_long);
    at_least(tr.log_every, 1, t.field("log_every"));
    opt_set(t, "blowup", tr.blowup, as_double);
    if (!(tr.blowup > 1.0)) throw SpecError(t.field("blowup"), "must exceed 1");
    opt_set(t, "catapult_window", tr.catapult_window, as_int);
    at_least(tr.catapult_window, 3, t.field("catapult_window"));
    opt_set(t, "catapult_factor", tr.catapult_factor, as_double);
    if (!(tr.catapult_factor > 1.0)) throw SpecError(t.field("catapult_factor"), "must exceed 1");
    t.finish();
  }

  if (const json* v = o.get("metrics")) {
    Obj m(*v, "metrics");
    auto& ms = s.metrics;
    if (const json* w = m.get("which")) {
      ms.which = as_list(*w, m.field("which"), as_string);
      for (std::size_t i = 0; i < ms.which.size(); ++i)
        if (!kMetricNames.count(ms.which[i]))
          throw SpecError(m.field("which") + "[" + std::to_string(i) + "]", "unknown metric '" + ms.which[i] + "'");
    }
    opt_set(m, "cadence", ms.cadence, as_long);
    at_least(ms.cadence, 1, m.field("cadence"));
    opt_set(m, "num_batches", ms.num_batches, as_int);
    at_least(ms.num_batches, 1, m.field("num_batches"));
    opt_set(m, "max_iters", ms.max_iters, as_int);
    at_least(ms.max_iters, 1, m.field("max_iters"));
    opt_set(m, "full_tol", ms.full_tol, as_double);
    positive(ms.full_tol, m.field("full_tol"));
    opt_set(m, "batch_tol", ms.batch_tol, as_double);
    positive(ms.batch_tol, m.field("batch_tol"));
    m.finish();
  }

  const int n = sample_count(s);

  if (const json* v = o.get("schedule")) {
    if (!v->is_array()) throw SpecError("schedule", "expected a list");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string f = "schedule[" + std::to_string(i) + "]";
      Obj e((*v)[i], f);
      nn::ScheduleEvent ev;
      ev.at_step = as_long(e.require("at_step"), e.field("at_step"));
      if (ev.at_step < 0 || ev.at_step > s.training.steps)
        throw SpecError(e.field("at_step"), "must lie within the run [0, steps]");
      const bool has_eta = e.has("set_eta"), has_b = e.has("set_batch");
      if (has_eta == has_b) throw SpecError(f, "exactly one of set_eta or set_batch required");
      if (has_eta) {
        ev.action = nn::ScheduleEvent::Action::kSetEta;
        ev.value = as_double(*e.get("set_eta"), e.field("set_eta"));
        positive(ev.value, e.field("set_eta"));
      } else {
        ev.action = nn::ScheduleEvent::Action::kSetBatch;
        const int b = as_int(*e.get("set_batch"), e.field("set_batch"));
        if (b < 1 || b > n) throw SpecError(e.field("set_batch"), "batch size must lie in [1, n = " + std::to_string(n) + "]");
        ev.value = b;
      }
      e.finish();
      if (!s.schedule.empty() && ev.at_step < s.schedule.back().at_step)
        throw SpecError(e.field("at_step"), "schedule must be sorted by at_step");
      s.schedule.push_back(ev);
    }
  }

  {
    Obj w(o.require("sweep"), "sweep");
    auto& sw = s.sweep;
    sw.eta = as_list(w.require("eta"), "sweep.eta", as_double);
    sw.named_axes.push_back("eta");
    if (const json* v = w.get("b")) {
      sw.b = as_list(*v, "sweep.b", as_int);
      sw.named_axes.push_back("b");
    }
    if (const json* v = w.get("init_scale")) {
      if (s.backend != Backend::kMlp) throw SpecError("sweep.init_scale", "only valid with backend mlp");
      sw.init_scale = as_list(*v, "sweep.init_scale", as_double);
      sw.named_axes.push_back("init_scale");
    }
    if (const json* v = w.get("seed")) sw.seed = as_list(*v, "sweep.seed", as_u64);
    w.finish();
    auto nonempty = [](std::size_t size, const char* f) {
      if (size == 0) throw SpecError(f, "sweep axes must be non-empty lists");
    };
    nonempty(sw.eta.size(), "sweep.eta");
    nonempty(sw.b.size(), "sweep.b");
    nonempty(sw.seed.size(), "sweep.seed");
    nonempty(sw.init_scale.size(), "sweep.init_scale");
    for (std::size_t i = 0; i < sw.eta.size(); ++i) positive(sw.eta[i], "sweep.eta[" + std::to_string(i) + "]");
    for (std::size_t i = 0; i < sw.b.size(); ++i)
      if (sw.b[i] < 1 || sw.b[i] > n)
        throw SpecError("sweep.b[" + std::to_string(i) + "]",
                        "batch size " + std::to_string(sw.b[i]) + " must lie in [1, n = " + std::to_string(n) + "]");
    for (std::size_t i = 0; i < sw.init_scale.size(); ++i)
      if (sw.init_scale[i] < 0) throw SpecError("sweep.init_scale[" + std::to_string(i) + "]", "must be >= 0");
  }

  if (const json* v = o.get("output_dir")) s.output_dir = as_string(*v, "output_dir");
  if (s.output_dir.empty()) throw SpecError("output_dir", "must be non-empty");

  if (const json* v = o.get("probe")) {
    Obj p(*v, "probe");
    ProbeSpec ps;
    if (const json* x = p.get("eta_factor")) {
      ps.eta_factor = as_double(*x, p.field("eta_factor"));
      positive(*ps.eta_factor, p.field("eta_factor"));
    }
    if (const json* x = p.get("new_b")) {
      ps.new_b = as_int(*x, p.field("new_b"));
      if (*ps.new_b < 1 || *ps.new_b > n) throw SpecError(p.field("new_b"), "batch size must lie in [1, n]");
    }
    opt_set(p, "probe_steps", ps.probe_steps, as_int);
    at_least(ps.probe_steps, 1, p.field("probe_steps"));
    opt_set(p, "catapult_factor", ps.catapult_factor, as_double);
    if (!(ps.catapult_factor > 1.0)) throw SpecError(p.field("catapult_factor"), "must exceed 1");
    opt_set(p, "window", ps.window, as_int);
    at_least(ps.window, 3, p.field("window"));
    p.finish();
    if (!ps.eta_factor && !ps.new_b) throw SpecError("probe", "needs eta_factor or new_b");
    s.probe = ps;
  }

  if (const json* v = o.get("gap_scan")) {
    if (s.backend != Backend::kMlp) throw SpecError("gap_scan", "only valid with backend mlp");
    Obj g(*v, "gap_scan");
    GapScanSpec gs;
    opt_set(g, "mode", gs.mode, as_string);
    if (gs.mode != "static" && gs.mode != "trained") throw SpecError(g.field("mode"), "must be static or trained");
    gs.b_list = as_list(g.require("b_list"), g.field("b_list"), as_int);
    if (gs.b_list.size() < 3) throw SpecError(g.field("b_list"), "needs at least 3 batch sizes");
    for (std::size_t i = 0; i < gs.b_list.size(); ++i) {
      const std::string f = g.field("b_list") + "[" + std::to_string(i) + "]";
      if (gs.b_list[i] < 1 || gs.b_list[i] > n) throw SpecError(f, "batch size must lie in [1, n]");
      if (i > 0 && gs.b_list[i] <= gs.b_list[i - 1]) throw SpecError(f, "b_list must be strictly ascending");
    }
    opt_set(g, "num_batches", gs.num_batches, as_int);
    at_least(gs.num_batches, 1, g.field("num_batches"));
    g.finish();
    s.gap_scan = gs;
  }
  o.finish();
  return s;
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SpecError("<file>", "cannot read spec file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_spec(ss.str());
}

std::vector<Cell> expand_sweep(const ExperimentSpec& s) {
  const auto& sw = s.sweep;
  auto named = [&](const char* a) {
    return std::find(sw.named_axes.begin(), sw.named_axes.end(), a) != sw.named_axes.end();
  };
  std::vector<Cell> cells;
  for (double eta : sw.eta)
    for (int b : sw.b)
      for (double scale : sw.init_scale)
        for (std::uint64_t seed : sw.seed) {
          Cell c{eta, b, seed, scale, s.name};
          c.rel_dir += "/eta=" + shortest(eta);
          if (named("b")) c.rel_dir += "/b=" + std::to_string(b);
          if (named("init_scale")) c.rel_dir += "/init_scale=" + shortest(scale);
          c.rel_dir += "/seed=" + std::to_string(seed);
          cells.push_back(c);
        }
  return cells;
}

}  // namespace eoss::harness
