#include "edras/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace edras {

using json = nlohmann::json;

namespace {

int line_at(const std::string& text, std::size_t pos) {
  return 1 + int(std::count(text.begin(), text.begin() + std::ptrdiff_t(std::min(pos, text.size())), '\n'));
}

// Line of the innermost key of `path` found by scanning for "key": in order.
int line_of(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  bool any = false;
  for (const auto& key : path) {
    if (!key.empty() && key.front() == '[') continue;
    const std::string needle = "\"" + key + "\"";
    std::size_t p = pos;
    while ((p = text.find(needle, p)) != std::string::npos) {
      std::size_t q = p + needle.size();
      while (q < text.size() && std::isspace(static_cast<unsigned char>(text[q]))) ++q;
      if (q < text.size() && text[q] == ':') break;
      p = q;
    }
    if (p == std::string::npos) break;
    pos = p;
    any = true;
  }
  return any ? line_at(text, pos) : 0;
}

std::string join(const std::vector<std::string>& path) {
  std::string s;
  for (const auto& k : path) {
    if (!s.empty() && k.front() != '[') s += '.';
    s += k;
  }
  return s.empty() ? "<root>" : s;
}

struct Source {
  const std::string& text;
  const std::string& name;
};

class Node {
 public:
  Node(const json& j, std::vector<std::string> path, const Source& src) : j_(j), path_(std::move(path)), src_(src) {}

  [[noreturn]] void fail(const std::string& msg, const std::string& key = {}) const {
    std::vector<std::string> p = path_;
    if (!key.empty()) p.push_back(key);
    const int line = line_of(src_.text, p);
    throw ConfigError(src_.name + ":" + std::to_string(line) + ": " + msg, line);
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) fail("unknown key '" + join(with(it.key())) + "'", it.key());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Node child(const char* key) const {
    if (!has(key)) fail("missing required field '" + join(with(key)) + "'");
    const json& c = j_.at(key);
    if (!c.is_object()) fail("'" + join(with(key)) + "' must be an object", key);
    return Node(c, with(key), src_);
  }

  double number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }
  double number(const char* key) const {
    const json& v = require(key);
    if (!v.is_number()) fail("'" + join(with(key)) + "' must be a number", key);
    return v.get<double>();
  }

  long integer(const char* key, long fallback, long min = 0) const { return has(key) ? required_integer(key, min) : fallback; }
  long required_integer(const char* key, long min = 0) const {
    const json& v = require(key);
    if (!v.is_number_integer()) fail("'" + join(with(key)) + "' must be an integer", key);
    const long x = v.get<long>();
    if (x < min) fail("'" + join(with(key)) + "' must be at least " + std::to_string(min), key);
    return x;
  }

  std::uint64_t unsigned_integer(const char* key) const {
    const json& v = require(key);
    if (!v.is_number_unsigned()) fail("'" + join(with(key)) + "' must be a non-negative integer", key);
    return v.get<std::uint64_t>();
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail("'" + join(with(key)) + "' must be true or false", key);
    return v.get<bool>();
  }

  std::string string(const char* key) const {
    const json& v = require(key);
    if (!v.is_string()) fail("'" + join(with(key)) + "' must be a string", key);
    return v.get<std::string>();
  }
  std::string string(const char* key, const std::string& fallback) const { return has(key) ? string(key) : fallback; }

  std::vector<double> numbers(const char* key) const {
    const json& v = require(key);
    if (!v.is_array()) fail("'" + join(with(key)) + "' must be an array of numbers", key);
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail("'" + join(with(key)) + "' must be an array of numbers", key);
      out.push_back(e.get<double>());
    }
    return out;
  }

  Eigen::Vector2d point(const char* key) const {
    const std::vector<double> v = numbers(key);
    if (v.size() != 2) fail("'" + join(with(key)) + "' must have two entries", key);
    return {v[0], v[1]};
  }

  const json& raw(const char* key) const { return require(key); }

  template <class F>
  auto guarded(const char* key, F&& f) const -> decltype(f()) {
    try {
      return f();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      fail(e.what(), key);
    }
  }

 private:
  const json& j_;
  std::vector<std::string> path_;
  const Source& src_;

  std::vector<std::string> with(const std::string& key) const {
    auto p = path_;
    p.push_back(key);
    return p;
  }
  const json& require(const char* key) const {
    if (!has(key)) fail("missing required field '" + join(with(key)) + "'");
    return j_.at(key);
  }
};

void parse_system(const Node& n, RunConfig& cfg) {
  n.allow({"preset", "eps", "eps_s", "Mb", "Ms", "terminal_time", "regime", "initial_condition"});
  cfg.preset = n.string("preset");
  cfg.system = n.guarded("preset", [&] { return make_preset(cfg.preset); });
  PdeSystem& s = cfg.system;
  s.eps = n.number("eps", s.eps);
  s.eps_s = n.number("eps_s", s.eps_s);
  s.Mb = n.number("Mb", s.Mb);
  s.Ms = n.number("Ms", s.Ms);
  s.terminal_time = n.number("terminal_time", s.terminal_time);
  if (n.has("regime")) s.regime = n.guarded("regime", [&] { return parse_regime(n.string("regime")); });
  if (n.has("initial_condition")) {
    const json& ic = n.raw("initial_condition");
    if (ic.is_string()) {
      s.initial_condition = n.guarded("initial_condition", [&] { return make_initial_condition(ic.get<std::string>()); });
    } else if (ic.is_object()) {
      const Node c = n.child("initial_condition");
      c.allow({"name", "value"});
      const std::string name = c.string("name");
      const double value = c.number("value", 0.0);
      s.initial_condition = c.guarded("name", [&] { return make_initial_condition(name, value); });
    } else {
      n.fail("'system.initial_condition' must be a name or an object", "initial_condition");
    }
  }
  n.guarded("preset", [&] { s.validate(); return 0; });
}

Domain parse_domain(const Node& n) {
  const std::string kind = n.string("kind");
  if (kind == "interval") {
    n.allow({"kind", "lower", "upper"});
    return n.guarded("kind", [&] { return Domain::interval(n.number("lower", -1.0), n.number("upper", 1.0)); });
  }
  if (kind == "rectangle") {
    n.allow({"kind", "lower", "upper"});
    return n.guarded("kind", [&] { return Domain::rectangle(n.point("lower"), n.point("upper")); });
  }
  if (kind == "disk") {
    n.allow({"kind", "center", "radius"});
    const Eigen::Vector2d c = n.has("center") ? n.point("center") : Eigen::Vector2d::Zero();
    return n.guarded("kind", [&] { return Domain::disk(c, n.number("radius", 1.0)); });
  }
  if (kind == "ellipse") {
    n.allow({"kind", "center", "a", "b"});
    const Eigen::Vector2d c = n.has("center") ? n.point("center") : Eigen::Vector2d::Zero();
    return n.guarded("kind", [&] { return Domain::ellipse(c, n.number("a"), n.number("b")); });
  }
  n.fail("unknown domain kind '" + kind + "'", "kind");
}

void parse_plan(const Node& n, RunConfig& cfg) {
  n.allow({"base", "segment_ends", "learning_rate", "adam_epochs", "batch_size", "lbfgs_iterations", "lbfgs_history",
           "lbfgs_tolerance", "strategy", "resample_every", "resample_m", "resample_m_boundary", "add_budget",
           "budget_per_segment", "pool_multiplier", "max_interior", "cells_t", "cells_x", "cells_y", "cells_theta",
           "d_f0", "d_b0", "loss_delta", "max_outer", "interior_points", "boundary_points", "initial_points",
           "warm_start", "weights", "network"});
  const int dim = cfg.domain->spatial_dim();
  const std::string base = n.string("base", dim == 1 ? "1d" : "2d");
  TrainPlan p;
  if (base == "1d")
    p = default_plan_1d();
  else if (base == "2d")
    p = default_plan_2d(cfg.system.terminal_time);
  else
    n.fail("unknown plan base '" + base + "' (expected 1d or 2d)", "base");
  if (n.has("segment_ends")) p.segment_ends = n.numbers("segment_ends");
  p.learning_rate = n.number("learning_rate", p.learning_rate);
  p.adam_epochs = int(n.integer("adam_epochs", p.adam_epochs));
  p.batch_size = std::size_t(n.integer("batch_size", long(p.batch_size), 1));
  p.lbfgs_iterations = int(n.integer("lbfgs_iterations", p.lbfgs_iterations));
  p.lbfgs_history = int(n.integer("lbfgs_history", p.lbfgs_history, 1));
  p.lbfgs_tolerance = n.number("lbfgs_tolerance", p.lbfgs_tolerance);
  if (n.has("strategy")) p.strategy = n.guarded("strategy", [&] { return parse_strategy(n.string("strategy")); });
  p.resample_every = int(n.integer("resample_every", p.resample_every, 1));
  p.resample_m = std::size_t(n.integer("resample_m", long(p.resample_m)));
  p.resample_m_boundary = std::size_t(n.integer("resample_m_boundary", long(p.resample_m_boundary)));
  p.add_budget = std::size_t(n.integer("add_budget", long(p.add_budget)));
  p.budget_per_segment = n.boolean("budget_per_segment", p.budget_per_segment);
  p.pool_multiplier = n.number("pool_multiplier", p.pool_multiplier);
  p.max_interior = std::size_t(n.integer("max_interior", long(p.max_interior), 1));
  p.cells_t = int(n.integer("cells_t", p.cells_t, 1));
  p.cells_x = int(n.integer("cells_x", p.cells_x, 1));
  p.cells_y = int(n.integer("cells_y", p.cells_y, 1));
  p.cells_theta = int(n.integer("cells_theta", p.cells_theta, 1));
  p.d_f0 = int(n.integer("d_f0", p.d_f0));
  p.d_b0 = int(n.integer("d_b0", p.d_b0));
  p.loss_delta = n.number("loss_delta", p.loss_delta);
  p.max_outer = int(n.integer("max_outer", p.max_outer));
  p.interior_points = std::size_t(n.integer("interior_points", long(p.interior_points), 1));
  p.boundary_points = std::size_t(n.integer("boundary_points", long(p.boundary_points), 1));
  p.initial_points = std::size_t(n.integer("initial_points", long(p.initial_points), 1));
  p.warm_start = n.boolean("warm_start", p.warm_start);
  if (n.has("weights")) {
    const Node w = n.child("weights");
    w.allow({"w_f", "w_b", "w_i", "w_b1", "w_b2"});
    p.weights.w_f = w.number("w_f", p.weights.w_f);
    p.weights.w_b = w.number("w_b", p.weights.w_b);
    p.weights.w_i = w.number("w_i", p.weights.w_i);
    p.weights.w_b1 = w.number("w_b1", p.weights.w_b1);
    p.weights.w_b2 = w.number("w_b2", p.weights.w_b2);
    w.guarded("w_f", [&] { p.weights.validate(); return 0; });
  }
  p.network.input_dim = dim + 1;
  if (n.has("network")) {
    const Node w = n.child("network");
    w.allow({"hidden_layers", "width", "activation"});
    p.network.hidden_layers = int(w.integer("hidden_layers", p.network.hidden_layers, 1));
    p.network.width = int(w.integer("width", p.network.width, 1));
    if (w.has("activation"))
      p.network.activation = w.guarded("activation", [&] { return parse_activation(w.string("activation")); });
  }
  n.guarded("segment_ends", [&] { p.validate(); return 0; });
  if (std::abs(p.segment_ends.back() - cfg.system.terminal_time) > 1e-12)
    n.fail("last segment end must equal system.terminal_time", "segment_ends");
  cfg.plan = p;
  cfg.has_plan = true;
}

void parse_oracle(const Node& n, RunConfig& cfg) {
  n.allow({"dt", "stabilization", "nx", "nr", "ntheta", "store_times", "store_every"});
  OracleConfig& o = cfg.oracle;
  o.dt = n.number("dt", o.dt);
  if (!(o.dt > 0.0)) n.fail("'oracle.dt' must be positive", "dt");
  o.stabilization = n.number("stabilization", o.stabilization);
  o.nx = int(n.integer("nx", o.nx, 16));
  o.nr = int(n.integer("nr", o.nr, 4));
  o.ntheta = int(n.integer("ntheta", o.ntheta, 8));
  if (n.has("store_times")) o.store_times = n.numbers("store_times");
  o.store_every = n.number("store_every", 0.0);
  if (o.store_every < 0.0) n.fail("'oracle.store_every' must be non-negative", "store_every");
  cfg.has_oracle = true;
}

GroupAudit parse_audit(const Node& n, const RunConfig& cfg) {
  GroupAudit a;
  a.thresholds.e0 = n.number("e0", a.thresholds.e0);
  if (n.has("R0")) a.thresholds.R0 = n.number("R0");
  n.guarded("e0", [&] { a.thresholds.validate(); return 0; });
  a.t_lower = n.number("t_lower", 0.0);
  a.t_upper = n.number("t_upper", cfg.system.terminal_time);
  if (!(a.t_upper > a.t_lower)) n.fail("group slab requires t_upper > t_lower", "t_upper");
  a.m = std::size_t(n.integer("m", long(cfg.has_plan ? cfg.plan.resample_m : 100), 1));
  a.repeats = int(n.integer("repeats", 100, 1));
  if (n.has("strategies")) {
    a.strategies.clear();
    const json& arr = n.raw("strategies");
    if (!arr.is_array()) n.fail("'strategies' must be an array of names", "strategies");
    for (const auto& e : arr) {
      if (!e.is_string()) n.fail("'strategies' must be an array of names", "strategies");
      const Strategy s = n.guarded("strategies", [&] { return parse_strategy(e.get<std::string>()); });
      if (s == Strategy::uniform || s == Strategy::edras_full)
        n.fail("group probabilities are not defined for strategy " + to_string(s), "strategies");
      a.strategies.push_back(s);
    }
  }
  return a;
}

void parse_compare(const Node& n, RunConfig& cfg) {
  n.allow({"oracle", "checkpoints", "label", "energy_times", "quadrature", "local_std", "groups", "group_pool"});
  CompareConfig& c = cfg.compare;
  c.oracle = n.string("oracle");
  c.checkpoints = n.string("checkpoints", "");
  c.label = n.string("label", c.label);
  if (n.has("energy_times")) c.energy_times = n.numbers("energy_times");
  if (n.has("quadrature")) {
    const Node q = n.child("quadrature");
    q.allow({"radial", "angular"});
    c.quadrature.radial = int(q.integer("radial", c.quadrature.radial, 2));
    c.quadrature.angular = int(q.integer("angular", c.quadrature.angular, 4));
  }
  if (n.has("local_std")) {
    const Node l = n.child("local_std");
    l.allow({"half_x", "half_t", "threshold"});
    c.local_std = true;
    c.half_x = int(l.integer("half_x", c.half_x));
    c.half_t = int(l.integer("half_t", c.half_t));
    c.std_threshold = l.number("threshold", c.std_threshold);
  }
  if (n.has("groups")) {
    const Node g = n.child("groups");
    g.allow({"e0", "R0", "t_lower", "t_upper", "m", "repeats", "strategies"});
    c.groups = parse_audit(g, cfg);
  }
  c.group_pool = std::size_t(n.integer("group_pool", long(c.group_pool), 1));
  cfg.has_compare = true;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    const int line = line_at(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(source + ":" + std::to_string(line) + ": malformed JSON (" + e.what() + ")", line);
  }
  const Source src{text, source};
  if (!root.is_object()) throw ConfigError(source + ":1: config must be a JSON object", 1);
  const Node top(root, {}, src);
  top.allow({"seed", "output_dir", "system", "domain", "plan", "oracle", "compare", "groups"});
  RunConfig cfg;
  cfg.source = source;
  cfg.seed = top.unsigned_integer("seed");
  cfg.output_dir = top.string("output_dir");
  parse_system(top.child("system"), cfg);
  if (top.has("domain")) {
    cfg.domain = parse_domain(top.child("domain"));
  } else {
    cfg.domain = cfg.system.regime == BoundaryRegime::periodic1d ? Domain::interval(-1, 1) : Domain::disk({0, 0}, 1);
  }
  if (cfg.system.regime == BoundaryRegime::periodic1d && cfg.domain->spatial_dim() != 1)
    top.fail("the periodic regime requires an interval domain", "domain");
  if (cfg.system.regime != BoundaryRegime::periodic1d && cfg.domain->spatial_dim() != 2)
    top.fail("neumann and dynamic regimes require a 2D domain", "domain");
  if (top.has("plan")) parse_plan(top.child("plan"), cfg);
  if (top.has("oracle")) parse_oracle(top.child("oracle"), cfg);
  if (top.has("compare")) parse_compare(top.child("compare"), cfg);
  if (top.has("groups")) {
    const Node g = top.child("groups");
    g.allow({"oracle", "e0", "R0", "t_lower", "t_upper", "m", "repeats", "strategies"});
    GroupAuditConfig gc;
    gc.oracle = g.string("oracle");
    gc.audit = parse_audit(g, cfg);
    cfg.train_groups = gc;
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file", 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json terms_json(const LossTerms& t) {
  return {{"L_f", t.L_f}, {"L_b", t.L_b}, {"L_b1", t.L_b1}, {"L_b2", t.L_b2}, {"L_i", t.L_i}};
}

json metrics_json(const MetricsReport& r) {
  return {{"mse", r.mse},
          {"relative_mse", r.relative_mse},
          {"mae", r.mae},
          {"relative_mae", r.relative_mae},
          {"max_abs_error", r.max_abs_error},
          {"relative_linf", r.relative_linf},
          {"points", r.points},
          {"grid", r.grid}};
}

int missing_section(const RunConfig& cfg, const char* section, std::ostream& err) {
  err << cfg.source << ": missing required field '" << section << "'\n";
  return 2;
}

}  // namespace

std::vector<double> oracle_store_times(const RunConfig& cfg) {
  std::vector<double> times = cfg.oracle.store_times;
  if (times.empty())
    times = cfg.has_plan ? default_store_times(cfg.plan.segment_ends) : std::vector<double>{0.0, cfg.system.terminal_time};
  const double T = cfg.system.terminal_time;
  if (cfg.oracle.store_every > 0.0) {
    const long n = std::lround(std::floor(T / cfg.oracle.store_every + 1e-9));
    for (long k = 0; k <= n; ++k) times.push_back(double(k) * cfg.oracle.store_every);
  }
  std::sort(times.begin(), times.end());
  std::vector<double> out;
  for (double t : times)
    if (out.empty() || t - out.back() > 1e-9) out.push_back(t);
  return out;
}

int cmd_train(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.has_plan) return missing_section(cfg, "plan", err);
  const std::filesystem::path out = cfg.output_dir;
  std::optional<GridSolution> audit_oracle;
  if (cfg.train_groups) {
    try {
      audit_oracle = load_oracle(cfg.train_groups->oracle);
    } catch (const Error& e) {
      err << cfg.source << ": " << e.what() << '\n';
      return 2;
    }
  }
  std::filesystem::create_directories(out / "csv");
  std::ofstream log(out / "csv" / "sampling_log.csv", std::ios::binary);
  std::ofstream groups;
  RunHooks hooks;
  hooks.sampling_log = &log;
  const int dim = cfg.domain->spatial_dim();
  if (audit_oracle) {
    groups.open(out / "csv" / "groups.csv", std::ios::binary);
    write_group_csv_header(groups);
    hooks.on_resample = [&](const ResampleEvent& e) {
      const auto rows = audit_groups(*audit_oracle, *e.net, dim, e.pool->interior, e.pool->interior_residual,
                                     e.pool->interior_edrd, cfg.train_groups->audit,
                                     derive_seed(cfg.seed, "audit", std::uint64_t(e.segment) * 1000003ULL + std::uint64_t(e.event)));
      for (const auto& r : rows) write_group_csv_row(groups, e.segment, e.event, e.epoch, r.strategy, r.p);
    };
  }
  RunReport report;
  SolutionModel model;
  try {
    model = run_time_marching(cfg.system, *cfg.domain, cfg.plan, cfg.seed, &report, hooks);
  } catch (const TrainingDiverged& e) {
    json batch = json::array();
    for (const auto& p : e.batch) batch.push_back({p.x.x(), p.x.y(), p.t});
    json snap{{"message", e.what()},
              {"segment", e.segment},
              {"epoch", e.epoch},
              {"parameters", std::vector<double>(e.parameters.data(), e.parameters.data() + e.parameters.size())},
              {"batch", batch}};
    write_json(out / "report" / "divergence.json", snap);
    err << "training diverged: " << e.what() << " (snapshot in " << (out / "report" / "divergence.json").string() << ")\n";
    return 3;
  } catch (const Error& e) {
    err << "training failed: " << e.what() << '\n';
    return 1;
  }
  save_model(out / "checkpoints", model);
  json segs = json::array();
  for (std::size_t i = 0; i < report.segments.size(); ++i) {
    std::ostringstream csv;
    write_loss_csv(csv, report.histories[i]);
    std::ostringstream name;
    name << "loss_segment_" << std::setw(3) << std::setfill('0') << i << ".csv";
    write_text(out / "csv" / name.str(), csv.str());
    const SegmentReport& r = report.segments[i];
    segs.push_back({{"index", r.index},
                    {"t_begin", r.t_begin},
                    {"t_end", r.t_end},
                    {"final_loss", r.final_loss},
                    {"final_terms", terms_json(r.final_terms)},
                    {"adam_epochs", r.adam_epochs_run},
                    {"lbfgs_iterations", r.lbfgs_iterations},
                    {"resample_events", r.resample_events},
                    {"points_added", r.points_added},
                    {"interior_size", r.interior_size},
                    {"saturated", r.saturated},
                    {"outer_converged", r.outer_converged},
                    {"handoff_error", r.handoff_error}});
  }
  write_json(out / "report" / "train.json", {{"seed", cfg.seed},
                                             {"preset", cfg.preset},
                                             {"regime", to_string(cfg.system.regime)},
                                             {"strategy", to_string(cfg.plan.strategy)},
                                             {"segments", segs}});
  return 0;
}

int cmd_oracle(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.has_oracle) return missing_section(cfg, "oracle", err);
  FdmOptions opt;
  opt.dt = cfg.oracle.dt;
  opt.stabilization = cfg.oracle.stabilization;
  opt.store_times = oracle_store_times(cfg);
  const Domain& d = *cfg.domain;
  GridSolution g;
  try {
    if (d.kind() == Domain::Kind::interval) {
      g = solve_1d_periodic(cfg.system, cfg.oracle.nx, opt, d.extents()[0], d.extents()[1]);
    } else if (d.kind() == Domain::Kind::disk) {
      g = solve_2d_disk(cfg.system, cfg.oracle.nr, cfg.oracle.ntheta, cfg.system.regime, opt, d.extents()[0],
                        d.center());
    } else {
      err << cfg.source << ": no reference solver for this domain kind (interval and disk only)\n";
      return 2;
    }
  } catch (const Error& e) {
    err << "oracle failed: " << e.what() << '\n';
    return 1;
  }
  const std::filesystem::path base = cfg.output_dir / "oracle" / "reference";
  std::filesystem::create_directories(base.parent_path());
  save_oracle(base, g);
  write_json(cfg.output_dir / "report" / "oracle.json",
             {{"preset", cfg.preset}, {"regime", to_string(g.regime)}, {"times", g.times}, {"energies", g.energies},
              {"nodes", g.node_count()}, {"dt", g.dt}, {"oracle", base.string()}});
  return 0;
}

int cmd_compare(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.has_compare) return missing_section(cfg, "compare", err);
  const CompareConfig& c = cfg.compare;
  const std::filesystem::path out = cfg.output_dir;
  GridSolution oracle;
  SolutionModel model;
  try {
    oracle = load_oracle(c.oracle);
    model = load_model(c.checkpoints.empty() ? out / "checkpoints" : c.checkpoints);
  } catch (const Error& e) {
    err << cfg.source << ": " << e.what() << '\n';
    return 2;
  }
  try {
    const int dim = model.spatial_dim();
    if (dim != cfg.domain->spatial_dim()) throw Error("checkpoint dimension does not match the domain");
    const MetricsReport m = error_metrics(model, oracle);
    std::ostringstream metrics;
    write_metrics_csv(metrics, {{c.label, m}});
    write_text(out / "csv" / "metrics.csv", metrics.str());

    const double T = model.terminal_time();
    std::vector<double> times = c.energy_times;
    if (times.empty())
      for (double t : oracle.times)
        if (t <= T + 1e-12) times.push_back(t);
    const auto energy = energy_curve(cfg.system, gradient_field(model), times, make_quadrature(*cfg.domain, c.quadrature));
    std::ostringstream en;
    write_energy_csv(en, energy);
    write_text(out / "csv" / "energy.csv", en.str());

    const auto pts = oracle_grid_points(oracle, T);
    const auto values = model.evaluate(pts);
    std::vector<double> ref;
    ref.reserve(pts.size());
    for (const auto& p : pts) ref.push_back(interpolate(oracle, p));
    std::ostringstream fm, fo;
    write_field_csv(fm, dim, pts, values);
    write_field_csv(fo, dim, pts, ref);
    write_text(out / "csv" / "field_model.csv", fm.str());
    write_text(out / "csv" / "field_oracle.csv", fo.str());

    if (c.local_std) {
      std::ostringstream ls;
      write_local_std_csv(ls, oracle, local_std_map(oracle, c.half_x, c.half_t, c.std_threshold));
      write_text(out / "csv" / "local_std.csv", ls.str());
    }

    json groups_json = json::array();
    if (c.groups) {
      GroupAudit a = *c.groups;
      const Segment& seg = model.segments()[model.segment_index(std::min(a.t_upper, T))];
      a.t_lower = std::max(a.t_lower, seg.t_begin);
      a.t_upper = std::min(a.t_upper, seg.t_end);
      Rng rng(derive_seed(cfg.seed, "compare-pool"));
      const auto pool = sample_interior(*cfg.domain, c.group_pool, {a.t_lower, a.t_upper}, rng);
      std::vector<double> res, edrd;
      score_interior(seg.net, cfg.system, dim, pool, res, edrd);
      const auto rows = audit_groups(oracle, seg.net, dim, pool, res, edrd, a, derive_seed(cfg.seed, "compare-audit"));
      std::ostringstream gs;
      write_group_csv_header(gs);
      for (const auto& r : rows) {
        write_group_csv_row(gs, int(model.segment_index(a.t_upper)), 0, 0, r.strategy, r.p);
        groups_json.push_back({{"strategy", to_string(r.strategy)},
                               {"p", r.p.p},
                               {"pool", r.pool},
                               {"above_threshold", r.above_threshold},
                               {"counts", r.counts}});
      }
      write_text(out / "csv" / "groups_final.csv", gs.str());
    }
    json energy_json = json::array();
    for (const auto& r : energy)
      energy_json.push_back({{"t", r.t}, {"bulk", r.energy.bulk}, {"surface", r.energy.surface}, {"total", r.energy.total}});
    write_json(out / "report" / "compare.json",
               {{"label", c.label}, {"metrics", metrics_json(m)}, {"energy", energy_json}, {"groups", groups_json}});
  } catch (const Error& e) {
    err << "compare failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Phase-field PINN training with energy-dissipation-guided sampling"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "print progress messages");
  std::string config;
  CLI::App* train = app.add_subcommand("train", "train a time-marching model");
  CLI::App* oracle = app.add_subcommand("oracle", "run the finite-difference reference solver");
  CLI::App* compare = app.add_subcommand("compare", "compare checkpoints with an oracle");
  for (CLI::App* s : {train, oracle, compare}) s->add_option("config", config, "run config (JSON)")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  set_verbose(verbose);
  retain_freed_memory();
  RunConfig cfg;
  try {
    cfg = load_config(config);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  if (train->parsed()) return cmd_train(cfg, std::cerr);
  if (oracle->parsed()) return cmd_oracle(cfg, std::cerr);
  return cmd_compare(cfg, std::cerr);
}

}  // namespace edras
