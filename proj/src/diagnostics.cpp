#include "edras/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace edras {

MetricsReport error_metrics(std::span<const double> model, std::span<const double> reference) {
  if (model.size() != reference.size()) throw Error("metric inputs differ in length");
  if (model.empty()) throw Error("empty evaluation set");
  MetricsReport r;
  r.points = model.size();
  double sq = 0.0, ab = 0.0, ref_sq = 0.0, ref_ab = 0.0, ref_max = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double e = std::abs(model[i] - reference[i]);
    sq += e * e;
    ab += e;
    r.max_abs_error = std::max(r.max_abs_error, e);
    ref_sq += reference[i] * reference[i];
    ref_ab += std::abs(reference[i]);
    ref_max = std::max(ref_max, std::abs(reference[i]));
  }
  const double n = double(model.size());
  r.mse = sq / n;
  r.mae = ab / n;
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : (a > 0.0 ? INFINITY : 0.0); };
  r.relative_mse = ratio(sq, ref_sq);
  r.relative_mae = ratio(ab, ref_ab);
  r.relative_linf = ratio(r.max_abs_error, ref_max);
  return r;
}

std::vector<SpaceTimePoint> oracle_grid_points(const GridSolution& oracle, double t_max) {
  std::vector<SpaceTimePoint> pts;
  for (double t : oracle.times) {
    if (t > t_max + 1e-12) continue;
    for (Eigen::Index k = 0; k < oracle.node_count(); ++k) pts.push_back({oracle.node_position(k), t, PointTag::interior});
  }
  return pts;
}

MetricsReport error_metrics(const SolutionModel& model, const GridSolution& oracle) {
  std::vector<double> ref;
  for (std::size_t s = 0; s < oracle.times.size(); ++s) {
    if (oracle.times[s] > model.terminal_time() + 1e-12) continue;
    ref.insert(ref.end(), oracle.slices[s].data(), oracle.slices[s].data() + oracle.slices[s].size());
  }
  const auto pts = oracle_grid_points(oracle, model.terminal_time());
  const auto vals = model.evaluate(pts);
  MetricsReport r = error_metrics(vals, ref);
  r.grid = oracle.kind == GridKind::periodic1d
               ? "periodic nx=" + std::to_string(oracle.nx)
               : "disk nr=" + std::to_string(oracle.nr) + " ntheta=" + std::to_string(oracle.ntheta);
  return r;
}

char group_name(Group g) { return char('A' + int(g)); }

void GroupThresholds::validate() const {
  if (!(e0 > 0.0)) throw Error("e0 must be positive");
}

std::vector<Group> classify_groups(std::span<const double> residuals, std::span<const double> errors,
                                   const GroupThresholds& th) {
  th.validate();
  if (residuals.size() != errors.size()) throw Error("group inputs differ in length");
  double R0 = 0.0;
  if (th.R0) {
    R0 = *th.R0;
  } else {
    if (residuals.empty()) throw Error("empty residual set");
    R0 = std::accumulate(residuals.begin(), residuals.end(), 0.0) / double(residuals.size());
  }
  std::vector<Group> g(residuals.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool big_r = residuals[i] > R0, big_e = errors[i] > th.e0;
    g[i] = big_e ? (big_r ? Group::B : Group::A) : (big_r ? Group::D : Group::C);
  }
  return g;
}

GroupProbabilities pick_probabilities(std::span<const Group> groups, std::span<const std::size_t> picks) {
  if (picks.empty()) throw Error("m must be positive");
  GroupProbabilities p;
  for (std::size_t i : picks) p.p[std::size_t(groups[i])] += 1.0;
  for (double& v : p.p) v /= double(picks.size());
  return p;
}

GroupProbabilities strategy_group_probabilities(Strategy s, std::span<const double> residuals,
                                                std::span<const double> edrd, std::span<const Group> groups,
                                                std::size_t m, int repeats, std::uint64_t seed) {
  if (m == 0) throw Error("m must be positive");
  if (residuals.size() != groups.size()) throw Error("group inputs differ in length");
  switch (s) {
    case Strategy::rar:
      return pick_probabilities(groups, rar_select(residuals, m));
    case Strategy::edras_topm:
      return pick_probabilities(groups, edras_topm(edrd, m));
    case Strategy::edras_rar_combo:
      return pick_probabilities(groups, combine_rankings(edrd, (m + 1) / 2, residuals, m / 2));
    case Strategy::rad:
    case Strategy::rar_d: {
      if (repeats < 1) throw Error("repeats must be positive");
      std::vector<std::size_t> all;
      all.reserve(m * std::size_t(repeats));
      for (int k = 0; k < repeats; ++k) {
        Rng rng(derive_seed(seed, "group-probability", std::uint64_t(k)));
        if (s == Strategy::rar_d) {
          const auto top = rar_select(residuals, m / 2);
          all.insert(all.end(), top.begin(), top.end());
        }
        const auto d = rad_sample(residuals, s == Strategy::rad ? m : m - m / 2, rng);
        all.insert(all.end(), d.begin(), d.end());
      }
      return pick_probabilities(groups, all);
    }
    case Strategy::uniform:
    case Strategy::edras_full:
      break;
  }
  throw Error("group probabilities are not defined for strategy " + to_string(s));
}

std::vector<GroupAuditRow> audit_groups(const GridSolution& oracle, const Mlp& net, int spatial_dim,
                                        std::span<const SpaceTimePoint> pts, std::span<const double> residuals,
                                        std::span<const double> edrd, const GroupAudit& audit, std::uint64_t seed) {
  audit.thresholds.validate();
  if (residuals.size() != pts.size() || edrd.size() != pts.size()) throw Error("pool scores are not populated");
  std::vector<SpaceTimePoint> slab;
  std::vector<double> R, D;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts[i].t >= audit.t_lower && pts[i].t <= audit.t_upper) {
      slab.push_back(pts[i]);
      R.push_back(residuals[i]);
      D.push_back(edrd[i]);
    }
  if (slab.empty()) return {};
  Eigen::MatrixXd X(spatial_dim + 1, Eigen::Index(slab.size()));
  for (std::size_t i = 0; i < slab.size(); ++i) X.col(Eigen::Index(i)) = network_input(spatial_dim, slab[i].x, slab[i].t);
  const Eigen::RowVectorXd u = net.values(X);
  std::vector<double> err(slab.size());
  for (std::size_t i = 0; i < slab.size(); ++i) err[i] = std::abs(u[Eigen::Index(i)] - interpolate(oracle, slab[i]));
  const std::vector<Group> groups = classify_groups(R, err, audit.thresholds);
  const double R0 = audit.thresholds.R0 ? *audit.thresholds.R0 : std::accumulate(R.begin(), R.end(), 0.0) / double(R.size());
  std::array<std::size_t, 4> counts{};
  for (Group g : groups) ++counts[std::size_t(g)];
  const std::size_t above = std::size_t(std::count_if(R.begin(), R.end(), [&](double r) { return r > R0; }));
  const std::size_t m = std::min(audit.m, slab.size());
  std::vector<GroupAuditRow> rows;
  for (Strategy s : audit.strategies) {
    GroupAuditRow row;
    row.strategy = s;
    row.p = strategy_group_probabilities(s, R, D, groups, m, audit.repeats, seed);
    row.pool = slab.size();
    row.above_threshold = above;
    row.counts = counts;
    rows.push_back(row);
  }
  return rows;
}

std::vector<EnergyRow> energy_curve(const PdeSystem& sys, const GradientField& field, std::span<const double> times,
                                    const Quadrature& quad) {
  std::vector<EnergyRow> rows;
  rows.reserve(times.size());
  for (double t : times) rows.push_back({t, total_energy(sys, field, t, quad)});
  return rows;
}

LocalStdMap local_std_map(const GridSolution& oracle, int half_x, int half_t, double threshold) {
  if (oracle.kind != GridKind::periodic1d) throw Error("local standard deviation maps are 1D only");
  if (half_x < 0 || half_t < 0) throw Error("window half-widths must be non-negative");
  LocalStdMap m;
  m.nt = int(oracle.slices.size());
  m.nx = oracle.nx;
  m.sigma = Eigen::MatrixXd::Zero(m.nt, m.nx);
  m.mask.assign(std::size_t(m.nt) * std::size_t(m.nx), false);
  for (int s = 0; s < m.nt; ++s)
    for (int i = 0; i < m.nx; ++i) {
      const int a0 = std::max(0, s - half_t), a1 = std::min(m.nt - 1, s + half_t);
      const int b0 = std::max(0, i - half_x), b1 = std::min(m.nx - 1, i + half_x);
      double sum = 0.0;
      for (int a = a0; a <= a1; ++a)
        for (int b = b0; b <= b1; ++b) sum += oracle.slices[std::size_t(a)][b];
      const int n = (a1 - a0 + 1) * (b1 - b0 + 1);
      const double mean = sum / n;
      double sq = 0.0;
      for (int a = a0; a <= a1; ++a)
        for (int b = b0; b <= b1; ++b) sq += std::pow(oracle.slices[std::size_t(a)][b] - mean, 2);
      const double sd = std::sqrt(sq / n);
      m.sigma(s, i) = sd;
      m.mask[std::size_t(s) * std::size_t(m.nx) + std::size_t(i)] = sd > threshold;
    }
  return m;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  out << "method,mse,relative_mse,mae,relative_mae,max_abs_error,relative_linf,points\n";
  for (const auto& [name, r] : rows)
    out << name << ',' << fmt(r.mse) << ',' << fmt(r.relative_mse) << ',' << fmt(r.mae) << ','
        << fmt(r.relative_mae) << ',' << fmt(r.max_abs_error) << ',' << fmt(r.relative_linf) << ',' << r.points << '\n';
}

void write_group_csv_header(std::ostream& out) { out << "segment,event,epoch,strategy,pA,pB,pC,pD\n"; }

void write_group_csv_row(std::ostream& out, int segment, int event, int epoch, Strategy s, const GroupProbabilities& p) {
  out << segment << ',' << event << ',' << epoch << ',' << to_string(s);
  for (double v : p.p) out << ',' << fmt(v);
  out << '\n';
}

void write_energy_csv(std::ostream& out, const std::vector<EnergyRow>& rows) {
  out << "t,bulk,surface,total\n";
  for (const auto& r : rows)
    out << fmt(r.t) << ',' << fmt(r.energy.bulk) << ',' << fmt(r.energy.surface) << ',' << fmt(r.energy.total) << '\n';
}

void write_local_std_csv(std::ostream& out, const GridSolution& oracle, const LocalStdMap& map) {
  out << "x,t,sigma,masked\n";
  for (int s = 0; s < map.nt; ++s)
    for (int i = 0; i < map.nx; ++i)
      out << fmt(oracle.node_position(i).x()) << ',' << fmt(oracle.times[std::size_t(s)]) << ',' << fmt(map.sigma(s, i))
          << ',' << int(map.mask[std::size_t(s) * std::size_t(map.nx) + std::size_t(i)]) << '\n';
}

void write_field_csv(std::ostream& out, int spatial_dim, std::span<const SpaceTimePoint> pts,
                     std::span<const double> values) {
  out << (spatial_dim == 2 ? "x,y,t,phi\n" : "x,t,phi\n");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out << fmt(pts[i].x.x()) << ',';
    if (spatial_dim == 2) out << fmt(pts[i].x.y()) << ',';
    out << fmt(pts[i].t) << ',' << fmt(values[i]) << '\n';
  }
}

}  // namespace edras
