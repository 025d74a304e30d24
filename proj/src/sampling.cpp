#include "edras/sampling.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>

namespace edras {

Strategy parse_strategy(const std::string& name) {
  static const std::map<std::string, Strategy> names{
      {"uniform", Strategy::uniform},       {"rar", Strategy::rar},
      {"rad", Strategy::rad},               {"rar_d", Strategy::rar_d},
      {"edras_topm", Strategy::edras_topm}, {"edras_full", Strategy::edras_full},
      {"edras_rar_combo", Strategy::edras_rar_combo}};
  const auto it = names.find(name);
  if (it == names.end()) throw Error("unknown strategy '" + name + "'");
  return it->second;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::uniform: return "uniform";
    case Strategy::rar: return "rar";
    case Strategy::rad: return "rad";
    case Strategy::rar_d: return "rar_d";
    case Strategy::edras_topm: return "edras_topm";
    case Strategy::edras_full: return "edras_full";
    case Strategy::edras_rar_combo: return "edras_rar_combo";
  }
  return "?";
}

void TrainingSet::clear_caches() {
  interior_residual.clear();
  interior_edrd.clear();
  interior_cell.clear();
  boundary_residual.clear();
  boundary_edrd.clear();
  boundary_cell.clear();
}

namespace {

int bin(double v, double lo, double hi, int n) {
  if (hi <= lo) return 0;
  const int b = int(std::floor((v - lo) / (hi - lo) * n));
  return std::clamp(b, 0, n - 1);
}

}  // namespace

CellGrid::CellGrid(const Domain& domain, const TimeRange& times, int nt, int nx, int ny, int ntheta)
    : lower_(domain.bounding_box().lower),
      upper_(domain.bounding_box().upper),
      times_(times),
      dim_(domain.spatial_dim()),
      nt_(nt),
      nx_(nx),
      ny_(domain.spatial_dim() == 2 ? ny : 1) {
  if (nt < 1 || nx < 1 || ny_ < 1) throw Error("cell grid resolution must be positive");
  endpoint_cells_ = dim_ == 1;
  nb_ = endpoint_cells_ ? 2 : ntheta;
  if (nb_ < 1) throw Error("boundary cell resolution must be positive");
  x_mid_ = domain.center().x();
  active_.assign(std::size_t(interior_cell_count()), true);
  if (dim_ == 2) {
    const Eigen::Vector2d span = upper_ - lower_;
    constexpr int probes = 7;
    for (int ix = 0; ix < nx_; ++ix)
      for (int iy = 0; iy < ny_; ++iy) {
        bool hit = false;
        for (int a = 0; a <= probes && !hit; ++a)
          for (int b = 0; b <= probes && !hit; ++b) {
            const Eigen::Vector2d p = lower_ + Eigen::Vector2d((ix + double(a) / probes) / nx_ * span.x(),
                                                               (iy + double(b) / probes) / ny_ * span.y());
            hit = domain.contains(p);
          }
        for (int it = 0; it < nt_; ++it) active_[std::size_t((it * nx_ + ix) * ny_ + iy)] = hit;
      }
  }
}

int CellGrid::interior_cell(const SpaceTimePoint& p) const {
  const int it = bin(p.t, times_.begin, times_.end, nt_);
  const int ix = bin(p.x[0], lower_[0], upper_[0], nx_);
  const int iy = dim_ == 2 ? bin(p.x[1], lower_[1], upper_[1], ny_) : 0;
  return (it * nx_ + ix) * ny_ + iy;
}

int CellGrid::boundary_cell(const BoundaryPoint& p) const {
  const int it = bin(p.t, times_.begin, times_.end, nt_);
  int ib = 0;
  if (endpoint_cells_) {
    ib = p.position.x() > x_mid_ ? 1 : 0;
  } else {
    double th = std::fmod(p.parameter, 2.0 * std::numbers::pi);
    if (th < 0) th += 2.0 * std::numbers::pi;
    ib = bin(th, 0.0, 2.0 * std::numbers::pi, nb_);
  }
  return it * nb_ + ib;
}

int CellGrid::active_interior_cells() const { return int(std::count(active_.begin(), active_.end(), true)); }

std::vector<std::size_t> rar_select(std::span<const double> scores, std::size_t m) {
  if (m > scores.size()) throw Error("requested more points than candidates");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(m), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  idx.resize(m);
  return idx;
}

std::vector<std::size_t> edras_topm(std::span<const double> edrd, std::size_t m) { return rar_select(edrd, m); }

std::vector<double> rad_probabilities(std::span<const double> scores) {
  double total = 0.0;
  for (double s : scores) {
    if (!(s >= 0.0)) throw Error("scores must be non-negative");
    total += s;
  }
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    p[i] = total > 0.0 ? scores[i] / total : 1.0 / double(scores.size());
  return p;
}

std::vector<std::size_t> rad_sample(std::span<const double> scores, std::size_t m, Rng& rng) {
  if (scores.empty()) {
    if (m > 0) throw Error("requested more points than candidates");
    return {};
  }
  std::vector<double> p = rad_probabilities(scores);
  if (std::all_of(scores.begin(), scores.end(), [](double s) { return s == 0.0; }))
    warn("rad_sample: all residuals are zero, falling back to uniform sampling");
  // Inverse-CDF draws keep the stream independent of library distribution internals.
  std::vector<double> cdf(p.size());
  std::partial_sum(p.begin(), p.end(), cdf.begin());
  std::uniform_real_distribution<double> U(0.0, cdf.back());
  std::vector<std::size_t> out;
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double u = U(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t i = std::min(std::size_t(it - cdf.begin()), p.size() - 1);
    while (p[i] == 0.0 && i + 1 < p.size()) ++i;  // never land on a zero-mass index
    while (p[i] == 0.0 && i > 0) --i;
    out.push_back(i);
  }
  return out;
}

EdrdThresholds edras_thresholds(const TrainingSet& ts) {
  if (ts.interior.empty()) throw Error("empty interior pool");
  if (ts.interior_edrd.size() != ts.interior.size()) throw Error("interior dissipation cache not populated");
  EdrdThresholds th;
  th.interior = std::accumulate(ts.interior_edrd.begin(), ts.interior_edrd.end(), 0.0) / (3.0 * double(ts.interior.size()));
  if (!ts.boundary_edrd.empty()) {
    if (ts.boundary_edrd.size() != ts.boundary.size()) throw Error("boundary dissipation cache not populated");
    th.boundary = std::accumulate(ts.boundary_edrd.begin(), ts.boundary_edrd.end(), 0.0) / (3.0 * double(ts.boundary.size()));
  }
  return th;
}

namespace {

template <class T>
void keep(std::vector<T>& v, const std::vector<bool>& mask) {
  if (v.empty()) return;
  std::size_t w = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i]) v[w++] = v[i];
  v.resize(w);
}

void keep_interior(TrainingSet& ts, const std::vector<bool>& mask) {
  keep(ts.interior, mask);
  keep(ts.interior_residual, mask);
  keep(ts.interior_edrd, mask);
  keep(ts.interior_cell, mask);
}

void keep_boundary(TrainingSet& ts, const std::vector<bool>& mask) {
  keep(ts.boundary, mask);
  keep(ts.boundary_residual, mask);
  keep(ts.boundary_edrd, mask);
  keep(ts.boundary_cell, mask);
}

std::vector<bool> smallest_mask(const std::vector<double>& v, std::size_t m) {
  std::vector<bool> mask(v.size(), true);
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  m = std::min(m, v.size());
  std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(m), idx.end(),
                    [&](std::size_t a, std::size_t b) { return v[a] < v[b] || (v[a] == v[b] && a < b); });
  for (std::size_t k = 0; k < m; ++k) mask[idx[k]] = false;
  return mask;
}

}  // namespace

TrainingSet edras_prune(const TrainingSet& ts, double interior_threshold, double boundary_threshold) {
  TrainingSet out = ts;
  if (ts.interior_edrd.size() != ts.interior.size()) throw Error("interior dissipation cache not populated");
  std::vector<bool> mask(ts.interior.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = !(ts.interior_edrd[i] < interior_threshold);
  keep_interior(out, mask);
  if (!ts.boundary_edrd.empty()) {
    std::vector<bool> bm(ts.boundary.size());
    for (std::size_t i = 0; i < bm.size(); ++i) bm[i] = !(ts.boundary_edrd[i] < boundary_threshold);
    keep_boundary(out, bm);
  }
  return out;
}

TrainingSet edras_prune_smallest(const TrainingSet& ts, std::size_t m_f, std::size_t m_b) {
  TrainingSet out = ts;
  if (ts.interior_edrd.size() != ts.interior.size()) throw Error("interior dissipation cache not populated");
  keep_interior(out, smallest_mask(ts.interior_edrd, m_f));
  if (!ts.boundary_edrd.empty()) keep_boundary(out, smallest_mask(ts.boundary_edrd, m_b));
  return out;
}

namespace {

void append_interior(TrainingSet& ts, const CandidatePool& pool, std::size_t i) {
  ts.interior.push_back(pool.interior[i]);
  if (!pool.interior_residual.empty() && ts.interior_residual.size() + 1 == ts.interior.size())
    ts.interior_residual.push_back(pool.interior_residual[i]);
  if (!pool.interior_edrd.empty() && ts.interior_edrd.size() + 1 == ts.interior.size())
    ts.interior_edrd.push_back(pool.interior_edrd[i]);
  if (!pool.interior_cell.empty() && ts.interior_cell.size() + 1 == ts.interior.size())
    ts.interior_cell.push_back(pool.interior_cell[i]);
}

void append_boundary(TrainingSet& ts, const CandidatePool& pool, std::size_t i) {
  ts.boundary.push_back(pool.boundary[i]);
  if (!pool.boundary_residual.empty() && ts.boundary_residual.size() + 1 == ts.boundary.size())
    ts.boundary_residual.push_back(pool.boundary_residual[i]);
  if (!pool.boundary_edrd.empty() && ts.boundary_edrd.size() + 1 == ts.boundary.size())
    ts.boundary_edrd.push_back(pool.boundary_edrd[i]);
  if (!pool.boundary_cell.empty() && ts.boundary_cell.size() + 1 == ts.boundary.size())
    ts.boundary_cell.push_back(pool.boundary_cell[i]);
}

// Per-cell top-up shared by the interior and boundary passes.
template <class CellOf>
std::vector<std::size_t> refill_picks(std::size_t cells, const std::vector<int>& ts_cells, std::size_t ts_size,
                                      CellOf ts_cell_of, const std::vector<int>& pool_cells,
                                      const std::vector<double>& pool_score, int target,
                                      const std::function<bool(int)>& active, bool boundary,
                                      RefillReport& report) {
  std::vector<int> count(cells, 0);
  for (std::size_t i = 0; i < ts_size; ++i) ++count[std::size_t(ts_cells.empty() ? ts_cell_of(i) : ts_cells[i])];
  std::vector<std::vector<std::size_t>> by_cell(cells);
  for (std::size_t i = 0; i < pool_cells.size(); ++i) by_cell[std::size_t(pool_cells[i])].push_back(i);
  std::vector<std::size_t> picks;
  for (std::size_t c = 0; c < cells; ++c) {
    if (count[c] >= target || !active(int(c))) continue;
    const std::size_t deficit = std::size_t(target - count[c]);
    auto& cand = by_cell[c];
    const std::size_t take = std::min(deficit, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(take), cand.end(), [&](std::size_t a, std::size_t b) {
      return pool_score[a] > pool_score[b] || (pool_score[a] == pool_score[b] && a < b);
    });
    picks.insert(picks.end(), cand.begin(), cand.begin() + std::ptrdiff_t(take));
    if (take > 0) report.changes.push_back({boundary, int(c), int(take), 0});
    if (take < deficit) {
      ++report.exhausted_cells;
      warn(std::string(boundary ? "boundary" : "interior") + " cell " + std::to_string(c) + ": candidate pool exhausted (" +
           std::to_string(take) + " of " + std::to_string(deficit) + " added)");
    }
  }
  return picks;
}

}  // namespace

TrainingSet edras_density_refill(const TrainingSet& ts, const CellGrid& grid, const CandidatePool& pool,
                                 RefillReport* report) {
  RefillReport local;
  RefillReport& rep = report ? *report : local;
  if (pool.interior_cell.size() != pool.interior.size() || pool.interior_edrd.size() != pool.interior.size())
    throw Error("candidate pool is not scored");
  TrainingSet out = ts;
  auto ts_icell = [&](std::size_t i) { return grid.interior_cell(ts.interior[i]); };
  const auto ip = refill_picks(std::size_t(grid.interior_cell_count()), ts.interior_cell, ts.interior.size(), ts_icell,
                               pool.interior_cell, pool.interior_edrd, grid.d_f0,
                               [&](int c) { return grid.interior_active(c); }, false, rep);
  for (std::size_t i : ip) append_interior(out, pool, i);
  if (grid.d_b0 > 0 && !pool.boundary_edrd.empty()) {
    if (pool.boundary_cell.size() != pool.boundary.size()) throw Error("candidate pool is not scored");
    auto ts_bcell = [&](std::size_t i) { return grid.boundary_cell(ts.boundary[i]); };
    const auto bp = refill_picks(std::size_t(grid.boundary_cell_count()), ts.boundary_cell, ts.boundary.size(), ts_bcell,
                                 pool.boundary_cell, pool.boundary_edrd, grid.d_b0, [](int) { return true; }, true, rep);
    for (std::size_t i : bp) append_boundary(out, pool, i);
  }
  return out;
}

std::vector<std::size_t> combine_rankings(std::span<const double> primary, std::size_t m_primary,
                                          std::span<const double> secondary, std::size_t m_secondary) {
  if (primary.size() != secondary.size()) throw Error("ranking sizes differ");
  std::vector<std::size_t> picks = rar_select(primary, m_primary);
  std::vector<bool> taken(primary.size(), false);
  for (std::size_t i : picks) taken[i] = true;
  const std::size_t want = std::min(primary.size(), m_primary + m_secondary);
  const auto order = rar_select(secondary, secondary.size());
  for (std::size_t i : order) {
    if (picks.size() >= want) break;
    if (!taken[i]) {
      taken[i] = true;
      picks.push_back(i);
    }
  }
  return picks;
}

namespace {

const std::vector<double>& need(const std::vector<double>& v, std::size_t n, const char* what) {
  if (v.size() != n) throw Error(std::string("candidate pool lacks ") + what + " scores");
  return v;
}

std::vector<std::size_t> uniform_picks(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  m = std::min(m, n);
  for (std::size_t k = 0; k < m; ++k) {
    std::uniform_int_distribution<std::size_t> U(k, n - 1);
    std::swap(idx[k], idx[U(rng)]);
  }
  idx.resize(m);
  return idx;
}

// RAD draws appended to `picks` until `want` distinct indices are held, then a
// residual-ranked backfill once the positive mass is used up.
void rad_fill(const std::vector<double>& res, std::size_t want, std::vector<std::size_t>& picks,
              std::vector<bool>& taken, Rng& rng) {
  std::size_t remaining_mass = 0;
  for (std::size_t i = 0; i < res.size(); ++i) remaining_mass += (!taken[i] && res[i] > 0.0);
  const bool all_zero = std::all_of(res.begin(), res.end(), [](double r) { return r == 0.0; });
  for (int round = 0; picks.size() < want && round < 64; ++round) {
    if (remaining_mass == 0 && !all_zero) break;
    for (std::size_t i : rad_sample(res, want - picks.size(), rng))
      if (!taken[i] && (res[i] > 0.0 || all_zero)) {
        taken[i] = true;
        picks.push_back(i);
        if (res[i] > 0.0) --remaining_mass;
        if (picks.size() >= want) break;
      }
  }
  if (picks.size() < want)
    for (std::size_t i : rar_select(res, res.size())) {
      if (picks.size() >= want) break;
      if (!taken[i]) {
        taken[i] = true;
        picks.push_back(i);
      }
    }
}

std::vector<std::size_t> rad_picks(const std::vector<double>& res, std::size_t m, Rng& rng) {
  std::vector<std::size_t> picks;
  std::vector<bool> taken(res.size(), false);
  rad_fill(res, std::min(m, res.size()), picks, taken, rng);
  return picks;
}

std::vector<std::size_t> rar_d_picks(const std::vector<double>& res, std::size_t m, Rng& rng) {
  std::vector<std::size_t> picks = rar_select(res, m / 2);
  std::vector<bool> taken(res.size(), false);
  for (std::size_t i : picks) taken[i] = true;
  rad_fill(res, std::min(m, res.size()), picks, taken, rng);
  return picks;
}

std::vector<std::size_t> strategy_picks(Strategy s, const std::vector<double>& residual, const std::vector<double>& edrd,
                                        std::size_t n, std::size_t m, Rng& rng) {
  m = std::min(m, n);
  switch (s) {
    case Strategy::uniform:
      return uniform_picks(n, m, rng);
    case Strategy::rar:
      return rar_select(need(residual, n, "residual"), m);
    case Strategy::rad:
      return rad_picks(need(residual, n, "residual"), m, rng);
    case Strategy::rar_d:
      return rar_d_picks(need(residual, n, "residual"), m, rng);
    case Strategy::edras_topm:
      if (edrd.empty()) return uniform_picks(n, m, rng);
      return edras_topm(need(edrd, n, "dissipation"), m);
    case Strategy::edras_rar_combo:
      if (edrd.empty()) return rar_select(need(residual, n, "residual"), m);
      return combine_rankings(need(edrd, n, "dissipation"), (m + 1) / 2, need(residual, n, "residual"), m / 2);
    case Strategy::edras_full:
      break;
  }
  throw Error("unknown strategy");
}

}  // namespace

ResampleResult resample_step(const ResampleRequest& req, const TrainingSet& ts, const CandidatePool& pool,
                             const CellGrid& grid, Rng& rng) {
  ResampleResult res;
  if (req.strategy == Strategy::edras_full) {
    const EdrdThresholds th = edras_thresholds(ts);
    TrainingSet pruned = edras_prune(ts, th.interior, th.boundary);
    // Removals per cell for the log.
    std::map<std::pair<bool, int>, int> removed;
    {
      std::vector<int> before, after;
      for (const auto& p : ts.interior) before.push_back(grid.interior_cell(p));
      for (const auto& p : pruned.interior) after.push_back(grid.interior_cell(p));
      std::map<int, int> cnt;
      for (int c : before) ++cnt[c];
      for (int c : after) --cnt[c];
      for (auto [c, k] : cnt)
        if (k > 0) removed[{false, c}] = k;
      std::map<int, int> bcnt;
      for (const auto& p : ts.boundary) ++bcnt[grid.boundary_cell(p)];
      for (const auto& p : pruned.boundary) --bcnt[grid.boundary_cell(p)];
      for (auto [c, k] : bcnt)
        if (k > 0) removed[{true, c}] = k;
    }
    RefillReport rep;
    res.set = edras_density_refill(pruned, grid, pool, &rep);
    std::map<std::pair<bool, int>, CellChange> merged;
    for (auto [key, k] : removed) merged[key] = {key.first, key.second, 0, k};
    for (const auto& c : rep.changes) {
      auto& e = merged[{c.boundary, c.cell}];
      e.boundary = c.boundary;
      e.cell = c.cell;
      e.added += c.added;
    }
    for (auto& [key, c] : merged) res.changes.push_back(c);
    if (res.set.interior.size() > req.max_interior) {
      res.set.interior.resize(req.max_interior);
      for (auto* v : {&res.set.interior_residual, &res.set.interior_edrd})
        if (v->size() > req.max_interior) v->resize(req.max_interior);
      if (res.set.interior_cell.size() > req.max_interior) res.set.interior_cell.resize(req.max_interior);
      res.saturated = true;
      warn("interior point cap reached (" + std::to_string(req.max_interior) + ")");
    }
    return res;
  }

  res.set = ts;
  std::size_t m = req.m;
  if (ts.interior.size() + m > req.max_interior) {
    m = req.max_interior > ts.interior.size() ? req.max_interior - ts.interior.size() : 0;
    res.saturated = true;
    warn("interior point cap reached (" + std::to_string(req.max_interior) + ")");
  }
  res.interior_picks = strategy_picks(req.strategy, pool.interior_residual, pool.interior_edrd, pool.interior.size(), m, rng);
  if (req.m_boundary > 0 && !pool.boundary.empty())
    res.boundary_picks = strategy_picks(req.strategy, pool.boundary_residual, pool.boundary_edrd, pool.boundary.size(),
                                        req.m_boundary, rng);
  std::map<std::pair<bool, int>, int> added;
  for (std::size_t i : res.interior_picks) {
    append_interior(res.set, pool, i);
    ++added[{false, grid.interior_cell(pool.interior[i])}];
  }
  for (std::size_t i : res.boundary_picks) {
    append_boundary(res.set, pool, i);
    ++added[{true, grid.boundary_cell(pool.boundary[i])}];
  }
  for (auto [key, k] : added) res.changes.push_back({key.first, key.second, k, 0});
  return res;
}

void write_sampling_log_header(std::ostream& out) { out << "segment,event,strategy,pool,cell,added,removed\n"; }

void append_sampling_log(std::ostream& out, int segment, int event, Strategy s, const std::vector<CellChange>& changes) {
  for (const auto& c : changes)
    out << segment << ',' << event << ',' << to_string(s) << ',' << (c.boundary ? "boundary" : "interior") << ','
        << c.cell << ',' << c.added << ',' << c.removed << '\n';
}

}  // namespace edras
