#include <doctest.h>

#include "edras/sampling.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

using namespace edras;
using Eigen::Vector2d;

namespace {

struct WarningCapture {
  std::vector<std::string> messages;
  WarningCapture() {
    set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_sink({}); }
};

SpaceTimePoint at(double x, double t = 0.5) { return {Vector2d(x, 0), t, PointTag::interior}; }

// Interior-only pool on [-1, 1] with the given positions and scores.
CandidatePool pool_of(const CellGrid& grid, const std::vector<double>& xs, const std::vector<double>& edrd,
                      std::vector<double> residual = {}) {
  CandidatePool p;
  for (double x : xs) {
    p.interior.push_back(at(x));
    p.interior_cell.push_back(grid.interior_cell(p.interior.back()));
  }
  p.interior_edrd = edrd;
  p.interior_residual = residual.empty() ? edrd : residual;
  return p;
}

TrainingSet set_of(const CellGrid& grid, const std::vector<double>& xs, const std::vector<double>& edrd) {
  TrainingSet ts;
  for (double x : xs) {
    ts.interior.push_back(at(x));
    ts.interior_cell.push_back(grid.interior_cell(ts.interior.back()));
  }
  ts.interior_edrd = edrd;
  ts.interior_residual = edrd;
  return ts;
}

std::map<int, int> cell_counts(const CellGrid& grid, const TrainingSet& ts) {
  std::map<int, int> c;
  for (const auto& p : ts.interior) ++c[grid.interior_cell(p)];
  return c;
}

const Domain kLine = Domain::interval(-1, 1);

}  // namespace

TEST_CASE("strategy names round-trip") {
  for (Strategy s : {Strategy::uniform, Strategy::rar, Strategy::rad, Strategy::rar_d, Strategy::edras_topm,
                     Strategy::edras_full, Strategy::edras_rar_combo})
    CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_WITH_AS(parse_strategy("rsmote"), "unknown strategy 'rsmote'", Error);
}

TEST_CASE("top-m selection") {
  const std::vector<double> r{0.1, 0.9, 0.5, 0.7};
  CHECK(rar_select(r, 2) == std::vector<std::size_t>{1, 3});
  CHECK(rar_select(std::vector<double>(4, 0.2), 2) == std::vector<std::size_t>{0, 1});
  CHECK(rar_select(r, 0).empty());
  CHECK_THROWS_AS(rar_select(r, 5), Error);
  CHECK(edras_topm(r, 2) == std::vector<std::size_t>{1, 3});
  CHECK(edras_topm(std::vector<double>(4, 0.2), 2) == std::vector<std::size_t>{0, 1});
  CHECK(edras_topm(r, 0).empty());
}

TEST_CASE("residual-proportional draws") {
  const std::vector<double> r{1, 3};
  const auto p = rad_probabilities(r);
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));

  Rng rng(42);
  const auto draws = rad_sample(r, 100000, rng);
  REQUIRE(draws.size() == 100000);
  const double freq = double(std::count(draws.begin(), draws.end(), 1)) / 1e5;
  CHECK(freq == doctest::Approx(0.75).epsilon(0.01 / 0.75));

  for (std::size_t i : rad_sample(std::vector<double>{0, 5}, 1000, rng)) CHECK(i == 1);
  // Zero-mass entries in the middle and at the end are skipped.
  for (std::size_t i : rad_sample(std::vector<double>{0, 2, 0, 1, 0}, 1000, rng)) CHECK((i == 1 || i == 3));

  Rng a(7), b(7);
  CHECK(rad_sample(r, 50, a) == rad_sample(r, 50, b));

  WarningCapture w;
  const auto u = rad_sample(std::vector<double>(4, 0.0), 400, rng);
  CHECK(u.size() == 400);
  CHECK(std::set<std::size_t>(u.begin(), u.end()).size() == 4);
  REQUIRE(w.messages.size() == 1);
  CHECK(w.messages[0].find("uniform") != std::string::npos);
  CHECK_THROWS_AS(rad_probabilities(std::vector<double>{1, -1}), Error);
}

TEST_CASE("dissipation thresholds") {
  TrainingSet ts;
  ts.interior = {at(0), at(0.1), at(0.2)};
  ts.interior_edrd = {3, 6, 9};
  CHECK(edras_thresholds(ts).interior == doctest::Approx(2.0));
  CHECK(edras_thresholds(ts).boundary == 0.0);
  ts.interior_edrd = {0, 0, 0};
  CHECK(edras_thresholds(ts).interior == 0.0);
  ts.boundary = {BoundaryPoint{}};
  ts.boundary_edrd = {0.3};
  CHECK(edras_thresholds(ts).boundary == doctest::Approx(0.1));
  CHECK_THROWS_AS(edras_thresholds(TrainingSet{}), Error);
  ts.interior_edrd.clear();
  CHECK_THROWS_AS(edras_thresholds(ts), Error);
}

TEST_CASE("pruning") {
  TrainingSet ts;
  ts.interior = {at(-0.5), at(0), at(0.5)};
  ts.interior_edrd = {1, 2, 3};
  ts.interior_residual = {10, 20, 30};
  const TrainingSet kept = edras_prune(ts, 2.0, 0.0);
  CHECK(kept.interior_edrd == std::vector<double>{2, 3});
  CHECK(kept.interior_residual == std::vector<double>{20, 30});
  CHECK(kept.interior[0].x.x() == 0.0);
  CHECK(edras_prune(ts, 0.0, 0.0).interior.size() == 3);
  CHECK(edras_prune(ts, 100.0, 0.0).interior.empty());

  ts.interior_edrd = {5, 1, 4};
  const TrainingSet alt = edras_prune_smallest(ts, 1, 0);
  CHECK(alt.interior_edrd == std::vector<double>{5, 4});
  CHECK(alt.interior[1].x.x() == 0.5);
}

TEST_CASE("cell grid") {
  const CellGrid g(kLine, {0, 1}, 10, 20, 14, 32);
  CHECK(g.interior_cell_count() == 200);
  CHECK(g.boundary_cell_count() == 20);
  CHECK(g.active_interior_cells() == 200);
  CHECK(g.interior_cell(at(-1, 0)) == 0);
  CHECK(g.interior_cell(at(1, 1)) == 199);
  CHECK(g.interior_cell(at(-0.95, 0.05)) == 0);
  CHECK(g.interior_cell(at(-0.85, 0.15)) == 21);
  BoundaryPoint lo, hi;
  lo.position = {-1, 0};
  hi.position = {1, 0};
  hi.t = 0.95;
  CHECK(g.boundary_cell(lo) == 0);
  CHECK(g.boundary_cell(hi) == 19);

  const Domain disk = Domain::disk({0, 0}, 1);
  const CellGrid d(disk, {0, 1}, 2, 14, 14, 32);
  CHECK(d.interior_cell_count() == 2 * 196);
  CHECK(d.active_interior_cells() < d.interior_cell_count());
  CHECK(d.active_interior_cells() > int(0.78 * d.interior_cell_count()));
  // Every disk point maps to an active cell.
  Rng r(3);
  for (const auto& p : sample_interior(disk, 2000, {0, 1}, r)) {
    const int c = d.interior_cell(p);
    CHECK(c >= 0);
    CHECK(c < d.interior_cell_count());
    CHECK(d.interior_active(c));
  }
  for (const auto& b : sample_boundary(disk, 500, {0, 1}, r)) {
    const int c = d.boundary_cell(b);
    CHECK(c >= 0);
    CHECK(c < d.boundary_cell_count());
  }
  CHECK_THROWS_AS(CellGrid(kLine, {0, 1}, 0, 20, 1, 1), Error);
}

TEST_CASE("density refill") {
  CellGrid g(kLine, {0, 1}, 1, 2, 1, 1);
  g.d_f0 = 5;
  const TrainingSet ts = set_of(g, {-0.5, -0.4, 0.1, 0.2, 0.3, 0.4, 0.5}, std::vector<double>(7, 1.0));

  SUBCASE("deficit is topped up with the highest-density candidates of the cell") {
    std::vector<double> xs, e;
    for (int k = 0; k < 10; ++k) {
      xs.push_back(-0.95 + 0.09 * k);
      e.push_back(double(k % 4));
    }
    xs.push_back(0.7);
    e.push_back(100.0);
    RefillReport rep;
    const TrainingSet out = edras_density_refill(ts, g, pool_of(g, xs, e), &rep);
    CHECK(out.interior.size() == 10);
    const auto c = cell_counts(g, out);
    CHECK(c.at(0) == 5);
    CHECK(c.at(1) == 5);
    CHECK(std::vector<double>(out.interior_edrd.begin() + 7, out.interior_edrd.end()) == std::vector<double>{3, 3, 2});
    REQUIRE(rep.changes.size() == 1);
    CHECK(rep.changes[0].cell == 0);
    CHECK(rep.changes[0].added == 3);
    CHECK(rep.exhausted_cells == 0);
  }
  SUBCASE("full cells are untouched") {
    const TrainingSet out = edras_density_refill(ts, g, pool_of(g, {0.6, 0.7}, {9, 9}));
    CHECK(out.interior.size() == 7);
  }
  SUBCASE("exhausted cells add what they can and warn") {
    WarningCapture w;
    RefillReport rep;
    const TrainingSet out = edras_density_refill(ts, g, pool_of(g, {-0.9}, {0.5}), &rep);
    CHECK(out.interior.size() == 8);
    CHECK(rep.exhausted_cells == 1);
    REQUIRE(w.messages.size() == 1);
    CHECK(w.messages[0].find("exhausted (1 of 3 added)") != std::string::npos);
  }
  SUBCASE("unscored pools are rejected") {
    CandidatePool p;
    p.interior = {at(0)};
    CHECK_THROWS_AS(edras_density_refill(ts, g, p), Error);
  }
}

TEST_CASE("boundary refill in the dynamic setting") {
  const Domain disk = Domain::disk({0, 0}, 1);
  CellGrid g(disk, {0, 1}, 1, 4, 4, 4);
  g.d_f0 = 0;
  g.d_b0 = 2;
  TrainingSet ts;
  ts.interior = {at(0.1)};
  ts.interior_edrd = {1.0};
  ts.boundary = {disk.boundary_point(0.1, 0.5)};
  ts.boundary_edrd = {1.0};
  CandidatePool p;
  for (int k = 0; k < 16; ++k) {
    p.boundary.push_back(disk.boundary_point(0.05 + k * 0.39, 0.5));
    p.boundary_cell.push_back(g.boundary_cell(p.boundary.back()));
    p.boundary_edrd.push_back(double(k));
    p.boundary_residual.push_back(0.0);
  }
  p.interior_cell = {};
  p.interior_edrd = {};
  RefillReport rep;
  const TrainingSet out = edras_density_refill(ts, g, p, &rep);
  std::map<int, int> c;
  for (const auto& b : out.boundary) ++c[g.boundary_cell(b)];
  for (int k = 0; k < 4; ++k) CHECK(c[k] == 2);
  CHECK(out.boundary_edrd.size() == out.boundary.size());
}

TEST_CASE("combined rankings de-duplicate and backfill") {
  const std::vector<double> edrd{9, 8, 7, 1, 1, 1};
  const std::vector<double> res{9, 1, 1, 8, 7, 6};
  const auto picks = combine_rankings(edrd, 2, res, 2);
  CHECK(picks == std::vector<std::size_t>{0, 1, 3, 4});
  CHECK(combine_rankings(edrd, 3, res, 10).size() == 6);
  CHECK_THROWS_AS(combine_rankings(edrd, 1, std::vector<double>{1}, 1), Error);
}

TEST_CASE("resampling dispatch") {
  CellGrid g(kLine, {0, 1}, 2, 20, 1, 1);
  g.d_f0 = 3;
  Rng prng(11);
  const auto pts = sample_interior(kLine, 1000, {0, 1}, prng);
  CandidatePool pool;
  pool.interior = pts;
  for (const auto& p : pts) {
    pool.interior_cell.push_back(g.interior_cell(p));
    pool.interior_edrd.push_back(std::exp(-20 * std::pow(p.x.x() - 0.5, 2)));
    pool.interior_residual.push_back(std::exp(-20 * std::pow(p.x.x() + 0.5, 2)));
  }
  TrainingSet ts;
  ts.interior = sample_interior(kLine, 50, {0, 1}, prng);
  ts.interior_edrd.assign(50, 1.0);
  ts.interior_residual.assign(50, 1.0);
  ResampleRequest req;
  req.m = 100;

  SUBCASE("uniform") {
    req.strategy = Strategy::uniform;
    Rng r(1);
    const auto out = resample_step(req, ts, pool, g, r);
    CHECK(out.set.interior.size() == 150);
    CHECK(std::set<std::size_t>(out.interior_picks.begin(), out.interior_picks.end()).size() == 100);
    for (const auto& p : out.set.interior) CHECK(kLine.contains(p.x));
    CHECK(out.set.interior_edrd.size() == 150);
    int added = 0;
    for (const auto& c : out.changes) added += c.added;
    CHECK(added == 100);
  }
  SUBCASE("rar and edras_topm follow their rankings") {
    Rng r(1);
    req.strategy = Strategy::rar;
    CHECK(resample_step(req, ts, pool, g, r).interior_picks == rar_select(pool.interior_residual, 100));
    req.strategy = Strategy::edras_topm;
    CHECK(resample_step(req, ts, pool, g, r).interior_picks == edras_topm(pool.interior_edrd, 100));
  }
  SUBCASE("combo: half by dissipation and half by residual") {
    req.strategy = Strategy::edras_rar_combo;
    Rng r(1);
    const auto out = resample_step(req, ts, pool, g, r);
    REQUIRE(out.interior_picks.size() == 100);
    const auto e = edras_topm(pool.interior_edrd, 50);
    const auto q = rar_select(pool.interior_residual, 50);
    CHECK(std::vector<std::size_t>(out.interior_picks.begin(), out.interior_picks.begin() + 50) == e);
    CHECK(std::vector<std::size_t>(out.interior_picks.begin() + 50, out.interior_picks.end()) == q);
  }
  SUBCASE("rad and rar_d give distinct picks, reproducibly") {
    for (Strategy s : {Strategy::rad, Strategy::rar_d}) {
      req.strategy = s;
      Rng a(5), b(5);
      const auto x = resample_step(req, ts, pool, g, a);
      const auto y = resample_step(req, ts, pool, g, b);
      CHECK(x.interior_picks == y.interior_picks);
      CHECK(std::set<std::size_t>(x.interior_picks.begin(), x.interior_picks.end()).size() == 100);
    }
    req.strategy = Strategy::rar_d;
    Rng a(5);
    const auto x = resample_step(req, ts, pool, g, a);
    const auto top = rar_select(pool.interior_residual, 50);
    CHECK(std::vector<std::size_t>(x.interior_picks.begin(), x.interior_picks.begin() + 50) == top);
  }
  SUBCASE("interior cap") {
    WarningCapture w;
    req.strategy = Strategy::rar;
    req.max_interior = 120;
    Rng r(1);
    const auto out = resample_step(req, ts, pool, g, r);
    CHECK(out.set.interior.size() == 120);
    CHECK(out.saturated);
    CHECK_FALSE(w.messages.empty());
  }
  SUBCASE("missing scores") {
    CandidatePool bare = pool;
    bare.interior_residual.clear();
    req.strategy = Strategy::rar;
    Rng r(1);
    CHECK_THROWS_AS(resample_step(req, ts, bare, g, r), Error);
  }
  SUBCASE("full density-aware step keeps every cell at the density target") {
    req.strategy = Strategy::edras_full;
    Rng r(1);
    const auto out = resample_step(req, ts, pool, g, r);
    std::map<int, int> pool_count;
    for (int c : pool.interior_cell) ++pool_count[c];
    const auto c = cell_counts(g, out.set);
    for (int k = 0; k < g.interior_cell_count(); ++k) {
      const int have = c.count(k) ? c.at(k) : 0;
      CHECK(have >= std::min(g.d_f0, pool_count[k]));
    }
  }
}

TEST_CASE("full density-aware step is idempotent on a saturated set") {
  CellGrid g(kLine, {0, 1}, 2, 10, 1, 1);
  g.d_f0 = 4;
  Rng prng(2);
  CandidatePool pool;
  pool.interior = sample_interior(kLine, 800, {0, 1}, prng);
  for (const auto& p : pool.interior) {
    pool.interior_cell.push_back(g.interior_cell(p));
    pool.interior_edrd.push_back(1.0 + 0.5 * std::sin(7 * p.x.x() + 3 * p.t));
    pool.interior_residual.push_back(1.0);
  }
  TrainingSet ts;
  ts.interior = {pool.interior[0], pool.interior[1]};
  ts.interior_edrd = {pool.interior_edrd[0], pool.interior_edrd[1]};
  ts.interior_residual = {1.0, 1.0};
  ResampleRequest req;
  req.strategy = Strategy::edras_full;
  Rng r(1);
  const auto first = resample_step(req, ts, pool, g, r);
  // Refilled sets from the pool sit well above a third of the mean.
  const auto second = resample_step(req, first.set, pool, g, r);
  CHECK(second.set.interior.size() == first.set.interior.size());
  CHECK(second.changes.empty());
  for (std::size_t i = 0; i < first.set.interior.size(); ++i) {
    CHECK(second.set.interior[i].x == first.set.interior[i].x);
    CHECK(second.set.interior[i].t == first.set.interior[i].t);
  }
}

TEST_CASE("sampling log") {
  std::ostringstream out;
  write_sampling_log_header(out);
  append_sampling_log(out, 2, 7, Strategy::edras_full, {{false, 3, 4, 1}, {true, 0, 2, 0}});
  CHECK(out.str() ==
        "segment,event,strategy,pool,cell,added,removed\n"
        "2,7,edras_full,interior,3,4,1\n"
        "2,7,edras_full,boundary,0,2,0\n");
}
