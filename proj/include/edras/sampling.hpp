#pragma once

#include "edras/geometry.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <span>
#include <vector>

namespace edras {

enum class Strategy { uniform, rar, rad, rar_d, edras_topm, edras_full, edras_rar_combo };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

/// Collocation pools J_f, J_b, J_i with per-point caches.
///
/// Cache vectors are either empty or parallel to their pool; `cache_stamp`
/// records the model version they were computed with.
struct TrainingSet {
  std::vector<SpaceTimePoint> interior;
  std::vector<BoundaryPoint> boundary;
  std::vector<SpaceTimePoint> initial;
  std::vector<double> initial_target;

  std::vector<double> interior_residual;
  std::vector<double> interior_edrd;
  std::vector<int> interior_cell;
  std::vector<double> boundary_residual;
  std::vector<double> boundary_edrd;
  std::vector<int> boundary_cell;
  std::uint64_t cache_stamp = 0;

  void clear_caches();
};

/// Dense candidate sets S_f and S_b with the same cache layout as TrainingSet.
struct CandidatePool {
  std::vector<SpaceTimePoint> interior;
  std::vector<BoundaryPoint> boundary;
  std::vector<double> interior_residual;
  std::vector<double> interior_edrd;
  std::vector<int> interior_cell;
  std::vector<double> boundary_residual;
  std::vector<double> boundary_edrd;
  std::vector<int> boundary_cell;
  std::uint64_t seed = 0;
};

/// Space-time partition used by density detection.
///
/// 1D: nt x nx rectangles; 2D: nt x nx x ny boxes over the bounding box, of
/// which only those meeting the domain are active. Boundary cells: nt x ntheta
/// parameter arcs (nt x 2 endpoints in 1D).
class CellGrid {
 public:
  CellGrid() = default;
  CellGrid(const Domain& domain, const TimeRange& times, int nt, int nx, int ny, int ntheta);

  int interior_cell(const SpaceTimePoint& p) const;
  int boundary_cell(const BoundaryPoint& p) const;
  int interior_cell_count() const { return nt_ * nx_ * ny_; }
  int boundary_cell_count() const { return nt_ * nb_; }
  bool interior_active(int cell) const { return active_[std::size_t(cell)]; }
  int active_interior_cells() const;

  int d_f0 = 1;
  int d_b0 = 0;

 private:
  Eigen::Vector2d lower_ = Eigen::Vector2d::Zero(), upper_ = Eigen::Vector2d::Zero();
  TimeRange times_;
  int dim_ = 1, nt_ = 1, nx_ = 1, ny_ = 1, nb_ = 1;
  bool endpoint_cells_ = false;
  double x_mid_ = 0.0;
  std::vector<bool> active_;
};

/// Indices of the m largest scores; ties go to the lower index.
std::vector<std::size_t> rar_select(std::span<const double> scores, std::size_t m);
/// Same ranking applied to dissipation densities.
std::vector<std::size_t> edras_topm(std::span<const double> edrd, std::size_t m);
/// m i.i.d. draws with probability proportional to score (with replacement).
/// All-zero scores fall back to uniform draws with a warning.
std::vector<std::size_t> rad_sample(std::span<const double> scores, std::size_t m, Rng& rng);
/// Normalized selection probabilities score_i / sum(score).
std::vector<double> rad_probabilities(std::span<const double> scores);

struct EdrdThresholds {
  double interior = 0.0;
  double boundary = 0.0;
};

/// Mean dissipation density over each pool divided by 3 (0 when a pool has no
/// dissipation cache, e.g. regimes without surface dynamics).
EdrdThresholds edras_thresholds(const TrainingSet& ts);

/// Removes points with dissipation density strictly below the thresholds.
TrainingSet edras_prune(const TrainingSet& ts, double interior_threshold, double boundary_threshold);
/// Alternative pruning: removes the m_f / m_b points with the smallest density.
TrainingSet edras_prune_smallest(const TrainingSet& ts, std::size_t m_f, std::size_t m_b);

struct CellChange {
  bool boundary = false;
  int cell = 0;
  int added = 0;
  int removed = 0;
};

struct RefillReport {
  std::vector<CellChange> changes;
  int exhausted_cells = 0;
};

/// Tops up every active cell below d_f0 (d_b0 on the boundary) with the
/// highest-density pool candidates of that cell.
TrainingSet edras_density_refill(const TrainingSet& ts, const CellGrid& grid, const CandidatePool& pool,
                                 RefillReport* report = nullptr);

struct ResampleRequest {
  Strategy strategy = Strategy::edras_topm;
  std::size_t m = 100;
  std::size_t m_boundary = 0;
  std::size_t max_interior = std::numeric_limits<std::size_t>::max();
};

struct ResampleResult {
  TrainingSet set;
  std::vector<std::size_t> interior_picks;  // pool indices appended to J_f
  std::vector<std::size_t> boundary_picks;
  std::vector<CellChange> changes;
  bool saturated = false;
};

/// One resampling event. Pool and training-set caches must be populated for
/// the scores the strategy reads.
ResampleResult resample_step(const ResampleRequest& req, const TrainingSet& ts, const CandidatePool& pool,
                             const CellGrid& grid, Rng& rng);

/// Picks of a top-m strategy pair with duplicates removed and backfilled from
/// the next-ranked candidates of `secondary`.
std::vector<std::size_t> combine_rankings(std::span<const double> primary, std::size_t m_primary,
                                          std::span<const double> secondary, std::size_t m_secondary);

void write_sampling_log_header(std::ostream& out);
void append_sampling_log(std::ostream& out, int segment, int event, Strategy s, const std::vector<CellChange>& changes);

}  // namespace edras
