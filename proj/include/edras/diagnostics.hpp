#pragma once

#include "edras/network.hpp"
#include "edras/reference_fdm.hpp"
#include "edras/sampling.hpp"

#include <array>
#include <iosfwd>
#include <optional>

namespace edras {

struct MetricsReport {
  double mse = 0.0;
  double relative_mse = 0.0;
  double mae = 0.0;
  double relative_mae = 0.0;
  double max_abs_error = 0.0;
  double relative_linf = 0.0;
  std::size_t points = 0;
  std::string grid;
};

/// Pointwise comparison of model values against reference values.
MetricsReport error_metrics(std::span<const double> model, std::span<const double> reference);

/// Oracle nodes at every stored time within [0, model terminal time].
std::vector<SpaceTimePoint> oracle_grid_points(const GridSolution& oracle, double t_max);

/// Compares the model with the oracle on its native grid and stored times.
MetricsReport error_metrics(const SolutionModel& model, const GridSolution& oracle);

enum class Group { A, B, C, D };

char group_name(Group g);

struct GroupThresholds {
  double e0 = 1e-3;
  std::optional<double> R0;  // mean residual when absent

  void validate() const;
};

/// A: R <= R0, e > e0; B: R > R0, e > e0; C: R <= R0, e <= e0; D: R > R0, e <= e0.
std::vector<Group> classify_groups(std::span<const double> residuals, std::span<const double> errors,
                                   const GroupThresholds& th);

struct GroupProbabilities {
  std::array<double, 4> p{};  // A, B, C, D

  double operator[](Group g) const { return p[std::size_t(g)]; }
  double sum() const { return p[0] + p[1] + p[2] + p[3]; }
};

/// Fraction of the picks falling into each group.
GroupProbabilities pick_probabilities(std::span<const Group> groups, std::span<const std::size_t> picks);

/// Selection probabilities of a strategy on one scored pool. Deterministic
/// strategies select once; sampling strategies average `repeats` draws with
/// independent derived seeds.
GroupProbabilities strategy_group_probabilities(Strategy s, std::span<const double> residuals,
                                                std::span<const double> edrd, std::span<const Group> groups,
                                                std::size_t m, int repeats, std::uint64_t seed);

/// Group audit of one candidate pool, restricted to a time slab.
struct GroupAudit {
  GroupThresholds thresholds;
  double t_lower = 0.0;
  double t_upper = 1.0;
  std::size_t m = 100;
  int repeats = 100;
  std::vector<Strategy> strategies{Strategy::edras_topm, Strategy::rar, Strategy::rad};
};

struct GroupAuditRow {
  Strategy strategy = Strategy::rar;
  GroupProbabilities p;
  std::size_t pool = 0;             // slab candidates
  std::size_t above_threshold = 0;  // candidates with R > R0
  std::array<std::size_t, 4> counts{};
};

/// Classifies the slab part of a scored pool against the oracle and estimates
/// each strategy's group probabilities. Empty when no candidate lies in the slab.
std::vector<GroupAuditRow> audit_groups(const GridSolution& oracle, const Mlp& net, int spatial_dim,
                                        std::span<const SpaceTimePoint> pts, std::span<const double> residuals,
                                        std::span<const double> edrd, const GroupAudit& audit, std::uint64_t seed);

struct EnergyRow {
  double t = 0.0;
  EnergyBreakdown energy;
};

std::vector<EnergyRow> energy_curve(const PdeSystem& sys, const GradientField& field, std::span<const double> times,
                                    const Quadrature& quad);

/// Standard deviation of oracle values in a (2 half_x + 1) x (2 half_t + 1)
/// node window over space and stored slices, clipped at the edges. 1D only.
struct LocalStdMap {
  int nt = 0;
  int nx = 0;
  Eigen::MatrixXd sigma;  // nt x nx
  std::vector<bool> mask;  // row-major, sigma > threshold
};

LocalStdMap local_std_map(const GridSolution& oracle, int half_x = 2, int half_t = 2, double threshold = 1e-2);

void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricsReport>>& rows);
void write_group_csv_header(std::ostream& out);
void write_group_csv_row(std::ostream& out, int segment, int event, int epoch, Strategy s, const GroupProbabilities& p);
void write_energy_csv(std::ostream& out, const std::vector<EnergyRow>& rows);
void write_local_std_csv(std::ostream& out, const GridSolution& oracle, const LocalStdMap& map);
/// Columns x[,y],t,phi.
void write_field_csv(std::ostream& out, int spatial_dim, std::span<const SpaceTimePoint> pts,
                     std::span<const double> values);

}  // namespace edras
