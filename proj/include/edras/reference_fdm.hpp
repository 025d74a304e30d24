#pragma once

#include "edras/model.hpp"

#include <filesystem>
#include <vector>

namespace edras {

enum class GridKind { periodic1d, disk };

/// Stored time slices of a finite-difference run.
///
/// 1D nodes: x_i = x_lower + i h, i < nx (periodic, x_upper identified with x_lower).
/// Disk nodes: index 0 is the origin, then ring-major (ring i = 1..nr, angle j).
struct GridSolution {
  GridKind kind = GridKind::periodic1d;
  BoundaryRegime regime = BoundaryRegime::periodic1d;
  int nx = 0;
  double x_lower = -1.0;
  double x_upper = 1.0;
  int nr = 0;
  int ntheta = 0;
  double radius = 1.0;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double dt = 0.0;
  double eps = 0.0, eps_s = 0.0, Mb = 1.0, Ms = 1.0;
  std::vector<double> times;
  std::vector<Eigen::VectorXd> slices;
  std::vector<double> energies;  // discrete free energy per slice

  Eigen::Index node_count() const;
  double spacing() const;  // h (1D) or dr (disk)
  Eigen::Vector2d node_position(Eigen::Index k) const;
};

/// Source term added to the right-hand side (manufactured solutions).
using Forcing = std::function<double(const Eigen::Vector2d& x, double t)>;

struct FdmOptions {
  double dt = 1e-5;
  /// Linear stabilization constant of the semi-implicit step.
  double stabilization = 2.0;
  std::vector<double> store_times;
  Forcing forcing;
  /// Replaces sys.initial_condition when set.
  InitialCondition initial;
};

/// Semi-implicit periodic solver on [x_lower, x_upper).
GridSolution solve_1d_periodic(const PdeSystem& sys, int nx, const FdmOptions& opt,
                               double x_lower = -1.0, double x_upper = 1.0);

/// Polar-grid solver on a disk with Neumann or dynamic boundary conditions.
GridSolution solve_2d_disk(const PdeSystem& sys, int nr, int ntheta, BoundaryRegime regime,
                           const FdmOptions& opt, double radius = 1.0,
                           const Eigen::Vector2d& center = Eigen::Vector2d::Zero());

/// Linear in space (bilinear in r, theta on the disk) and linear between stored slices.
double interpolate(const GridSolution& sol, const SpaceTimePoint& p);
/// Spatial interpolation within one stored slice.
double interpolate_slice(const GridSolution& sol, std::size_t slice, const Eigen::Vector2d& x);

/// Discrete free energy of a field on the solution's grid.
double discrete_energy(const GridSolution& sol, const Eigen::VectorXd& phi);

/// Writes <base>.bin (little-endian float64, slice-major) and <base>.json metadata.
void save_oracle(const std::filesystem::path& base, const GridSolution& sol);
GridSolution load_oracle(const std::filesystem::path& base);

/// Default stored times: segment endpoints plus figure snapshot times.
std::vector<double> default_store_times(const std::vector<double>& segment_ends);

}  // namespace edras
