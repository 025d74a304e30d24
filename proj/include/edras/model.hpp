#pragma once

#include "edras/common.hpp"
#include "edras/geometry.hpp"

#include <optional>
#include <span>

namespace edras {

enum class BoundaryRegime { periodic1d, neumann, dynamic };

BoundaryRegime parse_regime(const std::string& name);
std::string to_string(BoundaryRegime r);

using ScalarMap = std::function<double(double)>;
using InitialCondition = std::function<double(const Eigen::Vector2d&)>;

/// Allen-Cahn bulk/surface system parameters.
struct PdeSystem {
  double eps = 0.0;    // bulk interface width
  double eps_s = 0.0;  // surface interface width
  double Mb = 1.0;
  double Ms = 1.0;
  BoundaryRegime regime = BoundaryRegime::neumann;
  ScalarMap f;         // bulk potential
  ScalarMap f_prime;
  ScalarMap f_second;
  ScalarMap g;         // surface potential
  ScalarMap g_prime;
  ScalarMap g_second;
  InitialCondition initial_condition;
  double terminal_time = 1.0;

  void validate() const;
};

/// Double-well potential 1/4 (phi^2 - 1)^2 and its derivatives.
double double_well(double phi);
double double_well_prime(double phi);
double double_well_second(double phi);

/// Installs the double-well potential for both f and g.
void use_double_well(PdeSystem& sys);

/// Named smooth initial fields.
InitialCondition make_initial_condition(const std::string& name, double value = 0.0);

/// 1D periodic preset: phi_t = 1e-4 phi_xx - 5 phi^3 + 5 phi on [-1, 1], phi0 = x^2 cos(pi x).
PdeSystem preset_ac1d_periodic();
/// 2D presets on a disk with the multi-mode initial field.
PdeSystem preset_ac2d_neumann(double Mb = 2.0);
PdeSystem preset_ac2d_dynamic(double Mb = 2.0, double Ms = 2.0);
PdeSystem make_preset(const std::string& name);

/// Pointwise field data. Entries a density does not need may be absent.
struct FieldSample {
  double value = 0.0;
  std::optional<double> dt;
  std::optional<Eigen::Vector2d> grad;
  std::optional<double> laplacian;
  std::optional<double> surf_laplacian;
  std::optional<double> normal_deriv;
  std::optional<Eigen::Vector2d> normal;
};

double bulk_chemical_potential(const PdeSystem& sys, const FieldSample& s);
double surface_chemical_potential(const PdeSystem& sys, const FieldSample& s);

double bulk_residual_density(const PdeSystem& sys, const FieldSample& s);
double boundary_residual_density(const PdeSystem& sys, const FieldSample& s);
double neumann_residual_density(const PdeSystem& sys, const FieldSample& s);

/// Flux-form dissipation densities phi_t^2 / M.
double edrd_bulk(const PdeSystem& sys, const FieldSample& s);
double edrd_boundary(const PdeSystem& sys, const FieldSample& s);
/// Force-form bulk dissipation M_b mu^2.
double edrd_bulk_force_form(const PdeSystem& sys, const FieldSample& s);

double bulk_energy_density(const PdeSystem& sys, const FieldSample& s);
double surface_energy_density(const PdeSystem& sys, const FieldSample& s);

/// Laplace-Beltrami operator along a parameterized curve from the derivatives
/// of phi(gamma(theta)): d1 = d/dtheta, d2 = d^2/dtheta^2.
double surface_laplacian_parametric(double d1, double d2, const Eigen::Vector2d& gamma_prime,
                                    const Eigen::Vector2d& gamma_second);
/// Curvature form t^T H t - kappa n.grad(phi); used as a cross-check.
double surface_laplacian_curvature_form(double tangent_hessian, double curvature, double normal_deriv);

struct QuadratureSpec {
  enum class Rule { tensor, monte_carlo };
  Rule rule = Rule::tensor;
  int radial = 64;     // r nodes (or x nodes for intervals/rectangles)
  int angular = 256;   // theta nodes (or y nodes for rectangles), also boundary nodes
  std::size_t samples = 20000;  // monte-carlo count
  std::uint64_t seed = 12345;
};

struct Quadrature {
  std::vector<Eigen::Vector2d> bulk_nodes;
  std::vector<double> bulk_weights;
  std::vector<BoundaryPoint> surface_nodes;
  std::vector<double> surface_weights;
};

Quadrature make_quadrature(const Domain& domain, const QuadratureSpec& spec);

/// Values and spatial gradients of a field at a fixed time.
using GradientField = std::function<void(std::span<const Eigen::Vector2d> xs, double t,
                                         std::vector<double>& values,
                                         std::vector<Eigen::Vector2d>& grads)>;

struct EnergyBreakdown {
  double bulk = 0.0;
  double surface = 0.0;
  double total = 0.0;
};

/// Surface energy is included only for the dynamic regime.
EnergyBreakdown total_energy(const PdeSystem& sys, const GradientField& field, double t,
                             const Quadrature& quad);

}  // namespace edras
