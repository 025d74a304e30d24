#pragma once

#include "edras/geometry.hpp"
#include "edras/model.hpp"
#include "edras/network.hpp"

#include <span>
#include <vector>

namespace edras {

/// Network inputs and channel layout for a batch of interior points.
/// Channels: first = {t, x[, y]}, second = {xx[, yy]}.
struct InteriorBatch {
  Eigen::MatrixXd inputs;
  ChannelRequest request;
};

/// Boundary batch. Channels: first = {t, x, y[, gamma']}, second = {gamma'} when
/// the surface Laplacian is requested; 1D: first = {t, x}.
struct BoundaryBatch {
  Eigen::MatrixXd inputs;
  ChannelRequest request;
  std::vector<CurveMetric> metrics;  // per point, only with the surface Laplacian
  bool surface_laplacian = false;
};

InteriorBatch make_interior_batch(int spatial_dim, std::span<const SpaceTimePoint> pts);
BoundaryBatch make_boundary_batch(const Domain& domain, std::span<const BoundaryPoint> pts,
                                  bool surface_laplacian);

std::vector<FieldSample> interior_samples(int spatial_dim, const ChannelOutput& out);
std::vector<FieldSample> boundary_samples(const Domain& domain, std::span<const BoundaryPoint> pts,
                                          const BoundaryBatch& batch, const ChannelOutput& out);

/// Exact value, time derivative, gradient and Laplacian at an interior point.
FieldSample evaluate_with_derivatives(const SolutionModel& model, const SpaceTimePoint& p);
/// Adds the normal derivative and, for parameterized 2D boundaries, the surface Laplacian.
FieldSample evaluate_with_derivatives(const SolutionModel& model, const BoundaryPoint& p,
                                      const Domain& domain);

/// Batched helpers over a single network (all points owned by it).
std::vector<FieldSample> evaluate_interior(const Mlp& net, int spatial_dim,
                                           std::span<const SpaceTimePoint> pts);
std::vector<FieldSample> evaluate_boundary(const Mlp& net, const Domain& domain,
                                           std::span<const BoundaryPoint> pts, bool surface_laplacian);

/// Adapts a composite model to the energy-quadrature field interface.
GradientField gradient_field(const SolutionModel& model);

}  // namespace edras
