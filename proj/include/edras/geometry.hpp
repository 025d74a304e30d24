#pragma once

#include "edras/common.hpp"

#include <memory>
#include <vector>

namespace edras {

struct Box {
  Eigen::Vector2d lower = Eigen::Vector2d::Zero();
  Eigen::Vector2d upper = Eigen::Vector2d::Zero();

  bool contains(const Eigen::Vector2d& p, int dim) const;
};

/// Smoothed indicator of a domain; the boundary is its `level` set.
struct CharacteristicField {
  std::function<double(const Eigen::Vector2d&)> evaluator;
  double level = 0.5;
};

struct CurveMetric {
  double speed = 0.0;                                   // |gamma'|
  Eigen::Vector2d second = Eigen::Vector2d::Zero();     // gamma''
  double curvature = 0.0;                               // signed, positive for convex
  Eigen::Vector2d first = Eigen::Vector2d::Zero();      // gamma'
};

class Domain {
 public:
  enum class Kind { interval, rectangle, disk, ellipse, implicit };

  static Domain interval(double lower, double upper);
  static Domain rectangle(const Eigen::Vector2d& lower, const Eigen::Vector2d& upper);
  static Domain disk(const Eigen::Vector2d& center, double radius);
  static Domain ellipse(const Eigen::Vector2d& center, double a, double b);
  /// `seed` must lie inside; boundary rays are cast from it.
  static Domain implicit(CharacteristicField field, const Box& bounding_box,
                         const Eigen::Vector2d& seed);

  Kind kind() const { return kind_; }
  int spatial_dim() const { return kind_ == Kind::interval ? 1 : 2; }
  const Box& bounding_box() const { return box_; }
  const Eigen::Vector2d& center() const { return center_; }
  /// interval: (lower, upper); disk: (r, r); ellipse: (a, b); rectangle: half sides.
  const Eigen::Vector2d& extents() const { return extents_; }
  const CharacteristicField& field() const;
  bool has_parameterization() const;

  bool contains(const Eigen::Vector2d& x) const;

  /// gamma(theta) for parameterized boundaries, theta in [0, 2 pi).
  Eigen::Vector2d boundary_position(double theta) const;
  CurveMetric curvature_and_metric(double theta) const;
  BoundaryPoint boundary_point(double theta, double t) const;

  /// Lebesgue measure of the domain (length or area), exact for analytic kinds.
  double measure() const;
  /// Perimeter (0 for intervals), exact for disk and rectangle, quadrature for ellipse.
  double perimeter() const;

  static constexpr double kBoundaryTol = 1e-12;

 private:
  Kind kind_ = Kind::interval;
  Box box_;
  Eigen::Vector2d center_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d extents_ = Eigen::Vector2d::Zero();
  std::shared_ptr<const CharacteristicField> field_;
  Eigen::Vector2d seed_ = Eigen::Vector2d::Zero();

  friend std::vector<BoundaryPoint> sample_boundary(const Domain&, std::size_t, const TimeRange&, Rng&);
};

/// Uniform rejection sampling from the bounding box, times uniform on `times`.
std::vector<SpaceTimePoint> sample_interior(const Domain& domain, std::size_t n,
                                            const TimeRange& times, Rng& rng);

/// Initial-time points: uniform in space at a fixed time.
std::vector<SpaceTimePoint> sample_initial(const Domain& domain, std::size_t n, double t, Rng& rng);

/// Boundary points with uniform parameter (or ray angle for implicit domains).
/// For intervals the two endpoints alternate.
std::vector<BoundaryPoint> sample_boundary(const Domain& domain, std::size_t n,
                                           const TimeRange& times, Rng& rng);

/// Bisection on the segment [inside, outside] for the level set of `field`.
Eigen::Vector2d bisect_boundary(const CharacteristicField& field, const Eigen::Vector2d& inside,
                                const Eigen::Vector2d& outside, double tol,
                                int* iterations = nullptr);

/// Characteristic field of the disk smoothed by a tanh transition layer of width `w`.
CharacteristicField smoothed_disk_field(const Eigen::Vector2d& center, double radius, double w);

}  // namespace edras
