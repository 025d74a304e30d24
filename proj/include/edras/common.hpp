#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace edras {

/// All recoverable failures in the library surface as this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a master seed and a purpose tag.
/// SplitMix64 finalizer over (seed, tag, index).
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

enum class PointTag { interior, boundary, initial };

/// A spatial location (y unused in 1D) together with a time stamp.
struct SpaceTimePoint {
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  double t = 0.0;
  PointTag tag = PointTag::interior;
};

/// A boundary collocation point. `parameter` is the curve parameter theta for
/// parameterized boundaries (disk, ellipse, rectangle) and the ray angle for
/// implicit boundaries; `has_parameter` is false only for 1D endpoints.
struct BoundaryPoint {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d normal = Eigen::Vector2d::UnitX();
  Eigen::Vector2d tangent = Eigen::Vector2d::UnitY();
  double parameter = 0.0;
  bool has_parameter = false;
  double t = 0.0;
};

struct TimeRange {
  double begin = 0.0;
  double end = 1.0;
};

// Warnings are routed through a replaceable sink so tests can observe them.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);
void warn(const std::string& message);
void info(const std::string& message);
void set_verbose(bool verbose);

/// Keeps large freed blocks in the heap (glibc) so repeated batch-sized
/// temporaries do not page-fault on every pass. Call once at startup.
void retain_freed_memory();

}  // namespace edras
