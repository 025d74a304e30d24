#include "edras/geometry.hpp"

#include <cmath>
#include <numbers>

namespace edras {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_finite(const Eigen::Vector2d& x) {
  if (!x.allFinite()) throw Error("non-finite point");
}

Eigen::Vector2d rotate_ccw(const Eigen::Vector2d& v) { return {-v.y(), v.x()}; }

}  // namespace

bool Box::contains(const Eigen::Vector2d& p, int dim) const {
  for (int i = 0; i < dim; ++i)
    if (p[i] < lower[i] || p[i] > upper[i]) return false;
  return true;
}

Domain Domain::interval(double lower, double upper) {
  if (!(upper > lower)) throw Error("interval requires upper > lower");
  Domain d;
  d.kind_ = Kind::interval;
  d.box_ = {{lower, 0.0}, {upper, 0.0}};
  d.center_ = {0.5 * (lower + upper), 0.0};
  d.extents_ = {lower, upper};
  return d;
}

Domain Domain::rectangle(const Eigen::Vector2d& lower, const Eigen::Vector2d& upper) {
  if (!((upper - lower).array() > 0.0).all()) throw Error("rectangle requires upper > lower");
  Domain d;
  d.kind_ = Kind::rectangle;
  d.box_ = {lower, upper};
  d.center_ = 0.5 * (lower + upper);
  d.extents_ = 0.5 * (upper - lower);
  return d;
}

Domain Domain::disk(const Eigen::Vector2d& center, double radius) {
  if (!(radius > 0.0)) throw Error("disk radius must be positive");
  Domain d;
  d.kind_ = Kind::disk;
  d.center_ = center;
  d.extents_ = {radius, radius};
  d.box_ = {center.array() - radius, center.array() + radius};
  return d;
}

Domain Domain::ellipse(const Eigen::Vector2d& center, double a, double b) {
  if (!(a > 0.0 && b > 0.0)) throw Error("ellipse semi-axes must be positive");
  Domain d;
  d.kind_ = Kind::ellipse;
  d.center_ = center;
  d.extents_ = {a, b};
  d.box_ = {center - Eigen::Vector2d(a, b), center + Eigen::Vector2d(a, b)};
  return d;
}

Domain Domain::implicit(CharacteristicField field, const Box& bounding_box, const Eigen::Vector2d& seed) {
  if (!field.evaluator) throw Error("characteristic field has no evaluator");
  if (!bounding_box.contains(seed, 2)) throw Error("implicit seed point outside bounding box");
  Domain d;
  d.kind_ = Kind::implicit;
  d.box_ = bounding_box;
  d.center_ = seed;
  d.extents_ = 0.5 * (bounding_box.upper - bounding_box.lower);
  d.seed_ = seed;
  d.field_ = std::make_shared<const CharacteristicField>(std::move(field));
  if (d.field_->evaluator(seed) < d.field_->level) throw Error("implicit seed point is not inside the domain");
  return d;
}

const CharacteristicField& Domain::field() const {
  if (!field_) throw Error("domain has no characteristic field");
  return *field_;
}

bool Domain::has_parameterization() const {
  return kind_ == Kind::disk || kind_ == Kind::ellipse || kind_ == Kind::rectangle;
}

bool Domain::contains(const Eigen::Vector2d& x) const {
  require_finite(x);
  switch (kind_) {
    case Kind::interval:
      return x[0] >= extents_[0] - kBoundaryTol && x[0] <= extents_[1] + kBoundaryTol;
    case Kind::rectangle:
      return ((x - center_).cwiseAbs().array() <= extents_.array() + kBoundaryTol).all();
    case Kind::disk:
    case Kind::ellipse: {
      const Eigen::Vector2d q = (x - center_).cwiseQuotient(extents_);
      return q.squaredNorm() - 1.0 <= kBoundaryTol;
    }
    case Kind::implicit:
      return box_.contains(x, 2) && field_->evaluator(x) >= field_->level - kBoundaryTol;
  }
  return false;
}

namespace {

// Rectangle perimeter walk from the lower-left corner, counterclockwise.
void rectangle_walk(const Eigen::Vector2d& c, const Eigen::Vector2d& h, double theta,
                    Eigen::Vector2d& pos, Eigen::Vector2d& dir) {
  const double w = 2 * h.x(), ht = 2 * h.y(), P = 2 * (w + ht);
  double s = std::fmod(theta, kTwoPi);
  if (s < 0) s += kTwoPi;
  s *= P / kTwoPi;
  const Eigen::Vector2d ll = c - h;
  if (s < w) {
    pos = ll + Eigen::Vector2d(s, 0);
    dir = {1, 0};
  } else if (s < w + ht) {
    pos = ll + Eigen::Vector2d(w, s - w);
    dir = {0, 1};
  } else if (s < 2 * w + ht) {
    pos = ll + Eigen::Vector2d(w - (s - w - ht), ht);
    dir = {-1, 0};
  } else {
    pos = ll + Eigen::Vector2d(0, ht - (s - 2 * w - ht));
    dir = {0, -1};
  }
}

}  // namespace

Eigen::Vector2d Domain::boundary_position(double theta) const {
  switch (kind_) {
    case Kind::disk:
    case Kind::ellipse:
      return center_ + Eigen::Vector2d(extents_.x() * std::cos(theta), extents_.y() * std::sin(theta));
    case Kind::rectangle: {
      Eigen::Vector2d p, d;
      rectangle_walk(center_, extents_, theta, p, d);
      return p;
    }
    default:
      throw Error("no closed-form parameterization");
  }
}

CurveMetric Domain::curvature_and_metric(double theta) const {
  CurveMetric m;
  switch (kind_) {
    case Kind::disk:
    case Kind::ellipse: {
      const double a = extents_.x(), b = extents_.y();
      m.first = {-a * std::sin(theta), b * std::cos(theta)};
      m.second = {-a * std::cos(theta), -b * std::sin(theta)};
      m.speed = m.first.norm();
      m.curvature = (m.first.x() * m.second.y() - m.first.y() * m.second.x()) / std::pow(m.speed, 3);
      return m;
    }
    case Kind::rectangle: {
      Eigen::Vector2d p, d;
      rectangle_walk(center_, extents_, theta, p, d);
      m.speed = 2.0 * (2 * extents_.x() + 2 * extents_.y()) / kTwoPi;
      m.first = m.speed * d;
      return m;
    }
    default:
      throw Error("no closed-form parameterization");
  }
}

BoundaryPoint Domain::boundary_point(double theta, double t) const {
  BoundaryPoint bp;
  bp.position = boundary_position(theta);
  const CurveMetric m = curvature_and_metric(theta);
  bp.tangent = m.first / m.speed;
  // Counterclockwise traversal: outward normal is the tangent rotated clockwise.
  bp.normal = {bp.tangent.y(), -bp.tangent.x()};
  bp.parameter = theta;
  bp.has_parameter = true;
  bp.t = t;
  return bp;
}

double Domain::measure() const {
  switch (kind_) {
    case Kind::interval:
      return extents_[1] - extents_[0];
    case Kind::rectangle:
      return 4.0 * extents_.x() * extents_.y();
    case Kind::disk:
    case Kind::ellipse:
      return std::numbers::pi * extents_.x() * extents_.y();
    case Kind::implicit: {
      // Deterministic midpoint estimate on a 512^2 lattice.
      const int n = 512;
      const Eigen::Vector2d span = box_.upper - box_.lower;
      std::size_t hits = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          hits += contains(box_.lower + Eigen::Vector2d((i + 0.5) / n * span.x(), (j + 0.5) / n * span.y()));
      return double(hits) / (double(n) * n) * span.x() * span.y();
    }
  }
  return 0.0;
}

double Domain::perimeter() const {
  switch (kind_) {
    case Kind::interval:
      return 0.0;
    case Kind::rectangle:
      return 4.0 * (extents_.x() + extents_.y());
    case Kind::disk:
      return kTwoPi * extents_.x();
    case Kind::ellipse: {
      // Trapezoid in theta is spectrally accurate for smooth periodic integrands.
      const int n = 4096;
      double s = 0;
      for (int i = 0; i < n; ++i) s += curvature_and_metric(kTwoPi * i / n).speed;
      return s * kTwoPi / n;
    }
    case Kind::implicit:
      throw Error("no closed-form parameterization");
  }
  return 0.0;
}

std::vector<SpaceTimePoint> sample_interior(const Domain& domain, std::size_t n, const TimeRange& times,
                                            Rng& rng) {
  std::vector<SpaceTimePoint> pts;
  pts.reserve(n);
  const Box& box = domain.bounding_box();
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const std::size_t cap = 1000 * n;
  std::size_t attempts = 0;
  while (pts.size() < n) {
    if (attempts++ >= cap) throw Error("degenerate domain");
    SpaceTimePoint p;
    p.x[0] = box.lower[0] + U(rng) * (box.upper[0] - box.lower[0]);
    if (domain.spatial_dim() == 2) p.x[1] = box.lower[1] + U(rng) * (box.upper[1] - box.lower[1]);
    p.t = times.begin + U(rng) * (times.end - times.begin);
    p.tag = PointTag::interior;
    if (domain.contains(p.x)) pts.push_back(p);
  }
  return pts;
}

std::vector<SpaceTimePoint> sample_initial(const Domain& domain, std::size_t n, double t, Rng& rng) {
  auto pts = sample_interior(domain, n, {t, t}, rng);
  for (auto& p : pts) {
    p.t = t;
    p.tag = PointTag::initial;
  }
  return pts;
}

namespace {

Eigen::Vector2d exit_point(const Box& box, const Eigen::Vector2d& from, const Eigen::Vector2d& dir) {
  double tmax = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 2; ++i) {
    if (dir[i] > 0) tmax = std::min(tmax, (box.upper[i] - from[i]) / dir[i]);
    if (dir[i] < 0) tmax = std::min(tmax, (box.lower[i] - from[i]) / dir[i]);
  }
  return from + tmax * dir;
}

}  // namespace

std::vector<BoundaryPoint> sample_boundary(const Domain& domain, std::size_t n, const TimeRange& times,
                                           Rng& rng) {
  std::vector<BoundaryPoint> pts;
  pts.reserve(n);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = times.begin + U(rng) * (times.end - times.begin);
    switch (domain.kind()) {
      case Domain::Kind::interval: {
        BoundaryPoint bp;
        const bool upper = i % 2 == 1;
        bp.position = {upper ? domain.extents()[1] : domain.extents()[0], 0.0};
        bp.normal = {upper ? 1.0 : -1.0, 0.0};
        bp.tangent = {0.0, 1.0};
        bp.t = t;
        pts.push_back(bp);
        break;
      }
      case Domain::Kind::implicit: {
        const CharacteristicField& f = domain.field();
        const double angle = kTwoPi * U(rng);
        const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
        const Eigen::Vector2d out = exit_point(domain.bounding_box(), domain.seed_, dir);
        BoundaryPoint bp;
        const double span = (domain.bounding_box().upper - domain.bounding_box().lower).norm();
        bp.position = bisect_boundary(f, domain.seed_, out, 1e-10 * span);
        // Outward normal from the field gradient (the field decreases outward).
        const double h = 1e-6 * span;
        Eigen::Vector2d g;
        g.x() = f.evaluator(bp.position + Eigen::Vector2d(h, 0)) - f.evaluator(bp.position - Eigen::Vector2d(h, 0));
        g.y() = f.evaluator(bp.position + Eigen::Vector2d(0, h)) - f.evaluator(bp.position - Eigen::Vector2d(0, h));
        if (g.norm() == 0.0) g = -dir;
        bp.normal = -g.normalized();
        bp.tangent = rotate_ccw(bp.normal);
        bp.parameter = angle;
        bp.has_parameter = false;
        bp.t = t;
        pts.push_back(bp);
        break;
      }
      default:
        pts.push_back(domain.boundary_point(kTwoPi * U(rng), t));
    }
  }
  return pts;
}

Eigen::Vector2d bisect_boundary(const CharacteristicField& field, const Eigen::Vector2d& inside,
                                const Eigen::Vector2d& outside, double tol, int* iterations) {
  require_finite(inside);
  require_finite(outside);
  if (!(tol > 0.0)) throw Error("bisection tolerance must be positive");
  const double fi = field.evaluator(inside), fo = field.evaluator(outside);
  if (!(fi >= field.level) || !(fo < field.level)) throw Error("bracket invalid");
  Eigen::Vector2d a = inside, b = outside;
  int it = 0;
  while ((b - a).norm() > tol) {
    const Eigen::Vector2d mid = 0.5 * (a + b);
    ++it;
    const double fm = field.evaluator(mid);
    if (fm >= field.level) {
      a = mid;
      if (fm - field.level <= tol) break;
    } else {
      b = mid;
    }
  }
  if (iterations) *iterations = it;
  return a;
}

CharacteristicField smoothed_disk_field(const Eigen::Vector2d& center, double radius, double w) {
  return {[=](const Eigen::Vector2d& x) { return 0.5 * (1.0 - std::tanh(((x - center).norm() - radius) / w)); },
          0.5};
}

}  // namespace edras
