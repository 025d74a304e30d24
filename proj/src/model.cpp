#include "edras/model.hpp"

#include <cmath>
#include <numbers>

namespace edras {

BoundaryRegime parse_regime(const std::string& name) {
  if (name == "periodic1d") return BoundaryRegime::periodic1d;
  if (name == "neumann") return BoundaryRegime::neumann;
  if (name == "dynamic") return BoundaryRegime::dynamic;
  throw Error("unknown boundary regime '" + name + "'");
}

std::string to_string(BoundaryRegime r) {
  switch (r) {
    case BoundaryRegime::periodic1d: return "periodic1d";
    case BoundaryRegime::neumann: return "neumann";
    case BoundaryRegime::dynamic: return "dynamic";
  }
  return "?";
}

void PdeSystem::validate() const {
  if (!(Mb > 0.0)) throw Error("bulk mobility Mb must be positive");
  if (regime == BoundaryRegime::dynamic && !(Ms > 0.0))
    throw Error("surface mobility Ms must be positive for dynamic boundary conditions");
  if (!(eps >= 0.0) || !(eps_s >= 0.0)) throw Error("interface widths must be non-negative");
  if (!(terminal_time > 0.0)) throw Error("terminal time must be positive");
  if (!f || !f_prime || !f_second) throw Error("bulk potential not set");
  if (regime == BoundaryRegime::dynamic && (!g || !g_prime || !g_second))
    throw Error("surface potential not set");
  if (!initial_condition) throw Error("initial condition not set");
}

double double_well(double phi) {
  const double q = phi * phi - 1.0;
  return 0.25 * q * q;
}
double double_well_prime(double phi) { return phi * phi * phi - phi; }
double double_well_second(double phi) { return 3.0 * phi * phi - 1.0; }

void use_double_well(PdeSystem& sys) {
  sys.f = sys.g = double_well;
  sys.f_prime = sys.g_prime = double_well_prime;
  sys.f_second = sys.g_second = double_well_second;
}

InitialCondition make_initial_condition(const std::string& name, double value) {
  if (name == "x2cospix")
    return [](const Eigen::Vector2d& x) { return x[0] * x[0] * std::cos(std::numbers::pi * x[0]); };
  if (name == "multimode")
    return [](const Eigen::Vector2d& x) {
      double s = 0.0;
      for (int k = 1; k <= 4; ++k) s += std::cos(k * x[0] + k) * std::cos((k + 1) * x[1]);
      return std::clamp(0.05 * s, -1.0, 1.0);
    };
  if (name == "constant") return [value](const Eigen::Vector2d&) { return value; };
  throw Error("unknown initial condition '" + name + "'");
}

PdeSystem preset_ac1d_periodic() {
  PdeSystem s;
  s.eps = std::sqrt(0.00002);
  s.eps_s = 0.0;
  s.Mb = 5.0;
  s.Ms = 1.0;
  s.regime = BoundaryRegime::periodic1d;
  use_double_well(s);
  s.initial_condition = make_initial_condition("x2cospix");
  s.terminal_time = 1.0;
  return s;
}

PdeSystem preset_ac2d_neumann(double Mb) {
  PdeSystem s;
  s.eps = 0.1;
  s.eps_s = 0.1;
  s.Mb = Mb;
  s.Ms = 1.0;
  s.regime = BoundaryRegime::neumann;
  use_double_well(s);
  s.initial_condition = make_initial_condition("multimode");
  s.terminal_time = 1.0;
  return s;
}

PdeSystem preset_ac2d_dynamic(double Mb, double Ms) {
  PdeSystem s = preset_ac2d_neumann(Mb);
  s.Ms = Ms;
  s.regime = BoundaryRegime::dynamic;
  return s;
}

PdeSystem make_preset(const std::string& name) {
  if (name == "ac1d_periodic") return preset_ac1d_periodic();
  if (name == "ac2d_neumann") return preset_ac2d_neumann();
  if (name == "ac2d_dynamic") return preset_ac2d_dynamic();
  throw Error("unknown system preset '" + name + "'");
}

namespace {

double need(const std::optional<double>& v) {
  if (!v) throw Error("incomplete sample");
  return *v;
}

const Eigen::Vector2d& need(const std::optional<Eigen::Vector2d>& v) {
  if (!v) throw Error("incomplete sample");
  return *v;
}

double normal_derivative(const FieldSample& s) {
  if (s.normal_deriv) return *s.normal_deriv;
  if (s.grad && s.normal) return s.normal->dot(*s.grad);
  throw Error("incomplete sample");
}

}  // namespace

double bulk_chemical_potential(const PdeSystem& sys, const FieldSample& s) {
  return sys.f_prime(s.value) - sys.eps * sys.eps * need(s.laplacian);
}

double surface_chemical_potential(const PdeSystem& sys, const FieldSample& s) {
  return sys.g_prime(s.value) - sys.eps_s * sys.eps_s * need(s.surf_laplacian) +
         sys.eps * sys.eps * normal_derivative(s);
}

double bulk_residual_density(const PdeSystem& sys, const FieldSample& s) {
  const double dt = need(s.dt);
  return std::abs(dt + sys.Mb * bulk_chemical_potential(sys, s));
}

double boundary_residual_density(const PdeSystem& sys, const FieldSample& s) {
  if (sys.regime != BoundaryRegime::dynamic) throw Error("wrong regime");
  const double dt = need(s.dt);
  return std::abs(dt + sys.Ms * surface_chemical_potential(sys, s));
}

double neumann_residual_density(const PdeSystem&, const FieldSample& s) {
  return std::abs(normal_derivative(s));
}

double edrd_bulk(const PdeSystem& sys, const FieldSample& s) {
  const double dt = need(s.dt);
  return dt * dt / sys.Mb;
}

double edrd_boundary(const PdeSystem& sys, const FieldSample& s) {
  const double dt = need(s.dt);
  return dt * dt / sys.Ms;
}

double edrd_bulk_force_form(const PdeSystem& sys, const FieldSample& s) {
  const double mu = bulk_chemical_potential(sys, s);
  return sys.Mb * mu * mu;
}

double bulk_energy_density(const PdeSystem& sys, const FieldSample& s) {
  const double g2 = s.grad ? s.grad->squaredNorm() : 0.0;
  return 0.5 * sys.eps * sys.eps * g2 + sys.f(s.value);
}

double surface_energy_density(const PdeSystem& sys, const FieldSample& s) {
  double gs2 = 0.0;
  if (s.grad) {
    const Eigen::Vector2d& n = need(s.normal);
    const Eigen::Vector2d tangential = *s.grad - n * n.dot(*s.grad);
    gs2 = tangential.squaredNorm();
  }
  return 0.5 * sys.eps_s * sys.eps_s * gs2 + sys.g(s.value);
}

double surface_laplacian_parametric(double d1, double d2, const Eigen::Vector2d& gamma_prime,
                                    const Eigen::Vector2d& gamma_second) {
  const double s2 = gamma_prime.squaredNorm();
  return d2 / s2 - d1 * gamma_prime.dot(gamma_second) / (s2 * s2);
}

double surface_laplacian_curvature_form(double tangent_hessian, double curvature, double normal_deriv) {
  return tangent_hessian - curvature * normal_deriv;
}

Quadrature make_quadrature(const Domain& domain, const QuadratureSpec& spec) {
  Quadrature q;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (spec.radial < 1 || spec.angular < 1) throw Error("quadrature needs at least one node per axis");
  if (spec.rule == QuadratureSpec::Rule::monte_carlo || domain.kind() == Domain::Kind::implicit) {
    if (spec.samples == 0) throw Error("quadrature needs at least one node");
    Rng rng(spec.seed);
    const Box& box = domain.bounding_box();
    const int dim = domain.spatial_dim();
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double volume = box.upper[0] - box.lower[0];
    if (dim == 2) volume *= box.upper[1] - box.lower[1];
    for (std::size_t i = 0; i < spec.samples; ++i) {
      Eigen::Vector2d x = Eigen::Vector2d::Zero();
      for (int d = 0; d < dim; ++d) x[d] = box.lower[d] + U(rng) * (box.upper[d] - box.lower[d]);
      if (domain.contains(x)) q.bulk_nodes.push_back(x);
    }
    const double w = volume / double(spec.samples);
    q.bulk_weights.assign(q.bulk_nodes.size(), w);
    if (domain.has_parameterization()) {
      auto bps = sample_boundary(domain, spec.samples / 4 + 1, {0.0, 0.0}, rng);
      const double wb = domain.perimeter() / double(bps.size());
      q.surface_nodes = std::move(bps);
      q.surface_weights.assign(q.surface_nodes.size(), wb);
    }
    return q;
  }
  switch (domain.kind()) {
    case Domain::Kind::interval: {
      const double a = domain.extents()[0], b = domain.extents()[1];
      const double h = (b - a) / spec.radial;
      for (int i = 0; i < spec.radial; ++i) {
        q.bulk_nodes.emplace_back(a + (i + 0.5) * h, 0.0);
        q.bulk_weights.push_back(h);
      }
      break;
    }
    case Domain::Kind::rectangle: {
      const Eigen::Vector2d lo = domain.bounding_box().lower, hi = domain.bounding_box().upper;
      const double hx = (hi.x() - lo.x()) / spec.radial, hy = (hi.y() - lo.y()) / spec.angular;
      for (int i = 0; i < spec.radial; ++i)
        for (int j = 0; j < spec.angular; ++j) {
          q.bulk_nodes.emplace_back(lo.x() + (i + 0.5) * hx, lo.y() + (j + 0.5) * hy);
          q.bulk_weights.push_back(hx * hy);
        }
      break;
    }
    case Domain::Kind::disk:
    case Domain::Kind::ellipse: {
      // Mapped polar grid: midpoint in r with Jacobian a b r, trapezoid in theta.
      const double a = domain.extents().x(), b = domain.extents().y();
      const double dr = 1.0 / spec.radial, dth = two_pi / spec.angular;
      for (int i = 0; i < spec.radial; ++i) {
        const double r = (i + 0.5) * dr;
        for (int j = 0; j < spec.angular; ++j) {
          const double th = j * dth;
          q.bulk_nodes.push_back(domain.center() + Eigen::Vector2d(a * r * std::cos(th), b * r * std::sin(th)));
          q.bulk_weights.push_back(a * b * r * dr * dth);
        }
      }
      break;
    }
    case Domain::Kind::implicit:
      break;
  }
  if (domain.has_parameterization()) {
    const double dth = two_pi / spec.angular;
    for (int j = 0; j < spec.angular; ++j) {
      const double th = j * dth;
      q.surface_nodes.push_back(domain.boundary_point(th, 0.0));
      q.surface_weights.push_back(domain.curvature_and_metric(th).speed * dth);
    }
  }
  return q;
}

EnergyBreakdown total_energy(const PdeSystem& sys, const GradientField& field, double t, const Quadrature& quad) {
  if (quad.bulk_nodes.empty()) throw Error("quadrature has no nodes");
  EnergyBreakdown e;
  std::vector<double> vals;
  std::vector<Eigen::Vector2d> grads;
  field(quad.bulk_nodes, t, vals, grads);
  for (std::size_t i = 0; i < quad.bulk_nodes.size(); ++i) {
    FieldSample s;
    s.value = vals[i];
    s.grad = grads[i];
    e.bulk += quad.bulk_weights[i] * bulk_energy_density(sys, s);
  }
  if (sys.regime == BoundaryRegime::dynamic && !quad.surface_nodes.empty()) {
    std::vector<Eigen::Vector2d> xs;
    xs.reserve(quad.surface_nodes.size());
    for (const auto& bp : quad.surface_nodes) xs.push_back(bp.position);
    field(xs, t, vals, grads);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      FieldSample s;
      s.value = vals[i];
      s.grad = grads[i];
      s.normal = quad.surface_nodes[i].normal;
      e.surface += quad.surface_weights[i] * surface_energy_density(sys, s);
    }
  }
  e.total = e.bulk + e.surface;
  return e;
}

}  // namespace edras
