#include "edras/reference_fdm.hpp"

#include <Eigen/SparseCholesky>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

namespace edras {

Eigen::Index GridSolution::node_count() const {
  return kind == GridKind::periodic1d ? Eigen::Index(nx) : 1 + Eigen::Index(nr) * ntheta;
}

double GridSolution::spacing() const {
  return kind == GridKind::periodic1d ? (x_upper - x_lower) / nx : radius / nr;
}

Eigen::Vector2d GridSolution::node_position(Eigen::Index k) const {
  if (kind == GridKind::periodic1d) return {x_lower + double(k) * spacing(), 0.0};
  if (k == 0) return center;
  const Eigen::Index ring = (k - 1) / ntheta + 1, j = (k - 1) % ntheta;
  const double r = double(ring) * spacing(), th = 2.0 * std::numbers::pi * double(j) / ntheta;
  return center + r * Eigen::Vector2d(std::cos(th), std::sin(th));
}

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

// Discrete free energy E = 1/2 phi^T K phi + sum w f(phi) + sum l g(phi), and the
// mobility-scaled masses of the gradient flow  mass * phi_t = -dE/dphi.
struct DiscreteOperator {
  SpMat K;
  Eigen::VectorXd bulk_weight;
  Eigen::VectorXd surface_weight;
  Eigen::VectorXd mass;
};

void add_edge(Triplets& t, Eigen::Index a, Eigen::Index b, double c) {
  t.emplace_back(a, a, c);
  t.emplace_back(b, b, c);
  t.emplace_back(a, b, -c);
  t.emplace_back(b, a, -c);
}

DiscreteOperator build_operator(const GridSolution& g) {
  DiscreteOperator op;
  const Eigen::Index n = g.node_count();
  Triplets t;
  op.bulk_weight = Eigen::VectorXd::Zero(n);
  op.surface_weight = Eigen::VectorXd::Zero(n);
  const double e2 = g.eps * g.eps;
  if (g.kind == GridKind::periodic1d) {
    const double h = g.spacing();
    for (Eigen::Index i = 0; i < n; ++i) add_edge(t, i, (i + 1) % n, e2 / h);
    op.bulk_weight.setConstant(h);
    op.mass = op.bulk_weight / g.Mb;
  } else {
    const int nr = g.nr, nt = g.ntheta;
    const double dr = g.spacing(), dth = 2.0 * std::numbers::pi / nt, R = g.radius;
    auto node = [nt](int ring, int j) { return Eigen::Index(1) + Eigen::Index(ring - 1) * nt + ((j % nt) + nt) % nt; };
    op.bulk_weight[0] = std::numbers::pi * 0.25 * dr * dr;
    for (int i = 1; i <= nr; ++i) {
      const double r = i * dr;
      const double w = i < nr ? r * dr * dth : (R - 0.25 * dr) * 0.5 * dr * dth;
      const double face = i < nr ? dr : 0.5 * dr;
      for (int j = 0; j < nt; ++j) {
        op.bulk_weight[node(i, j)] = w;
        add_edge(t, node(i, j), node(i, j + 1), e2 * face / (r * dth));
        if (i == 1)
          add_edge(t, 0, node(1, j), e2 * 0.5 * dth);
        else
          add_edge(t, node(i - 1, j), node(i, j), e2 * (r - 0.5 * dr) * dth / dr);
      }
    }
    op.mass = op.bulk_weight / g.Mb;
    if (g.regime == BoundaryRegime::dynamic) {
      const double es2 = g.eps_s * g.eps_s;
      for (int j = 0; j < nt; ++j) {
        add_edge(t, node(nr, j), node(nr, j + 1), es2 / (R * dth));
        op.surface_weight[node(nr, j)] = R * dth;
        op.mass[node(nr, j)] = R * dth / g.Ms;
      }
    }
  }
  op.K.resize(n, n);
  op.K.setFromTriplets(t.begin(), t.end());
  return op;
}

double energy_with(const DiscreteOperator& op, const PdeSystem* sys, const Eigen::VectorXd& phi) {
  double e = 0.5 * phi.dot(op.K * phi);
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    e += op.bulk_weight[i] * (sys ? sys->f(phi[i]) : double_well(phi[i]));
    if (op.surface_weight[i] > 0.0) e += op.surface_weight[i] * (sys && sys->g ? sys->g(phi[i]) : double_well(phi[i]));
  }
  return e;
}

std::vector<long> store_steps(const std::vector<double>& times, double dt, double T) {
  std::vector<long> steps;
  for (double t : times) {
    if (t < 0.0 || t > T + 1e-12) throw Error("store time outside [0, T]");
    const double k = std::round(t / dt);
    if (std::abs(k * dt - t) > 1e-9 * std::max(1.0, t)) throw Error("store time not aligned to dt");
    steps.push_back(long(k));
  }
  return steps;
}

GridSolution integrate(GridSolution g, const PdeSystem& sys, const FdmOptions& opt) {
  if (!(opt.dt > 0.0)) throw Error("dt must be positive");
  const DiscreteOperator op = build_operator(g);
  const Eigen::Index n = g.node_count();
  g.dt = opt.dt;

  std::vector<double> times = opt.store_times;
  if (times.empty()) times = {0.0, sys.terminal_time};
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const double T = times.back();
  const std::vector<long> steps = store_steps(times, opt.dt, std::max(T, sys.terminal_time));

  const InitialCondition& init = opt.initial ? opt.initial : sys.initial_condition;
  if (!init) throw Error("initial condition not set");
  Eigen::VectorXd phi(n);
  for (Eigen::Index k = 0; k < n; ++k) phi[k] = init(g.node_position(k));

  const double S = opt.stabilization;
  const Eigen::VectorXd stab = S * (op.bulk_weight + op.surface_weight);
  const Eigen::VectorXd lhs_diag = op.mass / opt.dt + stab;
  SpMat A = op.K;
  for (Eigen::Index i = 0; i < n; ++i) A.coeffRef(i, i) += lhs_diag[i];
  Eigen::SimplicialLDLT<SpMat> solver;
  solver.compute(A);
  if (solver.info() != Eigen::Success) throw Error("factorization of the implicit operator failed");

  Eigen::VectorXd rhs(n), fp(n);
  std::size_t next = 0;
  const long last = steps.back();
  auto store = [&](long step) {
    while (next < steps.size() && steps[next] == step) {
      g.times.push_back(times[next]);
      g.slices.push_back(phi);
      g.energies.push_back(energy_with(op, &sys, phi));
      ++next;
    }
  };
  store(0);
  for (long step = 0; step < last; ++step) {
    const double t = double(step) * opt.dt;
    for (Eigen::Index i = 0; i < n; ++i) {
      fp[i] = op.bulk_weight[i] * sys.f_prime(phi[i]);
      if (op.surface_weight[i] > 0.0) fp[i] += op.surface_weight[i] * sys.g_prime(phi[i]);
    }
    rhs = lhs_diag.cwiseProduct(phi) - fp;
    if (opt.forcing)
      for (Eigen::Index i = 0; i < n; ++i) rhs[i] += op.mass[i] * opt.forcing(g.node_position(i), t);
    phi = solver.solve(rhs);
    if (!phi.allFinite() || phi.cwiseAbs().maxCoeff() > 10.0) throw Error("instability, reduce dt");
    store(step + 1);
  }
  return g;
}

}  // namespace

GridSolution solve_1d_periodic(const PdeSystem& sys, int nx, const FdmOptions& opt, double x_lower, double x_upper) {
  if (nx < 16) throw Error("nx must be at least 16");
  if (!(x_upper > x_lower)) throw Error("interval requires upper > lower");
  GridSolution g;
  g.kind = GridKind::periodic1d;
  g.regime = BoundaryRegime::periodic1d;
  g.nx = nx;
  g.x_lower = x_lower;
  g.x_upper = x_upper;
  g.eps = sys.eps;
  g.eps_s = sys.eps_s;
  g.Mb = sys.Mb;
  g.Ms = sys.Ms;
  return integrate(std::move(g), sys, opt);
}

GridSolution solve_2d_disk(const PdeSystem& sys, int nr, int ntheta, BoundaryRegime regime, const FdmOptions& opt,
                           double radius, const Eigen::Vector2d& center) {
  if (nr < 4 || ntheta < 8) throw Error("disk grid too coarse");
  if (regime == BoundaryRegime::periodic1d) throw Error("wrong regime");
  if (regime == BoundaryRegime::dynamic && !(sys.Ms > 0.0)) throw Error("surface mobility Ms must be positive");
  GridSolution g;
  g.kind = GridKind::disk;
  g.regime = regime;
  g.nr = nr;
  g.ntheta = ntheta;
  g.radius = radius;
  g.center = center;
  g.eps = sys.eps;
  g.eps_s = sys.eps_s;
  g.Mb = sys.Mb;
  g.Ms = sys.Ms;
  return integrate(std::move(g), sys, opt);
}

double discrete_energy(const GridSolution& sol, const Eigen::VectorXd& phi) {
  if (phi.size() != sol.node_count()) throw Error("field size does not match grid");
  return energy_with(build_operator(sol), nullptr, phi);
}

double interpolate_slice(const GridSolution& sol, std::size_t slice, const Eigen::Vector2d& x) {
  const Eigen::VectorXd& phi = sol.slices.at(slice);
  if (sol.kind == GridKind::periodic1d) {
    const double L = sol.x_upper - sol.x_lower;
    double s = std::fmod(x[0] - sol.x_lower, L);
    if (s < 0) s += L;
    const double u = s / sol.spacing();
    const long i = std::min(long(u), long(sol.nx) - 1);
    const double w = u - double(i);
    return (1.0 - w) * phi[i] + w * phi[(i + 1) % sol.nx];
  }
  const Eigen::Vector2d d = x - sol.center;
  const double r = std::min(d.norm(), sol.radius);
  double th = std::atan2(d.y(), d.x());
  if (th < 0) th += 2.0 * std::numbers::pi;
  const double v = th / (2.0 * std::numbers::pi) * sol.ntheta;
  const long j0 = std::min(long(v), long(sol.ntheta) - 1);
  const double wj = v - double(j0);
  const long j1 = (j0 + 1) % sol.ntheta;
  auto ring = [&](long i) {
    return (1.0 - wj) * phi[1 + (i - 1) * sol.ntheta + j0] + wj * phi[1 + (i - 1) * sol.ntheta + j1];
  };
  const double rho = r / sol.spacing();
  if (rho < 1.0) return (1.0 - rho) * phi[0] + rho * ring(1);
  const long i = std::min(long(rho), long(sol.nr) - 1);
  const double wi = rho - double(i);
  return (1.0 - wi) * ring(i) + wi * ring(i + 1);
}

double interpolate(const GridSolution& sol, const SpaceTimePoint& p) {
  if (sol.times.empty()) throw Error("oracle has no stored slices");
  const double eps = 1e-12;
  if (p.t < sol.times.front() - eps || p.t > sol.times.back() + eps) throw Error("query outside stored time range");
  auto it = std::lower_bound(sol.times.begin(), sol.times.end(), p.t - eps);
  std::size_t k = std::size_t(it - sol.times.begin());
  if (k < sol.times.size() && std::abs(sol.times[k] - p.t) <= eps) return interpolate_slice(sol, k, p.x);
  const std::size_t k1 = std::min(k, sol.times.size() - 1), k0 = k1 - 1;
  const double w = (p.t - sol.times[k0]) / (sol.times[k1] - sol.times[k0]);
  return (1.0 - w) * interpolate_slice(sol, k0, p.x) + w * interpolate_slice(sol, k1, p.x);
}

void save_oracle(const std::filesystem::path& base, const GridSolution& sol) {
  using nlohmann::json;
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  auto bin = base;
  bin += ".bin";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error("cannot write " + bin.string());
  for (const auto& s : sol.slices) out.write(reinterpret_cast<const char*>(s.data()), std::streamsize(s.size() * sizeof(double)));
  json meta{{"format", "edras-oracle"},
            {"version", 1},
            {"kind", sol.kind == GridKind::periodic1d ? "periodic1d" : "disk"},
            {"regime", to_string(sol.regime)},
            {"nx", sol.nx},
            {"x_lower", sol.x_lower},
            {"x_upper", sol.x_upper},
            {"nr", sol.nr},
            {"ntheta", sol.ntheta},
            {"radius", sol.radius},
            {"center", {sol.center.x(), sol.center.y()}},
            {"dt", sol.dt},
            {"eps", sol.eps},
            {"eps_s", sol.eps_s},
            {"Mb", sol.Mb},
            {"Ms", sol.Ms},
            {"node_count", sol.node_count()},
            {"times", sol.times},
            {"energies", sol.energies},
            {"data", bin.filename().string()},
            {"dtype", "float64-le"}};
  auto js = base;
  js += ".json";
  std::ofstream m(js);
  if (!m) throw Error("cannot write " + js.string());
  m << meta.dump(1) << '\n';
}

GridSolution load_oracle(const std::filesystem::path& base) {
  using nlohmann::json;
  auto js = base;
  js += ".json";
  std::ifstream m(js);
  if (!m) throw Error("oracle metadata not found: " + js.string());
  json meta;
  try {
    meta = json::parse(m);
  } catch (const json::exception& e) {
    throw Error("malformed oracle metadata: " + std::string(e.what()));
  }
  GridSolution g;
  try {
    g.kind = meta.at("kind").get<std::string>() == "disk" ? GridKind::disk : GridKind::periodic1d;
    g.regime = parse_regime(meta.at("regime").get<std::string>());
    g.nx = meta.at("nx").get<int>();
    g.x_lower = meta.at("x_lower").get<double>();
    g.x_upper = meta.at("x_upper").get<double>();
    g.nr = meta.at("nr").get<int>();
    g.ntheta = meta.at("ntheta").get<int>();
    g.radius = meta.at("radius").get<double>();
    g.center = {meta.at("center")[0].get<double>(), meta.at("center")[1].get<double>()};
    g.dt = meta.at("dt").get<double>();
    g.eps = meta.at("eps").get<double>();
    g.eps_s = meta.at("eps_s").get<double>();
    g.Mb = meta.at("Mb").get<double>();
    g.Ms = meta.at("Ms").get<double>();
    g.times = meta.at("times").get<std::vector<double>>();
    g.energies = meta.at("energies").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error("malformed oracle metadata: " + std::string(e.what()));
  }
  auto bin = base;
  bin += ".bin";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error("oracle data not found: " + bin.string());
  const Eigen::Index n = g.node_count();
  for (std::size_t s = 0; s < g.times.size(); ++s) {
    Eigen::VectorXd v(n);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
    if (!in) throw Error("oracle data truncated: " + bin.string());
    g.slices.push_back(std::move(v));
  }
  return g;
}

std::vector<double> default_store_times(const std::vector<double>& segment_ends) {
  std::set<double> t{0.0, 0.15, 0.3, 0.5, 0.7, 0.9};
  for (double e : segment_ends) t.insert(e);
  const double T = segment_ends.empty() ? 1.0 : segment_ends.back();
  std::vector<double> out;
  for (double v : t)
    if (v <= T + 1e-12) out.push_back(v);
  return out;
}

}  // namespace edras
