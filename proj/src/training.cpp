#include "edras/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace edras {

void LossWeights::validate() const {
  for (double w : {w_f, w_b, w_i, w_b1, w_b2})
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("loss weights must be finite and non-negative");
}

double total_loss(const LossTerms& t, const LossWeights& w, BoundaryRegime regime) {
  const double boundary = regime == BoundaryRegime::periodic1d ? w.w_b1 * t.L_b1 + w.w_b2 * t.L_b2 : w.w_b * t.L_b;
  return w.w_f * t.L_f + boundary + w.w_i * t.L_i;
}

namespace {

template <class T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

ChannelOutput zero_like(const ChannelOutput& o) {
  ChannelOutput a;
  a.value = Eigen::RowVectorXd::Zero(o.value.size());
  for (const auto& f : o.first) a.first.push_back(Eigen::RowVectorXd::Zero(f.size()));
  for (const auto& s : o.second) a.second.push_back(Eigen::RowVectorXd::Zero(s.size()));
  return a;
}

double interior_term(const Mlp& net, const PdeSystem& sys, int dim, std::span<const SpaceTimePoint> pts, double weight,
                     Eigen::VectorXd* grad) {
  if (pts.empty()) return 0.0;
  const InteriorBatch b = make_interior_batch(dim, pts);
  ForwardTape tape;
  const ChannelOutput o = net.forward(b.inputs, b.request, grad ? &tape : nullptr);
  const double n = double(pts.size());
  const double e2 = sys.eps * sys.eps;
  double sum = 0.0;
  ChannelOutput adj;
  if (grad) adj = zero_like(o);
  for (Eigen::Index i = 0; i < o.value.size(); ++i) {
    const double phi = o.value[i];
    double lap = 0.0;
    for (int d = 0; d < dim; ++d) lap += o.second[std::size_t(d)][i];
    const double r = o.first[0][i] + sys.Mb * (sys.f_prime(phi) - e2 * lap);
    sum += r * r;
    if (grad) {
      const double c = weight * 2.0 * r / n;
      adj.value[i] = c * sys.Mb * sys.f_second(phi);
      adj.first[0][i] = c;
      for (int d = 0; d < dim; ++d) adj.second[std::size_t(d)][i] = -c * sys.Mb * e2;
    }
  }
  if (grad) net.backward(tape, adj, *grad);
  return sum / n;
}

double initial_term(const Mlp& net, int dim, std::span<const SpaceTimePoint> pts, std::span<const double> targets,
                    double weight, Eigen::VectorXd* grad) {
  if (pts.empty()) return 0.0;
  Eigen::MatrixXd X(dim + 1, Eigen::Index(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) X.col(Eigen::Index(i)) = network_input(dim, pts[i].x, pts[i].t);
  ForwardTape tape;
  const ChannelOutput o = net.forward(X, ChannelRequest{}, grad ? &tape : nullptr);
  const double n = double(pts.size());
  double sum = 0.0;
  ChannelOutput adj;
  if (grad) adj = zero_like(o);
  for (Eigen::Index i = 0; i < o.value.size(); ++i) {
    const double d = o.value[i] - targets[std::size_t(i)];
    sum += d * d;
    if (grad) adj.value[i] = weight * 2.0 * d / n;
  }
  if (grad) net.backward(tape, adj, *grad);
  return sum / n;
}

// Value and slope mismatch between the two ends of the interval at the given times.
std::pair<double, double> periodic_terms(const Mlp& net, const Domain& domain, std::span<const BoundaryPoint> pts,
                                         double w1, double w2, Eigen::VectorXd* grad) {
  if (pts.empty()) return {0.0, 0.0};
  const Eigen::Index n = Eigen::Index(pts.size());
  const double lo = domain.bounding_box().lower.x(), hi = domain.bounding_box().upper.x();
  Eigen::MatrixXd X(2, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.col(i) << lo, pts[std::size_t(i)].t;
    X.col(n + i) << hi, pts[std::size_t(i)].t;
  }
  ChannelRequest req;
  Eigen::MatrixXd tx = Eigen::MatrixXd::Zero(2, 2 * n);
  tx.row(0).setOnes();
  req.tangents.push_back(std::move(tx));
  ForwardTape tape;
  const ChannelOutput o = net.forward(X, req, grad ? &tape : nullptr);
  double s1 = 0.0, s2 = 0.0;
  ChannelOutput adj;
  if (grad) adj = zero_like(o);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = o.value[i] - o.value[n + i];
    const double q = o.first[0][i] - o.first[0][n + i];
    s1 += d * d;
    s2 += q * q;
    if (grad) {
      adj.value[i] = w1 * 2.0 * d / double(n);
      adj.value[n + i] = -adj.value[i];
      adj.first[0][i] = w2 * 2.0 * q / double(n);
      adj.first[0][n + i] = -adj.first[0][i];
    }
  }
  if (grad) net.backward(tape, adj, *grad);
  return {s1 / double(n), s2 / double(n)};
}

double neumann_term(const Mlp& net, const Domain& domain, std::span<const BoundaryPoint> pts, double weight,
                    Eigen::VectorXd* grad) {
  if (pts.empty()) return 0.0;
  const int dim = domain.spatial_dim();
  const Eigen::Index n = Eigen::Index(pts.size());
  Eigen::MatrixXd X(dim + 1, n);
  for (Eigen::Index i = 0; i < n; ++i) X.col(i) = network_input(dim, pts[std::size_t(i)].position, pts[std::size_t(i)].t);
  ChannelRequest req;
  for (int d = 0; d < dim; ++d) {
    Eigen::MatrixXd tg = Eigen::MatrixXd::Zero(dim + 1, n);
    tg.row(d).setOnes();
    req.tangents.push_back(std::move(tg));
  }
  ForwardTape tape;
  const ChannelOutput o = net.forward(X, req, grad ? &tape : nullptr);
  double sum = 0.0;
  ChannelOutput adj;
  if (grad) adj = zero_like(o);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d& nv = pts[std::size_t(i)].normal;
    double r = 0.0;
    for (int d = 0; d < dim; ++d) r += nv[d] * o.first[std::size_t(d)][i];
    sum += r * r;
    if (grad)
      for (int d = 0; d < dim; ++d) adj.first[std::size_t(d)][i] = weight * 2.0 * r * nv[d] / double(n);
  }
  if (grad) net.backward(tape, adj, *grad);
  return sum / double(n);
}

double dynamic_term(const Mlp& net, const PdeSystem& sys, const Domain& domain, std::span<const BoundaryPoint> pts,
                    double weight, Eigen::VectorXd* grad) {
  if (pts.empty()) return 0.0;
  const BoundaryBatch b = make_boundary_batch(domain, pts, true);
  ForwardTape tape;
  const ChannelOutput o = net.forward(b.inputs, b.request, grad ? &tape : nullptr);
  const double n = double(pts.size());
  const double e2 = sys.eps * sys.eps, es2 = sys.eps_s * sys.eps_s;
  double sum = 0.0;
  ChannelOutput adj;
  if (grad) adj = zero_like(o);
  for (Eigen::Index i = 0; i < o.value.size(); ++i) {
    const CurveMetric& m = b.metrics[std::size_t(i)];
    const Eigen::Vector2d& nv = pts[std::size_t(i)].normal;
    const double phi = o.value[i];
    const double gx = o.first[1][i], gy = o.first[2][i], d1 = o.first[3][i], S = o.second[0][i];
    const double s2 = m.first.squaredNorm();
    const double gg = m.first.dot(m.second);
    const double lap_s = (S + gx * m.second.x() + gy * m.second.y()) / s2 - d1 * gg / (s2 * s2);
    const double dn = gx * nv.x() + gy * nv.y();
    const double r = o.first[0][i] + sys.Ms * (sys.g_prime(phi) - es2 * lap_s + e2 * dn);
    sum += r * r;
    if (grad) {
      const double c = weight * 2.0 * r / n;
      adj.value[i] = c * sys.Ms * sys.g_second(phi);
      adj.first[0][i] = c;
      adj.first[1][i] = c * sys.Ms * (-es2 * m.second.x() / s2 + e2 * nv.x());
      adj.first[2][i] = c * sys.Ms * (-es2 * m.second.y() / s2 + e2 * nv.y());
      adj.first[3][i] = c * sys.Ms * es2 * gg / (s2 * s2);
      adj.second[0][i] = -c * sys.Ms * es2 / s2;
    }
  }
  if (grad) net.backward(tape, adj, *grad);
  return sum / n;
}

double evaluate_loss(const Mlp& net, const LossContext& ctx, const TrainingSet& ts, const BatchView* batch,
                     Eigen::VectorXd* grad, LossTerms& terms, bool require_pools) {
  if (!ctx.sys || !ctx.domain) throw Error("loss context incomplete");
  const PdeSystem& sys = *ctx.sys;
  const Domain& domain = *ctx.domain;
  const LossWeights& w = ctx.weights;
  const int dim = domain.spatial_dim();
  if (require_pools) {
    if (ts.interior.empty()) throw Error("empty interior pool");
    if (ts.initial.empty()) throw Error("empty initial pool");
    if (ts.boundary.empty()) throw Error("empty boundary pool");
  }
  if (ts.initial_target.size() != ts.initial.size()) throw Error("initial targets do not match the initial pool");

  std::vector<SpaceTimePoint> fi, ii;
  std::vector<BoundaryPoint> bi;
  std::vector<double> targets;
  std::span<const SpaceTimePoint> fpts = ts.interior, ipts = ts.initial;
  std::span<const BoundaryPoint> bpts = ts.boundary;
  std::span<const double> tgt = ts.initial_target;
  if (batch) {
    fi = gather(ts.interior, batch->interior);
    bi = gather(ts.boundary, batch->boundary);
    ii = gather(ts.initial, batch->initial);
    targets = gather(ts.initial_target, batch->initial);
    fpts = fi;
    bpts = bi;
    ipts = ii;
    tgt = targets;
  }
  terms = {};
  terms.L_f = interior_term(net, sys, dim, fpts, w.w_f, grad);
  terms.L_i = initial_term(net, dim, ipts, tgt, w.w_i, grad);
  switch (sys.regime) {
    case BoundaryRegime::periodic1d: {
      if (dim != 1) throw Error("periodic regime requires an interval");
      const auto [a, b] = periodic_terms(net, domain, bpts, w.w_b1, w.w_b2, grad);
      terms.L_b1 = a;
      terms.L_b2 = b;
      terms.L_b = a + b;
      break;
    }
    case BoundaryRegime::neumann:
      terms.L_b = neumann_term(net, domain, bpts, w.w_b, grad);
      break;
    case BoundaryRegime::dynamic:
      terms.L_b = dynamic_term(net, sys, domain, bpts, w.w_b, grad);
      break;
  }
  return total_loss(terms, w, sys.regime);
}

}  // namespace

LossTerms loss_terms(const Mlp& net, const LossContext& ctx, const TrainingSet& ts) {
  LossTerms t;
  evaluate_loss(net, ctx, ts, nullptr, nullptr, t, true);
  return t;
}

double loss_and_gradient(const Mlp& net, const LossContext& ctx, const TrainingSet& ts, const BatchView* batch,
                         Eigen::VectorXd& grad, LossTerms* terms) {
  grad = Eigen::VectorXd::Zero(net.parameter_count());
  LossTerms t;
  const double L = evaluate_loss(net, ctx, ts, batch, &grad, t, batch == nullptr);
  if (terms) *terms = t;
  return L;
}

namespace {

constexpr std::size_t kScoreChunk = 4096;

}  // namespace

void score_interior(const Mlp& net, const PdeSystem& sys, int spatial_dim, std::span<const SpaceTimePoint> pts,
                    std::vector<double>& residual, std::vector<double>& edrd) {
  residual.resize(pts.size());
  edrd.resize(pts.size());
  for (std::size_t s = 0; s < pts.size(); s += kScoreChunk) {
    const std::size_t n = std::min(kScoreChunk, pts.size() - s);
    const auto samples = evaluate_interior(net, spatial_dim, pts.subspan(s, n));
    for (std::size_t i = 0; i < n; ++i) {
      residual[s + i] = bulk_residual_density(sys, samples[i]);
      edrd[s + i] = edrd_bulk(sys, samples[i]);
    }
  }
}

void score_boundary(const Mlp& net, const PdeSystem& sys, const Domain& domain, std::span<const BoundaryPoint> pts,
                    std::vector<double>& residual, std::vector<double>& edrd) {
  residual.assign(pts.size(), 0.0);
  edrd.clear();
  if (sys.regime == BoundaryRegime::dynamic) edrd.resize(pts.size());
  for (std::size_t s = 0; s < pts.size(); s += kScoreChunk) {
    const std::size_t n = std::min(kScoreChunk, pts.size() - s);
    const auto chunk = pts.subspan(s, n);
    if (sys.regime == BoundaryRegime::periodic1d) {
      std::vector<SpaceTimePoint> lo(n), hi(n);
      for (std::size_t i = 0; i < n; ++i) {
        lo[i] = {domain.bounding_box().lower, chunk[i].t, PointTag::boundary};
        hi[i] = {domain.bounding_box().upper, chunk[i].t, PointTag::boundary};
      }
      const auto a = evaluate_interior(net, 1, lo), b = evaluate_interior(net, 1, hi);
      for (std::size_t i = 0; i < n; ++i)
        residual[s + i] = std::abs(a[i].value - b[i].value) + std::abs(a[i].grad->x() - b[i].grad->x());
      continue;
    }
    const bool dynamic = sys.regime == BoundaryRegime::dynamic;
    const auto samples = evaluate_boundary(net, domain, chunk, dynamic);
    for (std::size_t i = 0; i < n; ++i) {
      if (dynamic) {
        residual[s + i] = boundary_residual_density(sys, samples[i]);
        edrd[s + i] = edrd_boundary(sys, samples[i]);
      } else {
        residual[s + i] = neumann_residual_density(sys, samples[i]);
      }
    }
  }
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (m_.size() != params.size()) {
    m_ = Eigen::VectorXd::Zero(params.size());
    v_ = Eigen::VectorXd::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
  v_ = opt_.beta2 * v_ + (1.0 - opt_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opt_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, double(t_));
  params.array() -= opt_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + opt_.epsilon);
}

LbfgsResult lbfgs_minimize(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& objective,
                           Eigen::VectorXd& x, const LbfgsOptions& opt,
                           const std::function<void(int, double)>& on_iteration) {
  LbfgsResult res;
  Eigen::VectorXd g;
  double f = objective(x, g);
  ++res.evaluations;
  if (!std::isfinite(f)) throw Error("non-finite loss at the start of the quasi-Newton phase");
  std::vector<Eigen::VectorXd> S, Y;
  std::vector<double> rho;
  Eigen::VectorXd xn, gn;
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.gradient_norm = g.norm();
    if (res.gradient_norm <= opt.gradient_tolerance) {
      res.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      alpha[k] = rho[k] * S[k].dot(q);
      q -= alpha[k] * Y[k];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * Y[k].dot(q);
      q += (alpha[k] - beta) * S[k];
    }
    Eigen::VectorXd d = -q;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      d = -g;
      slope = -g.squaredNorm();
    }
    double step = S.empty() ? std::min(1.0, 1.0 / res.gradient_norm) : 1.0;
    bool accepted = false;
    double fn = f;
    for (int ls = 0; ls < opt.max_line_search; ++ls) {
      xn = x + step * d;
      fn = objective(xn, gn);
      ++res.evaluations;
      if (std::isfinite(fn) && fn <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    Eigen::VectorXd s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * y.squaredNorm()) {
      if (int(S.size()) == opt.history) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho.erase(rho.begin());
      }
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
    }
    x.swap(xn);
    g.swap(gn);
    f = fn;
    res.iterations = it + 1;
    if (on_iteration) on_iteration(res.iterations, f);
  }
  res.loss = f;
  res.gradient_norm = g.norm();
  if (res.gradient_norm <= opt.gradient_tolerance) res.converged = true;
  return res;
}

void TrainPlan::validate() const {
  if (segment_ends.empty()) throw Error("plan has no segments");
  double prev = 0.0;
  for (double t : segment_ends) {
    if (!(t > prev)) throw Error("segment endpoints must be strictly increasing");
    prev = t;
  }
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (adam_epochs < 0 || lbfgs_iterations < 0) throw Error("iteration counts must be non-negative");
  if (batch_size == 0) throw Error("batch size must be positive");
  if (lbfgs_history < 1) throw Error("quasi-Newton history must be positive");
  if (resample_every < 1) throw Error("resample cadence must be positive");
  if (pool_multiplier < 1.0) throw Error("pool multiplier must be at least 1");
  if (cells_t < 1 || cells_x < 1 || cells_y < 1 || cells_theta < 1) throw Error("cell counts must be positive");
  if (d_f0 < 0 || d_b0 < 0) throw Error("density targets must be non-negative");
  if (!(loss_delta >= 0.0)) throw Error("loss delta must be non-negative");
  if (max_outer < 0) throw Error("outer iteration cap must be non-negative");
  if (interior_points == 0 || initial_points == 0 || boundary_points == 0) throw Error("point counts must be positive");
  if (max_interior < interior_points) throw Error("interior cap below the initial interior count");
  weights.validate();
  network.validate();
}

TrainPlan default_plan_1d() {
  TrainPlan p;
  p.segment_ends = {0.01, 0.2, 0.4, 0.6, 0.8, 1.0};
  p.weights = {1.0, 1.0, 100.0, 1.0, 50.0};
  p.network.input_dim = 2;
  return p;
}

TrainPlan default_plan_2d(double terminal_time) {
  TrainPlan p;
  p.segment_ends = {0.01};
  for (double t = 0.2; t < terminal_time + 1e-12; t += 0.2) p.segment_ends.push_back(std::min(t, terminal_time));
  if (p.segment_ends.back() < terminal_time - 1e-12) p.segment_ends.push_back(terminal_time);
  p.interior_points = 10000;
  p.initial_points = 10000;
  p.boundary_points = 3200;
  p.batch_size = 2048;
  p.weights = {1.0, 1.0, 1000.0, 1.0, 1.0};
  p.network.input_dim = 3;
  p.max_interior = 200000;
  return p;
}

namespace {

InputScaling segment_scaling(const Domain& domain, double t0, double t1) {
  const int dim = domain.spatial_dim();
  InputScaling s{Eigen::VectorXd(dim + 1), Eigen::VectorXd(dim + 1)};
  for (int d = 0; d < dim; ++d) {
    s.lower[d] = domain.bounding_box().lower[d];
    s.upper[d] = domain.bounding_box().upper[d];
  }
  s.lower[dim] = t0;
  s.upper[dim] = t1;
  return s;
}

std::vector<double> network_values(const Mlp& net, int dim, std::span<const SpaceTimePoint> pts) {
  Eigen::MatrixXd X(dim + 1, Eigen::Index(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) X.col(Eigen::Index(i)) = network_input(dim, pts[i].x, pts[i].t);
  const Eigen::RowVectorXd v = net.values(X);
  return {v.data(), v.data() + v.size()};
}

std::uint64_t event_key(int segment, int event) { return std::uint64_t(segment) * 1000003ULL + std::uint64_t(event); }

}  // namespace

TrainingSet initial_training_set(const PdeSystem& sys, const Domain& domain, const TrainPlan& plan, double t_begin,
                                 double t_end, const Mlp* previous, std::uint64_t seed) {
  Rng rng(seed);
  TrainingSet ts;
  ts.interior = sample_interior(domain, plan.interior_points, {t_begin, t_end}, rng);
  ts.boundary = sample_boundary(domain, plan.boundary_points, {t_begin, t_end}, rng);
  ts.initial = sample_initial(domain, plan.initial_points, t_begin, rng);
  if (previous) {
    ts.initial_target = network_values(*previous, domain.spatial_dim(), ts.initial);
  } else {
    if (!sys.initial_condition) throw Error("system has no initial condition");
    ts.initial_target.reserve(ts.initial.size());
    for (const auto& p : ts.initial) ts.initial_target.push_back(sys.initial_condition(p.x));
  }
  return ts;
}

namespace {

struct EventState {
  std::size_t added = 0;
  int events = 0;
  std::optional<double> last_loss;
  bool converged = false;
  bool saturated = false;
};

void score_set(const Mlp& net, const PdeSystem& sys, const Domain& domain, const CellGrid& grid, TrainingSet& ts) {
  score_interior(net, sys, domain.spatial_dim(), ts.interior, ts.interior_residual, ts.interior_edrd);
  ts.interior_cell.resize(ts.interior.size());
  for (std::size_t i = 0; i < ts.interior.size(); ++i) ts.interior_cell[i] = grid.interior_cell(ts.interior[i]);
  score_boundary(net, sys, domain, ts.boundary, ts.boundary_residual, ts.boundary_edrd);
  ts.boundary_cell.resize(ts.boundary.size());
  for (std::size_t i = 0; i < ts.boundary.size(); ++i) ts.boundary_cell[i] = grid.boundary_cell(ts.boundary[i]);
  ++ts.cache_stamp;
}

CandidatePool build_pool(const Mlp& net, const PdeSystem& sys, const Domain& domain, const CellGrid& grid,
                         const TrainPlan& plan, double t0, double t1, std::uint64_t seed) {
  CandidatePool pool;
  pool.seed = seed;
  Rng rng(seed);
  double n_int = plan.pool_multiplier * double(plan.resample_m);
  if (plan.strategy == Strategy::edras_full)
    n_int = std::max(n_int, plan.pool_multiplier * double(grid.d_f0) * double(grid.active_interior_cells()));
  pool.interior = sample_interior(domain, std::size_t(std::ceil(n_int)), {t0, t1}, rng);
  score_interior(net, sys, domain.spatial_dim(), pool.interior, pool.interior_residual, pool.interior_edrd);
  pool.interior_cell.resize(pool.interior.size());
  for (std::size_t i = 0; i < pool.interior.size(); ++i) pool.interior_cell[i] = grid.interior_cell(pool.interior[i]);
  double n_b = plan.pool_multiplier * double(plan.resample_m_boundary);
  if (plan.strategy == Strategy::edras_full && grid.d_b0 > 0)
    n_b = std::max(n_b, plan.pool_multiplier * double(grid.d_b0) * double(grid.boundary_cell_count()));
  if (n_b > 0.0) {
    pool.boundary = sample_boundary(domain, std::size_t(std::ceil(n_b)), {t0, t1}, rng);
    score_boundary(net, sys, domain, pool.boundary, pool.boundary_residual, pool.boundary_edrd);
    pool.boundary_cell.resize(pool.boundary.size());
    for (std::size_t i = 0; i < pool.boundary.size(); ++i) pool.boundary_cell[i] = grid.boundary_cell(pool.boundary[i]);
  }
  return pool;
}

}  // namespace

SegmentReport train_segment(int index, Segment& seg, TrainingSet& ts, const PdeSystem& sys, const Domain& domain,
                            const TrainPlan& plan, std::uint64_t master_seed, std::vector<LossRecord>& history,
                            const RunHooks& hooks) {
  SegmentReport rep;
  rep.index = index;
  rep.t_begin = seg.t_begin;
  rep.t_end = seg.t_end;
  const LossContext ctx{&sys, &domain, plan.weights};
  CellGrid grid(domain, {seg.t_begin, seg.t_end}, plan.cells_t, plan.cells_x, plan.cells_y, plan.cells_theta);
  grid.d_f0 = plan.d_f0 > 0 ? plan.d_f0
                            : int(std::ceil(double(plan.interior_points) / double(grid.active_interior_cells())));
  grid.d_b0 = plan.d_b0;

  Mlp& net = seg.net;
  Eigen::VectorXd grad;
  Adam adam({plan.learning_rate});
  EventState ev;
  std::vector<std::size_t> perm_f, perm_b, perm_i;

  auto fail = [&](const std::string& what, int epoch, std::vector<SpaceTimePoint> batch) {
    throw TrainingDiverged(what + " (segment " + std::to_string(index) + ", epoch " + std::to_string(epoch) + ")", index,
                           epoch, net.parameters(), std::move(batch));
  };

  for (int epoch = 1; epoch <= plan.adam_epochs; ++epoch) {
    Rng erng(derive_seed(master_seed, "epoch", event_key(index, epoch)));
    auto shuffled = [&](std::vector<std::size_t>& perm, std::size_t n) {
      perm.resize(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), erng);
    };
    shuffled(perm_f, ts.interior.size());
    shuffled(perm_b, ts.boundary.size());
    shuffled(perm_i, ts.initial.size());
    const std::size_t nb = std::max<std::size_t>(1, (ts.interior.size() + plan.batch_size - 1) / plan.batch_size);
    LossTerms acc;
    double acc_total = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      auto part = [&](const std::vector<std::size_t>& perm) {
        const std::size_t a = k * perm.size() / nb, b = (k + 1) * perm.size() / nb;
        return std::span<const std::size_t>(perm.data() + a, b - a);
      };
      const BatchView view{part(perm_f), part(perm_b), part(perm_i)};
      LossTerms t;
      const double L = loss_and_gradient(net, ctx, ts, &view, grad, &t);
      if (!std::isfinite(L) || !grad.allFinite()) fail("non-finite loss", epoch, gather(ts.interior, view.interior));
      adam.step(net.parameters(), grad);
      acc.L_f += t.L_f / double(nb);
      acc.L_b += t.L_b / double(nb);
      acc.L_b1 += t.L_b1 / double(nb);
      acc.L_b2 += t.L_b2 / double(nb);
      acc.L_i += t.L_i / double(nb);
      acc_total += L / double(nb);
    }
    history.push_back({epoch, acc, acc_total});
    if (hooks.on_epoch) hooks.on_epoch(index, history.back());
    rep.adam_epochs_run = epoch;

    const bool due = epoch % plan.resample_every == 0 && ev.added < plan.add_budget && ev.events < plan.max_outer &&
                     !ev.converged && !ev.saturated;
    if (!due) continue;
    score_set(net, sys, domain, grid, ts);
    const LossTerms full = loss_terms(net, ctx, ts);
    const double L_now = total_loss(full, plan.weights, sys.regime);
    if (ev.last_loss && std::abs(L_now - *ev.last_loss) < plan.loss_delta) {
      ev.converged = true;
      continue;
    }
    ev.last_loss = L_now;
    const CandidatePool pool = build_pool(net, sys, domain, grid, plan, seg.t_begin, seg.t_end,
                                          derive_seed(master_seed, "pool", event_key(index, ev.events)));
    Rng srng(derive_seed(master_seed, "resample", event_key(index, ev.events)));
    ResampleRequest req;
    req.strategy = plan.strategy;
    req.m = std::min(plan.resample_m, plan.add_budget - ev.added);
    req.m_boundary = plan.resample_m_boundary;
    req.max_interior = plan.max_interior;
    ResampleResult result = resample_step(req, ts, pool, grid, srng);
    std::size_t added = 0;
    for (const auto& c : result.changes) added += std::size_t(c.added);
    if (hooks.on_resample) hooks.on_resample({index, ev.events, epoch, &net, &ts, &pool, &result});
    if (hooks.sampling_log) append_sampling_log(*hooks.sampling_log, index, ev.events, plan.strategy, result.changes);
    ts = std::move(result.set);
    ev.added += added;
    ev.saturated = result.saturated;
    ++ev.events;
  }
  rep.resample_events = ev.events;
  rep.points_added = ev.added;
  rep.saturated = ev.saturated;
  rep.outer_converged = ev.converged;

  if (plan.lbfgs_iterations > 0) {
    LossTerms last;
    auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      net.set_parameters(x);
      return loss_and_gradient(net, ctx, ts, nullptr, g, &last);
    };
    Eigen::VectorXd params = net.parameters();
    const int base = plan.adam_epochs;
    LbfgsOptions lo;
    lo.max_iterations = plan.lbfgs_iterations;
    lo.history = plan.lbfgs_history;
    lo.gradient_tolerance = plan.lbfgs_tolerance;
    const LbfgsResult lr = lbfgs_minimize(objective, params, lo, [&](int it, double f) {
      history.push_back({base + it, last, f});
      if (hooks.on_epoch) hooks.on_epoch(index, history.back());
    });
    net.set_parameters(params);
    rep.lbfgs_iterations = lr.iterations;
  }
  rep.final_terms = loss_terms(net, ctx, ts);
  rep.final_loss = total_loss(rep.final_terms, plan.weights, sys.regime);
  if (!std::isfinite(rep.final_loss)) fail("non-finite loss", plan.adam_epochs + rep.lbfgs_iterations, {});
  rep.interior_size = ts.interior.size();
  return rep;
}

SolutionModel run_time_marching(const PdeSystem& sys, const Domain& domain, const TrainPlan& plan,
                                std::uint64_t master_seed, RunReport* report, const RunHooks& hooks) {
  sys.validate();
  plan.validate();
  const int dim = domain.spatial_dim();
  if (plan.network.input_dim != dim + 1) throw Error("network input dimension must be spatial dimension + 1");
  if (std::abs(plan.segment_ends.back() - sys.terminal_time) > 1e-12)
    throw Error("last segment endpoint must equal the terminal time");
  if (sys.regime == BoundaryRegime::periodic1d && dim != 1) throw Error("periodic regime requires an interval");
  if (sys.regime == BoundaryRegime::dynamic && !domain.has_parameterization())
    throw Error("no closed-form parameterization");

  SolutionModel model(dim);
  RunReport local;
  RunReport& rr = report ? *report : local;
  if (hooks.sampling_log) write_sampling_log_header(*hooks.sampling_log);
  std::size_t budget_left = plan.add_budget;
  double t0 = 0.0;
  for (std::size_t i = 0; i < plan.segment_ends.size(); ++i) {
    const double t1 = plan.segment_ends[i];
    Segment seg;
    seg.t_begin = t0;
    seg.t_end = t1;
    seg.seed = derive_seed(master_seed, "init", i);
    const Mlp* prev = model.segments().empty() ? nullptr : &model.segments().back().net;
    seg.net = Mlp::initialize(plan.network, segment_scaling(domain, t0, t1), seg.seed);
    if (prev && plan.warm_start) seg.net.set_parameters(prev->parameters());
    TrainingSet ts = initial_training_set(sys, domain, plan, t0, t1, prev, derive_seed(master_seed, "points", i));
    TrainPlan seg_plan = plan;
    if (!plan.budget_per_segment) seg_plan.add_budget = budget_left;
    std::vector<LossRecord> history;
    SegmentReport rep;
    try {
      rep = train_segment(int(i), seg, ts, sys, domain, seg_plan, master_seed, history, hooks);
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const Error& e) {
      throw Error("segment " + std::to_string(i) + ": " + e.what());
    }
    if (!plan.budget_per_segment) budget_left -= std::min(budget_left, rep.points_added);
    if (prev) {
      Rng prng(derive_seed(master_seed, "handoff", i));
      const auto probes = sample_initial(domain, 1000, t0, prng);
      const auto a = network_values(*prev, dim, probes), b = network_values(seg.net, dim, probes);
      for (std::size_t k = 0; k < probes.size(); ++k) rep.handoff_error = std::max(rep.handoff_error, std::abs(a[k] - b[k]));
    }
    info("segment " + std::to_string(i) + " [" + std::to_string(t0) + ", " + std::to_string(t1) +
         "] loss " + std::to_string(rep.final_loss));
    rr.segments.push_back(rep);
    rr.histories.push_back(std::move(history));
    model.segments().push_back(std::move(seg));
    t0 = t1;
  }
  return model;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& history) {
  out << "epoch,L_f,L_b,L_i,total\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.terms.L_f, r.terms.L_b, r.terms.L_i,
                  r.total);
    out << buf;
  }
}

}  // namespace edras
