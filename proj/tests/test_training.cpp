#include <doctest.h>

#include "edras/training.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

using namespace edras;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

Mlp constant_net(int input_dim, double c) {
  Mlp net(MlpSpec{input_dim, 1, 4, Activation::tanh}, InputScaling::identity(input_dim));
  VectorXd p = VectorXd::Zero(net.parameter_count());
  p[p.size() - 1] = c;
  net.set_parameters(p);
  return net;
}

// u(x, t) = sin(a x) / a, which is x up to O(a^2).
Mlp almost_identity_1d(double a) {
  Mlp net(MlpSpec{2, 1, 1, Activation::sine}, InputScaling::identity(2));
  VectorXd p(5);
  p << a, 0, 0, 1 / a, 0;
  net.set_parameters(p);
  return net;
}

Mlp random_net(int input_dim, std::uint64_t seed) {
  Mlp net = Mlp::initialize({input_dim, 2, 12, Activation::tanh}, InputScaling::identity(input_dim), seed);
  Rng r(seed);
  std::normal_distribution<double> N(0.0, 0.3);
  for (Eigen::Index i = 0; i < net.parameter_count(); ++i) net.parameters()[i] += N(r);
  return net;
}

TrainingSet random_set(const PdeSystem& sys, const Domain& d, std::size_t n, std::uint64_t seed) {
  TrainPlan p;
  p.interior_points = n;
  p.boundary_points = n;
  p.initial_points = n;
  return initial_training_set(sys, d, p, 0.0, 0.5, nullptr, seed);
}

double fd_loss_gradient_error(const Mlp& base, const LossContext& ctx, const TrainingSet& ts, const BatchView* view) {
  Mlp net = base;
  VectorXd g;
  loss_and_gradient(net, ctx, ts, view, g);
  VectorXd fd(g.size());
  const double h = 1e-6;
  VectorXd p0 = net.parameters(), tmp;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    VectorXd p = p0;
    p[i] += h;
    net.set_parameters(p);
    const double up = loss_and_gradient(net, ctx, ts, view, tmp);
    p[i] -= 2 * h;
    net.set_parameters(p);
    const double dn = loss_and_gradient(net, ctx, ts, view, tmp);
    fd[i] = (up - dn) / (2 * h);
  }
  return (fd - g).norm() / std::max(1e-12, fd.norm());
}

TrainPlan tiny_plan_1d(std::vector<double> ends) {
  TrainPlan p;
  p.segment_ends = std::move(ends);
  p.network = {2, 1, 8, Activation::tanh};
  p.interior_points = 60;
  p.boundary_points = 10;
  p.initial_points = 40;
  p.batch_size = 32;
  p.adam_epochs = 40;
  p.lbfgs_iterations = 20;
  p.resample_every = 10;
  p.resample_m = 10;
  p.add_budget = 30;
  p.cells_t = 2;
  p.cells_x = 5;
  return p;
}

PdeSystem toy_1d(double T) {
  PdeSystem s = preset_ac1d_periodic();
  s.terminal_time = T;
  return s;
}

const Domain kLine = Domain::interval(-1, 1);
const Domain kDisk = Domain::disk({0, 0}, 1);

}  // namespace

TEST_CASE("weighted total") {
  LossTerms t;
  t.L_f = 1;
  t.L_b = 2;
  t.L_i = 3;
  CHECK(total_loss(t, {1, 1, 1, 1, 1}, BoundaryRegime::neumann) == 6.0);
  CHECK(total_loss(t, {0, 0, 0, 0, 0}, BoundaryRegime::dynamic) == 0.0);
  LossTerms u;
  u.L_i = 0.01;
  CHECK(total_loss(u, {1, 1, 100, 1, 1}, BoundaryRegime::neumann) == doctest::Approx(1.0));
  LossTerms v;
  v.L_b1 = 2;
  v.L_b2 = 3;
  v.L_b = 5;
  CHECK(total_loss(v, {1, 7, 1, 1, 50}, BoundaryRegime::periodic1d) == doctest::Approx(152.0));
  CHECK_THROWS_AS((LossWeights{1, -1, 1, 1, 1}.validate()), Error);
  CHECK_THROWS_AS((LossWeights{1, NAN, 1, 1, 1}.validate()), Error);
}

TEST_CASE("loss terms on exact and hand-made fields") {
  SUBCASE("constant pure phase is an exact steady state") {
    for (BoundaryRegime r : {BoundaryRegime::neumann, BoundaryRegime::dynamic}) {
      PdeSystem s = preset_ac2d_dynamic();
      s.regime = r;
      s.initial_condition = make_initial_condition("constant", 1.0);
      const TrainingSet ts = random_set(s, kDisk, 50, 3);
      const LossTerms t = loss_terms(constant_net(3, 1.0), {&s, &kDisk, {}}, ts);
      CHECK(t.L_f == 0.0);
      CHECK(t.L_b == 0.0);
      CHECK(t.L_i == 0.0);
    }
  }
  SUBCASE("single initial point") {
    PdeSystem s = preset_ac2d_neumann();
    TrainingSet ts = random_set(s, kDisk, 5, 4);
    ts.initial = {SpaceTimePoint{Vector2d(0.1, 0.2), 0.0, PointTag::initial}};
    ts.initial_target = {0.5};
    CHECK(loss_terms(constant_net(3, 0.3), {&s, &kDisk, {}}, ts).L_i == doctest::Approx(0.04));
  }
  SUBCASE("periodic mismatch of u = x") {
    PdeSystem s = preset_ac1d_periodic();
    const TrainingSet ts = random_set(s, kLine, 20, 5);
    const LossTerms t = loss_terms(almost_identity_1d(1e-3), {&s, &kLine, {}}, ts);
    CHECK(t.L_b1 == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(t.L_b2 == 0.0);
    CHECK(t.L_b == doctest::Approx(t.L_b1 + t.L_b2));
  }
  SUBCASE("losses are non-negative") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      PdeSystem s = preset_ac2d_dynamic();
      const LossTerms t = loss_terms(random_net(3, seed), {&s, &kDisk, {}}, random_set(s, kDisk, 30, seed));
      CHECK(t.L_f >= 0);
      CHECK(t.L_b >= 0);
      CHECK(t.L_i >= 0);
    }
  }
  SUBCASE("empty pools and mismatched targets") {
    PdeSystem s = preset_ac2d_neumann();
    const LossContext ctx{&s, &kDisk, {}};
    TrainingSet ts = random_set(s, kDisk, 5, 6);
    TrainingSet a = ts;
    a.interior.clear();
    CHECK_THROWS_WITH_AS(loss_terms(constant_net(3, 0), ctx, a), "empty interior pool", Error);
    a = ts;
    a.boundary.clear();
    CHECK_THROWS_WITH_AS(loss_terms(constant_net(3, 0), ctx, a), "empty boundary pool", Error);
    a = ts;
    a.initial.clear();
    a.initial_target.clear();
    CHECK_THROWS_WITH_AS(loss_terms(constant_net(3, 0), ctx, a), "empty initial pool", Error);
    a = ts;
    a.initial_target.pop_back();
    CHECK_THROWS_AS(loss_terms(constant_net(3, 0), ctx, a), Error);
  }
}

TEST_CASE("loss gradients match finite differences") {
  struct Case {
    PdeSystem sys;
    Domain domain;
  };
  PdeSystem per = preset_ac1d_periodic();
  per.eps = 0.3;  // keeps the diffusion term visible in the gradient
  PdeSystem neu = preset_ac2d_neumann();
  PdeSystem dyn = preset_ac2d_dynamic(2.0, 3.0);
  std::vector<Case> cases{{per, kLine}, {neu, kDisk}, {dyn, kDisk}, {dyn, Domain::ellipse({0.1, 0}, 1.5, 0.8)}};
  for (const auto& c : cases) {
    const int in = c.domain.spatial_dim() + 1;
    const TrainingSet ts = random_set(c.sys, c.domain, 12, 9);
    const LossContext ctx{&c.sys, &c.domain, {1.3, 0.7, 2.0, 1.1, 5.0}};
    for (std::uint64_t seed : {11u, 12u}) {
      const Mlp net = random_net(in, seed);
      CHECK(fd_loss_gradient_error(net, ctx, ts, nullptr) < 1e-6);
      const std::vector<std::size_t> fi{0, 3, 5}, bi{1, 2}, ii{4, 7, 8, 11};
      const BatchView view{fi, bi, ii};
      CHECK(fd_loss_gradient_error(net, ctx, ts, &view) < 1e-6);
    }
  }
}

TEST_CASE("batch loss restricted to all indices equals the full loss") {
  PdeSystem s = preset_ac2d_dynamic();
  const TrainingSet ts = random_set(s, kDisk, 20, 2);
  const LossContext ctx{&s, &kDisk, {1, 1, 1000, 1, 1}};
  std::vector<std::size_t> all(20);
  std::iota(all.begin(), all.end(), 0);
  const BatchView view{all, all, all};
  VectorXd g1, g2;
  const Mlp net = random_net(3, 4);
  const double a = loss_and_gradient(net, ctx, ts, nullptr, g1);
  const double b = loss_and_gradient(net, ctx, ts, &view, g2);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  CHECK((g1 - g2).norm() <= 1e-10 * g1.norm());
  CHECK(a == doctest::Approx(total_loss(loss_terms(net, ctx, ts), ctx.weights, s.regime)).epsilon(1e-12));
}

TEST_CASE("scores agree with the loss and the dissipation density") {
  PdeSystem s = preset_ac2d_dynamic(2.0, 5.0);
  const TrainingSet ts = random_set(s, kDisk, 40, 8);
  const Mlp net = random_net(3, 21);
  std::vector<double> res, edrd, bres, bedrd;
  score_interior(net, s, 2, ts.interior, res, edrd);
  score_boundary(net, s, kDisk, ts.boundary, bres, bedrd);
  REQUIRE(res.size() == 40);
  REQUIRE(bedrd.size() == 40);
  const LossTerms t = loss_terms(net, {&s, &kDisk, {}}, ts);
  double sf = 0, sb = 0;
  for (double r : res) sf += r * r;
  for (double r : bres) sb += r * r;
  CHECK(sf / 40 == doctest::Approx(t.L_f).epsilon(1e-10));
  CHECK(sb / 40 == doctest::Approx(t.L_b).epsilon(1e-10));
  for (std::size_t i = 0; i < 40; i += 7) {
    const auto& p = ts.interior[i];
    const double h = 1e-5;
    const double up = net.value(std::vector<double>{p.x.x(), p.x.y(), p.t + h});
    const double dn = net.value(std::vector<double>{p.x.x(), p.x.y(), p.t - h});
    const double phit = (up - dn) / (2 * h);
    CHECK(edrd[i] == doctest::Approx(phit * phit / s.Mb).epsilon(1e-6));
    const auto& b = ts.boundary[i];
    const double bu = net.value(std::vector<double>{b.position.x(), b.position.y(), b.t + h});
    const double bd = net.value(std::vector<double>{b.position.x(), b.position.y(), b.t - h});
    CHECK(bedrd[i] == doctest::Approx(std::pow((bu - bd) / (2 * h), 2) / s.Ms).epsilon(1e-6));
  }
  PdeSystem n = preset_ac2d_neumann();
  score_boundary(net, n, kDisk, ts.boundary, bres, bedrd);
  CHECK(bres.size() == 40);
  CHECK(bedrd.empty());
}

TEST_CASE("first-order optimizer") {
  Adam adam({0.1});
  VectorXd x(2);
  x << 3, -2;
  VectorXd g = 2 * x;
  VectorXd before = x;
  adam.step(x, g);
  // The bias-corrected first step moves every coordinate by the step size.
  CHECK((x - before).cwiseAbs().maxCoeff() == doctest::Approx(0.1).epsilon(1e-6));
  for (int k = 0; k < 2000; ++k) adam.step(x, 2 * x);
  CHECK(x.norm() < 1e-2);
  CHECK(adam.steps() == 2001);
}

TEST_CASE("quasi-Newton optimizer") {
  SUBCASE("Rosenbrock") {
    auto rosen = [](const VectorXd& x, VectorXd& g) {
      g.resize(2);
      g[0] = -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] * x[0]);
      g[1] = 200 * (x[1] - x[0] * x[0]);
      return std::pow(1 - x[0], 2) + 100 * std::pow(x[1] - x[0] * x[0], 2);
    };
    VectorXd x(2);
    x << -1.2, 1;
    LbfgsOptions o;
    o.max_iterations = 500;
    o.history = 10;
    std::vector<double> seen;
    const LbfgsResult r = lbfgs_minimize(rosen, x, o, [&](int, double f) { seen.push_back(f); });
    CHECK(r.converged);
    CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(int(seen.size()) == r.iterations);
    for (std::size_t k = 1; k < seen.size(); ++k) CHECK(seen[k] <= seen[k - 1]);
  }
  SUBCASE("convex quadratic terminates quickly") {
    const int n = 20;
    VectorXd d = VectorXd::LinSpaced(n, 1, 50);
    auto q = [&](const VectorXd& x, VectorXd& g) {
      g = d.cwiseProduct(x);
      return 0.5 * x.dot(g);
    };
    VectorXd x = VectorXd::Ones(n);
    LbfgsOptions o;
    o.max_iterations = 200;
    const LbfgsResult r = lbfgs_minimize(q, x, o);
    CHECK(r.converged);
    CHECK(x.norm() < 1e-8);
    CHECK(r.iterations < 80);
  }
  SUBCASE("zero iterations leave the point alone") {
    VectorXd x(1);
    x << 2;
    LbfgsOptions o;
    o.max_iterations = 0;
    lbfgs_minimize([](const VectorXd& v, VectorXd& g) { g = 2 * v; return v.squaredNorm(); }, x, o);
    CHECK(x[0] == 2.0);
  }
  SUBCASE("non-finite start") {
    VectorXd x(1);
    x << 1;
    CHECK_THROWS_AS(lbfgs_minimize([](const VectorXd&, VectorXd& g) { g = VectorXd::Zero(1); return NAN; }, x, {}),
                    Error);
  }
}

TEST_CASE("plans") {
  const TrainPlan p1 = default_plan_1d();
  CHECK(p1.segment_ends == std::vector<double>{0.01, 0.2, 0.4, 0.6, 0.8, 1.0});
  CHECK(p1.interior_points == 1000);
  CHECK(p1.initial_points == 514);
  CHECK(p1.boundary_points == 200);
  CHECK(p1.weights.w_i == 100);
  CHECK(p1.weights.w_b2 == 50);
  CHECK(p1.adam_epochs == 3000);
  CHECK(p1.batch_size == 32);
  CHECK(p1.lbfgs_iterations == 50000);
  CHECK_NOTHROW(p1.validate());
  const TrainPlan p2 = default_plan_2d();
  REQUIRE(p2.segment_ends.size() == 6);
  CHECK(p2.segment_ends.front() == 0.01);
  for (std::size_t k = 1; k < 6; ++k) CHECK(p2.segment_ends[k] == doctest::Approx(0.2 * double(k)));
  CHECK(p2.interior_points == 10000);
  CHECK(p2.boundary_points == 3200);
  CHECK(p2.batch_size == 2048);
  CHECK(p2.weights.w_i == 1000);
  CHECK(default_plan_2d(0.4).segment_ends.back() == doctest::Approx(0.4));

  TrainPlan bad = p1;
  bad.segment_ends = {0.2, 0.1};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = p1;
  bad.segment_ends.clear();
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = p1;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = p1;
  bad.max_interior = 10;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("an empty schedule leaves the parameters unchanged") {
  const PdeSystem s = toy_1d(0.01);
  TrainPlan p = tiny_plan_1d({0.01});
  p.adam_epochs = 0;
  p.lbfgs_iterations = 0;
  Segment seg{0.0, 0.01, Mlp::initialize(p.network, InputScaling::identity(2), 3), 3};
  const VectorXd before = seg.net.parameters();
  TrainingSet ts = initial_training_set(s, kLine, p, 0.0, 0.01, nullptr, 1);
  std::vector<LossRecord> history;
  const SegmentReport r = train_segment(0, seg, ts, s, kLine, p, 5, history);
  CHECK(seg.net.parameters() == before);
  CHECK(history.empty());
  CHECK(r.resample_events == 0);
}

TEST_CASE("resampling cadence and budget") {
  const PdeSystem s = toy_1d(0.01);
  TrainPlan p = tiny_plan_1d({0.01});
  p.network = {2, 1, 4, Activation::tanh};
  p.interior_points = 20;
  p.batch_size = 1 << 20;
  p.adam_epochs = 1300;
  p.lbfgs_iterations = 0;
  p.resample_every = 40;
  p.resample_m = 100;
  p.add_budget = 3000;
  p.loss_delta = 0.0;
  p.strategy = Strategy::rar;
  Segment seg{0.0, 0.01, Mlp::initialize(p.network, InputScaling::identity(2), 3), 3};
  TrainingSet ts = initial_training_set(s, kLine, p, 0.0, 0.01, nullptr, 1);
  std::vector<LossRecord> history;
  std::vector<int> epochs;
  RunHooks hooks;
  hooks.on_resample = [&](const ResampleEvent& e) { epochs.push_back(e.epoch); };
  const SegmentReport r = train_segment(0, seg, ts, s, kLine, p, 5, history, hooks);
  CHECK(r.resample_events == 30);
  CHECK(r.points_added == 3000);
  CHECK(ts.interior.size() == 3020);
  CHECK(history.size() == 1300);
  REQUIRE(epochs.size() == 30);
  for (std::size_t k = 0; k < 30; ++k) CHECK(epochs[k] == 40 * int(k + 1));
}

TEST_CASE("outer loop stops once the loss stalls") {
  const PdeSystem s = toy_1d(0.01);
  TrainPlan p = tiny_plan_1d({0.01});
  p.adam_epochs = 200;
  p.lbfgs_iterations = 0;
  p.loss_delta = 1e9;
  Segment seg{0.0, 0.01, Mlp::initialize(p.network, InputScaling::identity(2), 3), 3};
  TrainingSet ts = initial_training_set(s, kLine, p, 0.0, 0.01, nullptr, 1);
  std::vector<LossRecord> history;
  const SegmentReport r = train_segment(0, seg, ts, s, kLine, p, 5, history);
  CHECK(r.outer_converged);
  CHECK(r.resample_events == 1);
}

TEST_CASE("density-aware training keeps cells populated") {
  PdeSystem s = toy_1d(0.01);
  TrainPlan p = tiny_plan_1d({0.01});
  p.strategy = Strategy::edras_full;
  p.adam_epochs = 30;
  p.lbfgs_iterations = 0;
  p.add_budget = 100000;
  Segment seg{0.0, 0.01, Mlp::initialize(p.network, InputScaling::identity(2), 3), 3};
  TrainingSet ts = initial_training_set(s, kLine, p, 0.0, 0.01, nullptr, 1);
  std::vector<LossRecord> history;
  const CellGrid grid(kLine, {0.0, 0.01}, p.cells_t, p.cells_x, 1, 1);
  const int d_f0 = int(std::ceil(double(p.interior_points) / grid.active_interior_cells()));
  int events = 0;
  RunHooks hooks;
  hooks.on_resample = [&](const ResampleEvent& e) {
    ++events;
    std::map<int, int> have, avail;
    for (const auto& q : e.result->set.interior) ++have[grid.interior_cell(q)];
    for (int c : e.pool->interior_cell) ++avail[c];
    for (int c = 0; c < grid.interior_cell_count(); ++c) CHECK(have[c] >= std::min(d_f0, avail[c]));
  };
  train_segment(0, seg, ts, s, kLine, p, 5, history, hooks);
  CHECK(events == 3);
}

TEST_CASE("divergence is reported with a snapshot") {
  PdeSystem s = toy_1d(0.01);
  s.initial_condition = [](const Vector2d&) { return NAN; };
  TrainPlan p = tiny_plan_1d({0.01});
  Segment seg{0.0, 0.01, Mlp::initialize(p.network, InputScaling::identity(2), 3), 3};
  TrainingSet ts = initial_training_set(s, kLine, p, 0.0, 0.01, nullptr, 1);
  std::vector<LossRecord> history;
  try {
    train_segment(0, seg, ts, s, kLine, p, 5, history);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.segment == 0);
    CHECK(e.epoch == 1);
    CHECK(e.parameters.size() == seg.net.parameter_count());
    CHECK_FALSE(e.batch.empty());
  }
}

TEST_CASE("time marching") {
  const PdeSystem s = toy_1d(0.05);
  TrainPlan p = tiny_plan_1d({0.01, 0.03, 0.05});
  p.adam_epochs = 60;
  p.lbfgs_iterations = 60;
  RunReport rep;
  std::ostringstream log;
  RunHooks hooks;
  hooks.sampling_log = &log;
  const SolutionModel m = run_time_marching(s, kLine, p, 99, &rep, hooks);
  REQUIRE(m.segments().size() == 3);
  CHECK(m.segments()[0].t_end == 0.01);
  CHECK(m.segments()[2].t_end == 0.05);
  REQUIRE(rep.segments.size() == 3);
  CHECK(rep.segments[0].handoff_error == 0.0);
  for (std::size_t i = 1; i < 3; ++i)
    CHECK(rep.segments[i].handoff_error <= 10 * std::sqrt(rep.segments[i].final_terms.L_i));
  CHECK(log.str().rfind("segment,event,strategy,pool,cell,added,removed\n", 0) == 0);

  SUBCASE("reproducible") {
    RunReport again;
    run_time_marching(s, kLine, p, 99, &again);
    for (std::size_t i = 0; i < 3; ++i) {
      REQUIRE(again.histories[i].size() == rep.histories[i].size());
      for (std::size_t k = 0; k < rep.histories[i].size(); ++k)
        CHECK(again.histories[i][k].total == rep.histories[i][k].total);
    }
  }
  SUBCASE("global budget") {
    TrainPlan g = p;
    g.budget_per_segment = false;
    g.add_budget = 25;
    RunReport gr;
    run_time_marching(s, kLine, g, 99, &gr);
    std::size_t total = 0;
    for (const auto& r : gr.segments) total += r.points_added;
    CHECK(total == 25);
  }
  SUBCASE("misconfigured runs") {
    TrainPlan bad = p;
    bad.segment_ends = {0.01, 0.04};
    CHECK_THROWS_AS(run_time_marching(s, kLine, bad, 1), Error);
    bad = p;
    bad.network.input_dim = 3;
    CHECK_THROWS_AS(run_time_marching(s, kLine, bad, 1), Error);
    PdeSystem ps = s;
    TrainPlan dp = p;
    dp.network.input_dim = 3;
    CHECK_THROWS_AS(run_time_marching(ps, kDisk, dp, 1), Error);
  }
}

TEST_CASE("short single-segment run lowers the loss") {
  const PdeSystem s = toy_1d(0.01);
  TrainPlan p = tiny_plan_1d({0.01});
  p.adam_epochs = 50;
  p.lbfgs_iterations = 0;
  p.network = {2, 2, 16, Activation::tanh};
  RunReport rep;
  const SolutionModel m = run_time_marching(s, kLine, p, 7, &rep);
  CHECK(m.segments().size() == 1);
  const auto& h = rep.histories[0];
  REQUIRE(h.size() == 50);
  double head = 0, tail = 0;
  for (int k = 0; k < 10; ++k) {
    head += h[std::size_t(k)].total;
    tail += h[h.size() - 1 - std::size_t(k)].total;
  }
  CHECK(tail < head);
}

TEST_CASE("loss history csv") {
  std::ostringstream out;
  LossRecord r;
  r.epoch = 3;
  r.terms.L_f = 0.5;
  r.terms.L_b = 0.25;
  r.terms.L_i = 0.125;
  r.total = 1;
  write_loss_csv(out, {r});
  CHECK(out.str() == "epoch,L_f,L_b,L_i,total\n3,0.5,0.25,0.125,1\n");
}
