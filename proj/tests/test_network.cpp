#include <doctest.h>

#include "edras/fields.hpp"
#include "edras/network.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace edras;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Mlp random_net(int in, int layers, int width, Activation act, std::uint64_t seed) {
  MlpSpec s{in, layers, width, act};
  InputScaling sc{VectorXd::Constant(in, -1.5), VectorXd::Constant(in, 2.0)};
  Mlp net = Mlp::initialize(s, sc, seed);
  // Non-zero biases so every code path sees them.
  Rng r(seed + 1);
  std::normal_distribution<double> N(0.0, 0.3);
  for (Eigen::Index i = 0; i < net.parameter_count(); ++i) net.parameters()[i] += N(r);
  return net;
}

double f_at(const Mlp& net, VectorXd x) { return net.value(std::span<const double>(x.data(), std::size_t(x.size()))); }

// Fourth-order central differences.
double d1_fd(const Mlp& net, const VectorXd& x, const VectorXd& v, double h) {
  return (-f_at(net, x + 2 * h * v) + 8 * f_at(net, x + h * v) - 8 * f_at(net, x - h * v) + f_at(net, x - 2 * h * v)) /
         (12 * h);
}

double d2_fd(const Mlp& net, const VectorXd& x, const VectorXd& v, double h) {
  return (-f_at(net, x + 2 * h * v) + 16 * f_at(net, x + h * v) - 30 * f_at(net, x) + 16 * f_at(net, x - h * v) -
          f_at(net, x - 2 * h * v)) /
         (12 * h * h);
}

double rel(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("spec validation and layout") {
  CHECK_THROWS_AS(MlpSpec({0, 3, 8}).validate(), Error);
  CHECK_THROWS_AS(MlpSpec({2, 0, 8}).validate(), Error);
  CHECK_THROWS_AS(MlpSpec({2, 3, 0}).validate(), Error);
  const Mlp net = Mlp::initialize({3, 2, 5}, InputScaling::identity(3), 1);
  CHECK(net.parameter_count() == (5 * 3 + 5) + (5 * 5 + 5) + (5 + 1));
  CHECK_THROWS_WITH_AS(Mlp(MlpSpec{2, 1, 4}, InputScaling::identity(3)), "input scaling dimension mismatch", Error);
  CHECK(parse_activation("sine") == Activation::sine);
  CHECK_THROWS_AS(parse_activation("relu"), Error);
}

TEST_CASE("initialization is seeded, Glorot bounded, with zero biases") {
  const Mlp a = Mlp::initialize({2, 2, 16}, InputScaling::identity(2), 11);
  const Mlp b = Mlp::initialize({2, 2, 16}, InputScaling::identity(2), 11);
  const Mlp c = Mlp::initialize({2, 2, 16}, InputScaling::identity(2), 12);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
  const VectorXd& p = a.parameters();
  const double lim0 = std::sqrt(6.0 / (16 + 2));
  for (int i = 0; i < 32; ++i) CHECK(std::abs(p[i]) <= lim0);
  for (int i = 32; i < 48; ++i) CHECK(p[i] == 0.0);
}

TEST_CASE("input derivatives match fourth-order finite differences") {
  // 100 random points on random tanh networks: phi_t, grad phi and the Laplacian.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Mlp net = random_net(3, 3, 24, Activation::tanh, seed);
    Rng r(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<SpaceTimePoint> pts(100);
    for (auto& p : pts) p = {{U(r), U(r)}, 0.5 + 0.5 * U(r), PointTag::interior};
    const auto s = evaluate_interior(net, 2, pts);
    std::vector<double> dt, dtf, gx, gxf, gy, gyf, lap, lapf;
    const double h = 1e-2;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const VectorXd x = network_input(2, pts[i].x, pts[i].t);
      dt.push_back(*s[i].dt);
      dtf.push_back(d1_fd(net, x, VectorXd::Unit(3, 2), h));
      gx.push_back(s[i].grad->x());
      gxf.push_back(d1_fd(net, x, VectorXd::Unit(3, 0), h));
      gy.push_back(s[i].grad->y());
      gyf.push_back(d1_fd(net, x, VectorXd::Unit(3, 1), h));
      lap.push_back(*s[i].laplacian);
      lapf.push_back(d2_fd(net, x, VectorXd::Unit(3, 0), h) + d2_fd(net, x, VectorXd::Unit(3, 1), h));
    }
    CHECK(rel(dt, dtf) <= 1e-5);
    CHECK(rel(gx, gxf) <= 1e-5);
    CHECK(rel(gy, gyf) <= 1e-5);
    CHECK(rel(lap, lapf) <= 1e-5);
  }
}

TEST_CASE("per-point tangents and sine activation") {
  const Mlp net = random_net(3, 2, 12, Activation::sine, 7);
  Rng r(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const int B = 20;
  MatrixXd X(3, B), V(3, B);
  for (int i = 0; i < B; ++i) {
    X.col(i) << U(r), U(r), U(r);
    V.col(i) << U(r), U(r), U(r);
  }
  ChannelRequest req;
  req.tangents = {V};
  req.second_order = {0};
  const ChannelOutput o = net.forward(X, req);
  for (int i = 0; i < B; ++i) {
    CHECK(o.first[0][i] == doctest::Approx(d1_fd(net, X.col(i), V.col(i), 1e-2)).epsilon(1e-6));
    CHECK(o.second[0][i] == doctest::Approx(d2_fd(net, X.col(i), V.col(i), 1e-2)).epsilon(1e-5));
  }
}

TEST_CASE("reverse sweep matches parameter finite differences") {
  for (Activation act : {Activation::tanh, Activation::sine}) {
    Mlp net = random_net(3, 2, 6, act, 5);
    Rng r(5);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const int B = 7;
    MatrixXd X(3, B), V(3, B), W(3, B);
    for (int i = 0; i < B; ++i) {
      X.col(i) << U(r), U(r), U(r);
      V.col(i) << U(r), U(r), U(r);
      W.col(i) << U(r), U(r), U(r);
    }
    ChannelRequest req;
    req.tangents = {V, W};
    req.second_order = {1, 0};
    ForwardTape tape;
    const ChannelOutput o = net.forward(X, req, &tape);
    ChannelOutput adj = o;
    for (auto* row : {&adj.value}) row->setRandom();
    for (auto& f : adj.first) f.setRandom();
    for (auto& s : adj.second) s.setRandom();
    auto J = [&](const Mlp& m) {
      const ChannelOutput q = m.forward(X, req);
      double j = q.value.dot(adj.value);
      for (std::size_t c = 0; c < q.first.size(); ++c) j += q.first[c].dot(adj.first[c]);
      for (std::size_t c = 0; c < q.second.size(); ++c) j += q.second[c].dot(adj.second[c]);
      return j;
    };
    VectorXd g = VectorXd::Zero(net.parameter_count());
    net.backward(tape, adj, g);
    const VectorXd p0 = net.parameters();
    for (Eigen::Index k = 0; k < p0.size(); ++k) {
      const double h = 1e-6;
      Mlp a = net, b = net;
      a.parameters()[k] += h;
      b.parameters()[k] -= h;
      const double fd = (J(a) - J(b)) / (2 * h);
      CHECK(g[k] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
    // Accumulation semantics.
    VectorXd g2 = g;
    net.backward(tape, adj, g2);
    CHECK(g2.isApprox(2 * g));
  }
}

TEST_CASE("forward rejects malformed requests") {
  const Mlp net = Mlp::initialize({2, 1, 4}, InputScaling::identity(2), 1);
  CHECK_THROWS_WITH_AS(net.forward(MatrixXd::Zero(3, 2), {}), "input dimension mismatch", Error);
  ChannelRequest bad;
  bad.tangents = {MatrixXd::Zero(2, 3)};
  CHECK_THROWS_WITH_AS(net.forward(MatrixXd::Zero(2, 2), bad), "tangent shape mismatch", Error);
  ChannelRequest bad2;
  bad2.second_order = {0};
  CHECK_THROWS_AS(net.forward(MatrixXd::Zero(2, 2), bad2), Error);
}

TEST_CASE("input scaling maps the box onto [-1, 1]") {
  // One hidden unit with identity-like weights exposes the scaled input.
  MlpSpec s{1, 1, 1, Activation::tanh};
  Mlp net(s, {VectorXd::Constant(1, 2.0), VectorXd::Constant(1, 4.0)});
  VectorXd p(4);
  p << 1.0, 0.0, 1.0, 0.0;
  net.set_parameters(p);
  CHECK(net.value(std::vector<double>{2.0}) == doctest::Approx(std::tanh(-1.0)));
  CHECK(net.value(std::vector<double>{3.0}) == doctest::Approx(0.0));
  CHECK(net.value(std::vector<double>{4.0}) == doctest::Approx(std::tanh(1.0)));
}

TEST_CASE("segment ownership of time") {
  SolutionModel m(1);
  for (auto [a, b] : {std::pair{0.0, 0.01}, {0.01, 0.2}, {0.2, 0.4}}) {
    Segment s;
    s.t_begin = a;
    s.t_end = b;
    s.net = Mlp::initialize({2, 1, 3}, InputScaling::identity(2), 1);
    m.segments().push_back(s);
  }
  CHECK(m.segment_index(0.0) == 0);
  CHECK(m.segment_index(0.01) == 0);
  CHECK(m.segment_index(0.0100001) == 1);
  CHECK(m.segment_index(0.2) == 1);
  CHECK(m.segment_index(0.4) == 2);
  CHECK(m.terminal_time() == 0.4);
  CHECK_THROWS_WITH_AS(m.segment_index(0.41), "time out of range", Error);
  CHECK_THROWS_WITH_AS(m.segment_index(-0.1), "time out of range", Error);
  CHECK_THROWS_AS(SolutionModel(1).segment_index(0.0), Error);
}

TEST_CASE("batched evaluation dispatches to owning segments") {
  SolutionModel m(1);
  for (int k = 0; k < 2; ++k) {
    Segment s;
    s.t_begin = k * 0.5;
    s.t_end = (k + 1) * 0.5;
    s.net = random_net(2, 1, 4, Activation::tanh, std::uint64_t(10 + k));
    m.segments().push_back(s);
  }
  std::vector<SpaceTimePoint> pts{{{0.1, 0}, 0.2}, {{0.3, 0}, 0.7}, {{-0.2, 0}, 0.5}};
  const auto v = m.evaluate(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(v[i] == m.evaluate(pts[i]));
}

TEST_CASE("checkpoints round-trip exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "edras_ckpt_test";
  std::filesystem::remove_all(dir);
  SolutionModel m(2);
  for (int k = 0; k < 3; ++k) {
    Segment s;
    s.t_begin = k * 0.1;
    s.t_end = (k + 1) * 0.1;
    s.seed = 100u + std::uint64_t(k);
    s.net = random_net(3, 2, 5, k == 1 ? Activation::sine : Activation::tanh, std::uint64_t(k));
    m.segments().push_back(s);
  }
  save_model(dir, m);
  CHECK(std::filesystem::exists(dir / "segment_000.json"));
  const SolutionModel back = load_model(dir);
  REQUIRE(back.segments().size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(back.segments()[k].net.parameters() == m.segments()[k].net.parameters());
    CHECK(back.segments()[k].net.spec().activation == m.segments()[k].net.spec().activation);
    CHECK(back.segments()[k].seed == m.segments()[k].seed);
    CHECK(back.segments()[k].t_end == m.segments()[k].t_end);
  }
  CHECK(load_network(dir / "segment_001.json").parameters() == m.segments()[1].net.parameters());
  std::filesystem::remove_all(dir);
}

TEST_CASE("broken checkpoints are reported") {
  const auto dir = std::filesystem::temp_directory_path() / "edras_ckpt_bad";
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_model(dir), Error);
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(load_model(dir), Error);
  {
    std::ofstream(dir / "segment_000.json") << "{ not json";
  }
  CHECK_THROWS_AS(load_model(dir), Error);
  {
    std::ofstream(dir / "segment_000.json") << R"({"format": "something-else"})";
  }
  CHECK_THROWS_AS(load_model(dir), Error);
  std::filesystem::remove_all(dir);
}
