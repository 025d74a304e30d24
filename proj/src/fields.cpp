#include "edras/fields.hpp"

namespace edras {

namespace {

Eigen::MatrixXd unit_tangent(int input_dim, int axis, Eigen::Index batch) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(input_dim, batch);
  m.row(axis).setOnes();
  return m;
}

}  // namespace

InteriorBatch make_interior_batch(int spatial_dim, std::span<const SpaceTimePoint> pts) {
  const Eigen::Index B = Eigen::Index(pts.size());
  const int in = spatial_dim + 1;
  InteriorBatch b;
  b.inputs.resize(in, B);
  for (Eigen::Index i = 0; i < B; ++i) b.inputs.col(i) = network_input(spatial_dim, pts[i].x, pts[i].t);
  b.request.tangents.push_back(unit_tangent(in, spatial_dim, B));
  for (int d = 0; d < spatial_dim; ++d) {
    b.request.tangents.push_back(unit_tangent(in, d, B));
    b.request.second_order.push_back(1 + d);
  }
  return b;
}

BoundaryBatch make_boundary_batch(const Domain& domain, std::span<const BoundaryPoint> pts,
                                  bool surface_laplacian) {
  const int dim = domain.spatial_dim();
  const Eigen::Index B = Eigen::Index(pts.size());
  const int in = dim + 1;
  BoundaryBatch b;
  b.inputs.resize(in, B);
  for (Eigen::Index i = 0; i < B; ++i) b.inputs.col(i) = network_input(dim, pts[i].position, pts[i].t);
  b.request.tangents.push_back(unit_tangent(in, dim, B));
  for (int d = 0; d < dim; ++d) b.request.tangents.push_back(unit_tangent(in, d, B));
  if (surface_laplacian) {
    if (dim != 2 || !domain.has_parameterization()) throw Error("no closed-form parameterization");
    Eigen::MatrixXd tg = Eigen::MatrixXd::Zero(in, B);
    b.metrics.reserve(pts.size());
    for (Eigen::Index i = 0; i < B; ++i) {
      if (!pts[i].has_parameter) throw Error("boundary point lacks a curve parameter");
      b.metrics.push_back(domain.curvature_and_metric(pts[i].parameter));
      tg.block(0, i, 2, 1) = b.metrics.back().first;
    }
    b.request.tangents.push_back(std::move(tg));
    b.request.second_order.push_back(1 + dim);
    b.surface_laplacian = true;
  }
  return b;
}

std::vector<FieldSample> interior_samples(int spatial_dim, const ChannelOutput& out) {
  std::vector<FieldSample> s(std::size_t(out.value.size()));
  for (Eigen::Index i = 0; i < out.value.size(); ++i) {
    auto& f = s[std::size_t(i)];
    f.value = out.value[i];
    f.dt = out.first[0][i];
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    double lap = 0.0;
    for (int d = 0; d < spatial_dim; ++d) {
      g[d] = out.first[1 + d][i];
      lap += out.second[d][i];
    }
    f.grad = g;
    f.laplacian = lap;
  }
  return s;
}

std::vector<FieldSample> boundary_samples(const Domain& domain, std::span<const BoundaryPoint> pts,
                                          const BoundaryBatch& batch, const ChannelOutput& out) {
  const int dim = domain.spatial_dim();
  std::vector<FieldSample> s(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Index c = Eigen::Index(i);
    auto& f = s[i];
    f.value = out.value[c];
    f.dt = out.first[0][c];
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    for (int d = 0; d < dim; ++d) g[d] = out.first[1 + d][c];
    f.grad = g;
    f.normal = pts[i].normal;
    f.normal_deriv = pts[i].normal.dot(g);
    if (batch.surface_laplacian) {
      const CurveMetric& m = batch.metrics[i];
      const double d1 = out.first[1 + dim][c];
      const double d2 = out.second[0][c] + g.dot(m.second);
      f.surf_laplacian = surface_laplacian_parametric(d1, d2, m.first, m.second);
    }
  }
  return s;
}

std::vector<FieldSample> evaluate_interior(const Mlp& net, int spatial_dim, std::span<const SpaceTimePoint> pts) {
  if (pts.empty()) return {};
  const InteriorBatch b = make_interior_batch(spatial_dim, pts);
  return interior_samples(spatial_dim, net.forward(b.inputs, b.request));
}

std::vector<FieldSample> evaluate_boundary(const Mlp& net, const Domain& domain,
                                           std::span<const BoundaryPoint> pts, bool surface_laplacian) {
  if (pts.empty()) return {};
  const BoundaryBatch b = make_boundary_batch(domain, pts, surface_laplacian);
  return boundary_samples(domain, pts, b, net.forward(b.inputs, b.request));
}

FieldSample evaluate_with_derivatives(const SolutionModel& model, const SpaceTimePoint& p) {
  return evaluate_interior(model.network_at(p.t), model.spatial_dim(), std::span(&p, 1)).front();
}

FieldSample evaluate_with_derivatives(const SolutionModel& model, const BoundaryPoint& p, const Domain& domain) {
  if (domain.kind() == Domain::Kind::disk || domain.kind() == Domain::Kind::ellipse) {
    const double level = (p.position - domain.center()).cwiseQuotient(domain.extents()).squaredNorm() - 1.0;
    if (std::abs(level) > 1e-9) throw Error("boundary fields requested off the boundary");
  }
  const bool lap = domain.spatial_dim() == 2 && domain.has_parameterization() && p.has_parameter;
  return evaluate_boundary(model.network_at(p.t), domain, std::span(&p, 1), lap).front();
}

GradientField gradient_field(const SolutionModel& model) {
  return [&model](std::span<const Eigen::Vector2d> xs, double t, std::vector<double>& values,
                  std::vector<Eigen::Vector2d>& grads) {
    std::vector<SpaceTimePoint> pts(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) pts[i] = {xs[i], t, PointTag::interior};
    const Mlp& net = model.network_at(t);
    const int dim = model.spatial_dim();
    values.resize(xs.size());
    grads.resize(xs.size());
    // Only first-order spatial channels are needed.
    constexpr std::size_t chunk = 4096;
    for (std::size_t s = 0; s < pts.size(); s += chunk) {
      const std::size_t n = std::min(chunk, pts.size() - s);
      Eigen::MatrixXd X(dim + 1, Eigen::Index(n));
      for (std::size_t i = 0; i < n; ++i) X.col(Eigen::Index(i)) = network_input(dim, pts[s + i].x, t);
      ChannelRequest req;
      for (int d = 0; d < dim; ++d) {
        Eigen::MatrixXd tg = Eigen::MatrixXd::Zero(dim + 1, Eigen::Index(n));
        tg.row(d).setOnes();
        req.tangents.push_back(std::move(tg));
      }
      const ChannelOutput o = net.forward(X, req);
      for (std::size_t i = 0; i < n; ++i) {
        values[s + i] = o.value[Eigen::Index(i)];
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        for (int d = 0; d < dim; ++d) g[d] = o.first[d][Eigen::Index(i)];
        grads[s + i] = g;
      }
    }
  };
}

}  // namespace edras
