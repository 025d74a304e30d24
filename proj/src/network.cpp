#include "edras/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace edras {

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sine" || name == "sin") return Activation::sine;
  throw Error("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "sine"; }

void MlpSpec::validate() const {
  if (input_dim < 1) throw Error("input_dim must be >= 1");
  if (hidden_layers < 1) throw Error("hidden_layers must be >= 1");
  if (width < 1) throw Error("width must be >= 1");
}

InputScaling InputScaling::identity(int dim) {
  return {Eigen::VectorXd::Constant(dim, -1.0), Eigen::VectorXd::Constant(dim, 1.0)};
}

Mlp::Mlp(MlpSpec spec, InputScaling scaling) : spec_(spec), scaling_(std::move(scaling)) {
  spec_.validate();
  if (scaling_.lower.size() != spec_.input_dim || scaling_.upper.size() != spec_.input_dim)
    throw Error("input scaling dimension mismatch");
  if (((scaling_.upper - scaling_.lower).array() <= 0.0).any())
    throw Error("input scaling requires upper > lower");
  build_layout();
}

void Mlp::build_layout() {
  layers_.clear();
  Eigen::Index off = 0;
  int in = spec_.input_dim;
  for (int l = 0; l <= spec_.hidden_layers; ++l) {
    const int out = l == spec_.hidden_layers ? 1 : spec_.width;
    layers_.push_back({off, off + Eigen::Index(out) * in, out, in});
    off += Eigen::Index(out) * in + out;
    in = out;
  }
  params_ = Eigen::VectorXd::Zero(off);
}

Mlp Mlp::initialize(const MlpSpec& spec, InputScaling scaling, std::uint64_t seed) {
  Mlp net(spec, std::move(scaling));
  Rng rng(seed);
  for (const auto& L : net.layers_) {
    // Glorot uniform; biases start at zero.
    const double limit = std::sqrt(6.0 / double(L.rows + L.cols));
    std::uniform_real_distribution<double> U(-limit, limit);
    for (Eigen::Index i = 0; i < Eigen::Index(L.rows) * L.cols; ++i)
      net.params_[L.weight_offset + i] = U(rng);
  }
  return net;
}

void Mlp::set_parameters(const Eigen::VectorXd& p) {
  if (p.size() != params_.size()) throw Error("parameter vector size mismatch");
  params_ = p;
}

namespace {

struct ActivationDerivs {
  Eigen::ArrayXXd d1, d2, d3;
};

// Returns sigma(z) and fills the first three derivatives.
Eigen::ArrayXXd activate(Activation a, const Eigen::ArrayXXd& z, ActivationDerivs& d, bool third) {
  if (a == Activation::tanh) {
    Eigen::ArrayXXd s = z.tanh();
    d.d1 = 1.0 - s.square();
    d.d2 = -2.0 * s * d.d1;
    if (third) d.d3 = (6.0 * s.square() - 2.0) * d.d1;
    return s;
  }
  Eigen::ArrayXXd s = z.sin();
  d.d1 = z.cos();
  d.d2 = -s;
  if (third) d.d3 = -d.d1;
  return s;
}

struct ActivationRefs {
  const Eigen::ArrayXXd& d1;
  const Eigen::ArrayXXd& d2;
  const Eigen::ArrayXXd& d3;
};

}  // namespace

ChannelOutput Mlp::forward(const Eigen::MatrixXd& inputs, const ChannelRequest& request,
                           ForwardTape* tape) const {
  if (inputs.rows() != spec_.input_dim) throw Error("input dimension mismatch");
  const int B = int(inputs.cols());
  const int K = int(request.tangents.size());
  const int J = int(request.second_order.size());
  const int C = 1 + K + J;
  for (const auto& tg : request.tangents)
    if (tg.rows() != spec_.input_dim || tg.cols() != B) throw Error("tangent shape mismatch");
  for (int k : request.second_order)
    if (k < 0 || k >= K) throw Error("second-order channel refers to missing tangent");

  const Eigen::ArrayXd center = 0.5 * (scaling_.lower + scaling_.upper).array();
  const Eigen::ArrayXd inv_half = 2.0 / (scaling_.upper - scaling_.lower).array();

  Eigen::MatrixXd H(spec_.input_dim, Eigen::Index(B) * C);
  H.leftCols(B) = ((inputs.array().colwise() - center).colwise() * inv_half).matrix();
  for (int k = 0; k < K; ++k)
    H.middleCols(Eigen::Index(B) * (1 + k), B) =
        (request.tangents[k].array().colwise() * inv_half).matrix();
  if (J > 0) H.rightCols(Eigen::Index(B) * J).setZero();

  if (tape) {
    tape->batch = B;
    tape->channels = C;
    tape->second_of = request.second_order;
    tape->layer_inputs.clear();
    tape->pre_activations.clear();
    tape->d1.clear();
    tape->d2.clear();
    tape->d3.clear();
  }

  ActivationDerivs d;
  const bool third = tape && J > 0;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    const auto& L = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> W(params_.data() + L.weight_offset, L.rows, L.cols);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + L.bias_offset, L.rows);
    Eigen::MatrixXd Z(L.rows, H.cols());
    Z.noalias() = W * H;
    Z.leftCols(B).colwise() += b;
    Eigen::MatrixXd out(L.rows, Eigen::Index(B) * C);
    const Eigen::ArrayXXd s = activate(spec_.activation, Z.leftCols(B).array(), d, third);
    out.leftCols(B) = s.matrix();
    for (int k = 0; k < K; ++k) {
      const auto zk = Z.middleCols(Eigen::Index(B) * (1 + k), B).array();
      out.middleCols(Eigen::Index(B) * (1 + k), B) = (d.d1 * zk).matrix();
    }
    for (int j = 0; j < J; ++j) {
      const auto zk = Z.middleCols(Eigen::Index(B) * (1 + request.second_order[j]), B).array();
      const auto zs = Z.middleCols(Eigen::Index(B) * (1 + K + j), B).array();
      out.middleCols(Eigen::Index(B) * (1 + K + j), B) = (d.d2 * zk.square() + d.d1 * zs).matrix();
    }
    if (tape) {
      tape->layer_inputs.push_back(std::move(H));
      tape->pre_activations.push_back(std::move(Z));
      tape->d1.push_back(std::move(d.d1));
      tape->d2.push_back(std::move(d.d2));
      if (third) tape->d3.push_back(std::move(d.d3));
    }
    H = std::move(out);
  }

  const auto& L = layers_.back();
  Eigen::Map<const Eigen::MatrixXd> W(params_.data() + L.weight_offset, L.rows, L.cols);
  Eigen::RowVectorXd y = W * H;
  y.head(B).array() += params_[L.bias_offset];
  if (tape) tape->layer_inputs.push_back(std::move(H));

  ChannelOutput result;
  result.value = y.head(B);
  for (int k = 0; k < K; ++k) result.first.push_back(y.segment(Eigen::Index(B) * (1 + k), B));
  for (int j = 0; j < J; ++j) result.second.push_back(y.segment(Eigen::Index(B) * (1 + K + j), B));
  return result;
}

void Mlp::backward(const ForwardTape& tape, const ChannelOutput& adjoint,
                   Eigen::Ref<Eigen::VectorXd> grad) const {
  if (grad.size() != params_.size()) throw Error("gradient size mismatch");
  if (tape.layer_inputs.size() != layers_.size()) throw Error("tape does not match network");
  const Eigen::Index B = tape.batch;
  const int C = tape.channels;
  const int J = int(tape.second_of.size());
  const int K = C - 1 - J;
  if (adjoint.value.size() != B || int(adjoint.first.size()) != K ||
      int(adjoint.second.size()) != J)
    throw Error("adjoint does not match tape channels");

  Eigen::RowVectorXd g(B * C);
  g.head(B) = adjoint.value;
  for (int k = 0; k < K; ++k) g.segment(B * (1 + k), B) = adjoint.first[k];
  for (int j = 0; j < J; ++j) g.segment(B * (1 + K + j), B) = adjoint.second[j];

  const auto& Lout = layers_.back();
  {
    const Eigen::MatrixXd& H = tape.layer_inputs.back();
    Eigen::Map<Eigen::MatrixXd> gW(grad.data() + Lout.weight_offset, Lout.rows, Lout.cols);
    gW.noalias() += g * H.transpose();
    grad[Lout.bias_offset] += g.head(B).sum();
  }
  Eigen::Map<const Eigen::MatrixXd> Wout(params_.data() + Lout.weight_offset, Lout.rows, Lout.cols);
  Eigen::MatrixXd G = Wout.transpose() * g;
  Eigen::MatrixXd Gz;

  if (J > 0 && tape.d3.size() != tape.d1.size()) throw Error("tape lacks third activation derivatives");
  for (int l = int(layers_.size()) - 2; l >= 0; --l) {
    const auto& L = layers_[l];
    const Eigen::MatrixXd& Z = tape.pre_activations[l];
    const ActivationRefs d{tape.d1[l], tape.d2[l], J > 0 ? tape.d3[l] : tape.d2[l]};

    Gz.resize(L.rows, B * C);
    Eigen::ArrayXXd gv = G.leftCols(B).array() * d.d1;
    for (int k = 0; k < K; ++k) {
      const auto zk = Z.middleCols(B * (1 + k), B).array();
      const auto gk = G.middleCols(B * (1 + k), B).array();
      gv += gk * d.d2 * zk;
      Gz.middleCols(B * (1 + k), B) = (gk * d.d1).matrix();
    }
    for (int j = 0; j < J; ++j) {
      const int k = tape.second_of[j];
      const auto zk = Z.middleCols(B * (1 + k), B).array();
      const auto zs = Z.middleCols(B * (1 + K + j), B).array();
      const auto gs = G.middleCols(B * (1 + K + j), B).array();
      gv += gs * (d.d3 * zk.square() + d.d2 * zs);
      Gz.middleCols(B * (1 + k), B).array() += 2.0 * gs * d.d2 * zk;
      Gz.middleCols(B * (1 + K + j), B) = (gs * d.d1).matrix();
    }
    Gz.leftCols(B) = gv.matrix();

    const Eigen::MatrixXd& H = tape.layer_inputs[l];
    Eigen::Map<Eigen::MatrixXd> gW(grad.data() + L.weight_offset, L.rows, L.cols);
    gW.noalias() += Gz * H.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + L.bias_offset, L.rows) += Gz.leftCols(B).rowwise().sum();
    if (l > 0) {
      Eigen::Map<const Eigen::MatrixXd> W(params_.data() + L.weight_offset, L.rows, L.cols);
      G.noalias() = W.transpose() * Gz;
    }
  }
}

Eigen::RowVectorXd Mlp::values(const Eigen::MatrixXd& inputs) const {
  return forward(inputs, ChannelRequest{}).value;
}

double Mlp::value(std::span<const double> input) const {
  Eigen::MatrixXd x(spec_.input_dim, 1);
  if (Eigen::Index(input.size()) != spec_.input_dim) throw Error("input dimension mismatch");
  for (int i = 0; i < spec_.input_dim; ++i) x(i, 0) = input[i];
  return values(x)[0];
}

double SolutionModel::terminal_time() const {
  if (segments_.empty()) throw Error("model has no segments");
  return segments_.back().t_end;
}

std::size_t SolutionModel::segment_index(double t) const {
  if (segments_.empty()) throw Error("model has no segments");
  if (!std::isfinite(t) || t < segments_.front().t_begin || t > segments_.back().t_end)
    throw Error("time out of range");
  for (std::size_t i = 0; i < segments_.size(); ++i)
    if (t <= segments_[i].t_end) return i;
  return segments_.size() - 1;
}

Eigen::VectorXd network_input(int spatial_dim, const Eigen::Vector2d& x, double t) {
  Eigen::VectorXd in(spatial_dim + 1);
  for (int i = 0; i < spatial_dim; ++i) in[i] = x[i];
  in[spatial_dim] = t;
  return in;
}

double SolutionModel::evaluate(const SpaceTimePoint& p) const {
  const Mlp& net = network_at(p.t);
  const Eigen::VectorXd in = network_input(spatial_dim_, p.x, p.t);
  return net.value(std::span<const double>(in.data(), std::size_t(in.size())));
}

std::vector<double> SolutionModel::evaluate(std::span<const SpaceTimePoint> pts) const {
  std::vector<double> out(pts.size());
  std::vector<std::vector<std::size_t>> owned(segments_.size());
  for (std::size_t i = 0; i < pts.size(); ++i) owned[segment_index(pts[i].t)].push_back(i);
  for (std::size_t s = 0; s < owned.size(); ++s) {
    if (owned[s].empty()) continue;
    Eigen::MatrixXd X(spatial_dim_ + 1, Eigen::Index(owned[s].size()));
    for (std::size_t c = 0; c < owned[s].size(); ++c)
      X.col(Eigen::Index(c)) = network_input(spatial_dim_, pts[owned[s][c]].x, pts[owned[s][c]].t);
    const Eigen::RowVectorXd v = segments_[s].net.values(X);
    for (std::size_t c = 0; c < owned[s].size(); ++c) out[owned[s][c]] = v[Eigen::Index(c)];
  }
  return out;
}

namespace {

using nlohmann::json;

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

json network_json(const Mlp& net) {
  return json{{"input_dim", net.spec().input_dim},
              {"hidden_layers", net.spec().hidden_layers},
              {"width", net.spec().width},
              {"activation", to_string(net.spec().activation)},
              {"input_lower", vec_json(net.scaling().lower)},
              {"input_upper", vec_json(net.scaling().upper)},
              {"parameter_count", net.parameter_count()},
              {"parameters", vec_json(net.parameters())}};
}

Mlp network_from_json(const json& j) {
  MlpSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden_layers = j.at("hidden_layers").get<int>();
  spec.width = j.at("width").get<int>();
  spec.activation = parse_activation(j.at("activation").get<std::string>());
  Mlp net(spec, {json_vec(j.at("input_lower")), json_vec(j.at("input_upper"))});
  const Eigen::VectorXd p = json_vec(j.at("parameters"));
  if (j.at("parameter_count").get<Eigen::Index>() != p.size())
    throw Error("checkpoint parameter_count does not match parameters");
  net.set_parameters(p);
  return net;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

constexpr const char* kFormat = "edras-mlp-checkpoint";

}  // namespace

void save_segment(const std::filesystem::path& path, const Segment& seg, int index) {
  json j{{"format", kFormat},
         {"version", 1},
         {"segment", {{"index", index}, {"t_begin", seg.t_begin}, {"t_end", seg.t_end}}},
         {"seed", seg.seed},
         {"network", network_json(seg.net)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
}

Segment load_segment(const std::filesystem::path& path) {
  const json j = read_json(path);
  if (j.value("format", "") != kFormat) throw Error("not a network checkpoint: " + path.string());
  try {
    Segment s;
    s.t_begin = j.at("segment").at("t_begin").get<double>();
    s.t_end = j.at("segment").at("t_end").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.net = network_from_json(j.at("network"));
    return s;
  } catch (const json::exception& e) {
    throw Error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

Mlp load_network(const std::filesystem::path& path) { return load_segment(path).net; }

void save_model(const std::filesystem::path& dir, const SolutionModel& model) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < model.segments().size(); ++i) {
    std::ostringstream name;
    name << "segment_" << std::setw(3) << std::setfill('0') << i << ".json";
    save_segment(dir / name.str(), model.segments()[i], int(i));
  }
}

SolutionModel load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("checkpoint directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().filename().string().rfind("segment_", 0) == 0)
      files.push_back(e.path());
  if (files.empty()) throw Error("no segment checkpoints in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<Segment> segs;
  for (const auto& f : files) segs.push_back(load_segment(f));
  const int dim = segs.front().net.spec().input_dim - 1;
  SolutionModel model(dim);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (segs[i].net.spec().input_dim != dim + 1) throw Error("segments disagree on input dimension");
    if (i > 0 && segs[i].t_begin != segs[i - 1].t_end) throw Error("segment intervals do not chain");
    model.segments().push_back(std::move(segs[i]));
  }
  return model;
}

}  // namespace edras
