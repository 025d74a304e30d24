#pragma once

#include "edras/common.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace edras {

enum class Activation { tanh, sine };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

struct MlpSpec {
  int input_dim = 2;
  int hidden_layers = 3;
  int width = 128;
  Activation activation = Activation::tanh;

  void validate() const;
};

/// Affine map of raw inputs onto [-1, 1] per coordinate.
struct InputScaling {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static InputScaling identity(int dim);
};

/// Input-derivative channels requested from a batched forward pass.
///
/// Each tangent is an (input_dim x batch) matrix of directions in raw input
/// coordinates, so directions may vary per point. A second-order channel `k`
/// yields v^T H v along tangents[k].
struct ChannelRequest {
  std::vector<Eigen::MatrixXd> tangents;
  std::vector<int> second_order;
};

struct ChannelOutput {
  Eigen::RowVectorXd value;
  std::vector<Eigen::RowVectorXd> first;
  std::vector<Eigen::RowVectorXd> second;
};

/// Activations saved by a forward pass for the reverse sweep.
struct ForwardTape {
  int batch = 0;
  int channels = 0;
  std::vector<int> second_of;
  std::vector<Eigen::MatrixXd> layer_inputs;  // stacked [value | first... | second...]
  std::vector<Eigen::MatrixXd> pre_activations;
  std::vector<Eigen::ArrayXXd> d1, d2, d3;  // activation derivatives at the value channel
};

/// Fully connected network with smooth hidden activations and a linear output.
///
/// Parameters live in one flat vector laid out layer by layer as
/// (W column-major, then b). Forward passes propagate exact directional first
/// and second input derivatives; `backward` differentiates any linear
/// functional of those channels with respect to the parameters.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, InputScaling scaling);

  static Mlp initialize(const MlpSpec& spec, InputScaling scaling, std::uint64_t seed);

  const MlpSpec& spec() const { return spec_; }
  const InputScaling& scaling() const { return scaling_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  void set_parameters(const Eigen::VectorXd& p);

  /// `inputs` is (input_dim x batch) in raw coordinates.
  ChannelOutput forward(const Eigen::MatrixXd& inputs, const ChannelRequest& request,
                        ForwardTape* tape = nullptr) const;

  /// Accumulates d(sum_c <adjoint_c, channel_c>)/d(params) into `grad`.
  void backward(const ForwardTape& tape, const ChannelOutput& adjoint,
                Eigen::Ref<Eigen::VectorXd> grad) const;

  Eigen::RowVectorXd values(const Eigen::MatrixXd& inputs) const;
  double value(std::span<const double> input) const;

 private:
  struct LayerView {
    Eigen::Index weight_offset;
    Eigen::Index bias_offset;
    int rows;
    int cols;
  };

  MlpSpec spec_;
  InputScaling scaling_;
  Eigen::VectorXd params_;
  std::vector<LayerView> layers_;

  void build_layout();
};

/// Segment-wise composite network; segment i owns times (T_{i-1}, T_i] and
/// segment 0 additionally owns t = 0 (and [0, T_1] entirely).
struct Segment {
  double t_begin = 0.0;
  double t_end = 1.0;
  Mlp net;
  std::uint64_t seed = 0;
};

class SolutionModel {
 public:
  SolutionModel() = default;
  explicit SolutionModel(int spatial_dim) : spatial_dim_(spatial_dim) {}

  int spatial_dim() const { return spatial_dim_; }
  std::vector<Segment>& segments() { return segments_; }
  const std::vector<Segment>& segments() const { return segments_; }
  double terminal_time() const;

  std::size_t segment_index(double t) const;
  const Mlp& network_at(double t) const { return segments_[segment_index(t)].net; }

  double evaluate(const SpaceTimePoint& p) const;
  /// Values for many points, each dispatched to its owning segment.
  std::vector<double> evaluate(std::span<const SpaceTimePoint> pts) const;

 private:
  int spatial_dim_ = 1;
  std::vector<Segment> segments_;
};

/// Builds the network input column (x[, y], t) for a point.
Eigen::VectorXd network_input(int spatial_dim, const Eigen::Vector2d& x, double t);

// Checkpoints: one JSON document per segment (layout in docs/checkpoint.md).
void save_segment(const std::filesystem::path& path, const Segment& seg, int index);
Segment load_segment(const std::filesystem::path& path);
void save_model(const std::filesystem::path& dir, const SolutionModel& model);
SolutionModel load_model(const std::filesystem::path& dir);
/// Loads a single network regardless of its input dimension (used for
/// characteristic-function fields).
Mlp load_network(const std::filesystem::path& path);

}  // namespace edras
