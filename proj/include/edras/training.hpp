#pragma once

#include "edras/fields.hpp"
#include "edras/sampling.hpp"

#include <functional>
#include <iosfwd>
#include <optional>

namespace edras {

struct LossWeights {
  double w_f = 1.0;
  double w_b = 1.0;
  double w_i = 1.0;
  double w_b1 = 1.0;  // periodic value match
  double w_b2 = 1.0;  // periodic derivative match

  void validate() const;
};

/// Mean-squared loss terms. For the periodic regime `L_b = L_b1 + L_b2`.
struct LossTerms {
  double L_f = 0.0;
  double L_b = 0.0;
  double L_b1 = 0.0;
  double L_b2 = 0.0;
  double L_i = 0.0;
};

double total_loss(const LossTerms& terms, const LossWeights& w, BoundaryRegime regime);

/// Everything a single network's loss depends on apart from its parameters.
struct LossContext {
  const PdeSystem* sys = nullptr;
  const Domain* domain = nullptr;
  LossWeights weights;
};

/// Index subsets of the three pools forming one (mini-)batch.
struct BatchView {
  std::span<const std::size_t> interior;
  std::span<const std::size_t> boundary;
  std::span<const std::size_t> initial;
};

/// Loss terms of `net` over the whole training set. Empty pools are an error
/// for every term the regime requires.
LossTerms loss_terms(const Mlp& net, const LossContext& ctx, const TrainingSet& ts);

/// Weighted loss on a batch; `grad` (resized and overwritten) receives its
/// parameter gradient. A null batch view means the full set.
double loss_and_gradient(const Mlp& net, const LossContext& ctx, const TrainingSet& ts,
                         const BatchView* batch, Eigen::VectorXd& grad, LossTerms* terms = nullptr);

/// Per-point |residual| and dissipation density for scoring.
void score_interior(const Mlp& net, const PdeSystem& sys, int spatial_dim, std::span<const SpaceTimePoint> pts,
                    std::vector<double>& residual, std::vector<double>& edrd);
/// Boundary |residual| (dynamic and neumann) and, for the dynamic regime, dissipation density.
void score_boundary(const Mlp& net, const PdeSystem& sys, const Domain& domain, std::span<const BoundaryPoint> pts,
                    std::vector<double>& residual, std::vector<double>& edrd);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  long steps() const { return t_; }

 private:
  AdamOptions opt_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct LbfgsOptions {
  int max_iterations = 50000;
  int history = 50;
  double gradient_tolerance = 1e-9;
  int max_line_search = 30;
};

struct LbfgsResult {
  int iterations = 0;
  int evaluations = 0;
  double loss = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;
};

/// Limited-memory BFGS with a backtracking Armijo line search. `objective`
/// returns the loss and writes the gradient. `on_iteration` (optional)
/// receives the accepted loss after every iteration.
LbfgsResult lbfgs_minimize(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& objective,
                           Eigen::VectorXd& x, const LbfgsOptions& opt,
                           const std::function<void(int, double)>& on_iteration = {});

struct TrainPlan {
  std::vector<double> segment_ends;

  double learning_rate = 1e-3;
  int adam_epochs = 3000;
  std::size_t batch_size = 32;
  int lbfgs_iterations = 50000;
  int lbfgs_history = 50;
  double lbfgs_tolerance = 1e-9;

  Strategy strategy = Strategy::edras_topm;
  int resample_every = 40;
  std::size_t resample_m = 100;
  std::size_t resample_m_boundary = 0;
  std::size_t add_budget = 3000;
  bool budget_per_segment = true;
  double pool_multiplier = 10.0;
  std::size_t max_interior = 100000;

  int cells_t = 10;
  int cells_x = 20;
  int cells_y = 14;
  int cells_theta = 32;
  int d_f0 = 0;  // 0: derived from the interior count and the cell count
  int d_b0 = 0;

  double loss_delta = 1e-7;  // L_0
  int max_outer = 1000;      // N_iter

  std::size_t interior_points = 1000;
  std::size_t boundary_points = 200;
  std::size_t initial_points = 514;
  LossWeights weights;
  MlpSpec network;
  bool warm_start = true;

  void validate() const;
};

/// 1D periodic plan: segments 0.01, 0.2, ..., 1.0 with the published counts and weights.
TrainPlan default_plan_1d();
/// 2D disk plan: [0, 0.01] then steps of 0.2 up to `terminal_time`.
TrainPlan default_plan_2d(double terminal_time = 1.0);

struct LossRecord {
  int epoch = 0;
  LossTerms terms;
  double total = 0.0;
};

/// State handed to observers at every resampling event (after scoring, before selection).
struct ResampleEvent {
  int segment = 0;
  int event = 0;
  int epoch = 0;
  const Mlp* net = nullptr;
  const TrainingSet* set = nullptr;
  const CandidatePool* pool = nullptr;
  const ResampleResult* result = nullptr;
};

struct SegmentReport {
  int index = 0;
  double t_begin = 0.0;
  double t_end = 0.0;
  LossTerms final_terms;
  double final_loss = 0.0;
  int adam_epochs_run = 0;
  int lbfgs_iterations = 0;
  int resample_events = 0;
  std::size_t points_added = 0;
  std::size_t interior_size = 0;
  bool saturated = false;
  bool outer_converged = false;
  double handoff_error = 0.0;  // vs the previous segment at t_begin (0 for the first)
};

struct RunReport {
  std::vector<SegmentReport> segments;
  std::vector<std::vector<LossRecord>> histories;
};

struct RunHooks {
  std::function<void(const ResampleEvent&)> on_resample;
  std::ostream* sampling_log = nullptr;
  std::function<void(int segment, const LossRecord&)> on_epoch;
};

/// Raised when a loss turns non-finite; carries the offending state.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int segment, int epoch, Eigen::VectorXd params,
                   std::vector<SpaceTimePoint> batch)
      : Error(what), segment(segment), epoch(epoch), parameters(std::move(params)), batch(std::move(batch)) {}
  int segment;
  int epoch;
  Eigen::VectorXd parameters;
  std::vector<SpaceTimePoint> batch;
};

/// Initial training set of one segment. For segments after the first the
/// initial targets come from `previous` at t_begin.
TrainingSet initial_training_set(const PdeSystem& sys, const Domain& domain, const TrainPlan& plan, double t_begin,
                                 double t_end, const Mlp* previous, std::uint64_t seed);

/// Trains `seg.net` in place on `ts` (which grows with resampling).
SegmentReport train_segment(int index, Segment& seg, TrainingSet& ts, const PdeSystem& sys, const Domain& domain,
                            const TrainPlan& plan, std::uint64_t master_seed, std::vector<LossRecord>& history,
                            const RunHooks& hooks = {});

SolutionModel run_time_marching(const PdeSystem& sys, const Domain& domain, const TrainPlan& plan,
                                std::uint64_t master_seed, RunReport* report = nullptr, const RunHooks& hooks = {});

void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& history);

}  // namespace edras
