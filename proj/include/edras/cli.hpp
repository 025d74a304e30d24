#pragma once

#include "edras/diagnostics.hpp"
#include "edras/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>

namespace edras {

/// Invalid configuration; `line` is 1-based (0 when unknown).
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line) : Error(what), line(line) {}
  int line;
};

struct OracleConfig {
  double dt = 1e-5;
  double stabilization = 2.0;
  int nx = 512;
  int nr = 64;
  int ntheta = 128;
  std::vector<double> store_times;  // empty: default_store_times of the plan segments
  double store_every = 0.0;         // > 0: adds slices at multiples of this spacing
};

struct GroupAuditConfig {
  std::filesystem::path oracle;
  GroupAudit audit;
};

struct CompareConfig {
  std::filesystem::path checkpoints;  // empty: <output_dir>/checkpoints
  std::filesystem::path oracle;
  std::string label = "model";
  std::vector<double> energy_times;  // empty: oracle times within the model range
  QuadratureSpec quadrature;
  bool local_std = false;
  int half_x = 2;
  int half_t = 2;
  double std_threshold = 1e-2;
  std::optional<GroupAudit> groups;
  std::size_t group_pool = 10000;
};

struct RunConfig {
  std::string source;  // path or label used in messages
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::string preset;
  PdeSystem system;
  std::optional<Domain> domain;
  TrainPlan plan;
  bool has_plan = false;
  OracleConfig oracle;
  bool has_oracle = false;
  CompareConfig compare;
  bool has_compare = false;
  std::optional<GroupAuditConfig> train_groups;
};

/// Parses a JSON config (comments allowed). Unknown keys, wrong types and
/// missing required fields raise ConfigError with the offending line.
RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Stored times of an oracle run: explicit list or defaults, plus the spacing grid.
std::vector<double> oracle_store_times(const RunConfig& cfg);

/// Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 diverged training.
int cmd_train(const RunConfig& cfg, std::ostream& err);
int cmd_oracle(const RunConfig& cfg, std::ostream& err);
int cmd_compare(const RunConfig& cfg, std::ostream& err);

int run_cli(int argc, char** argv);

}  // namespace edras
