#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "kfl/kfl_core.hpp"
#include "kfl/rng.hpp"
#include "kfl/scheduler.hpp"
#include "kfl/system_model.hpp"

namespace kfl {

/// Configuration or validation failure; `field` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error("config: " + field + ": " + message),
        field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Everything a run needs, in config-file units (dB values are converted to
/// linear SI only when the runtime structures are built).
struct ExperimentConfig {
  // [experiment]
  uint64_t seed = 42;
  int horizon = 50;
  std::string scheduler_kind = "proposed";  // proposed|round_robin|myopic|pattern
  std::string pattern = "uniform";          // uniform|ascend|descend
  double tradeoff_v = 0.01;
  double deadline_s = 1.0;
  int eval_interval = 1;
  std::string output_path = "metrics.csv";

  // [channel]
  double bandwidth_hz = 5e6;
  double path_loss_const_db = -30.0;
  double ref_distance_m = 1.0;
  double path_loss_exp = 2.0;
  double noise_psd_dbm_hz = -174.0;

  // [devices]
  int devices = 0;  // required
  std::vector<double> cpu_freq_ghz = {0.85, 1.12, 1.2, 1.3};
  double flops_per_cycle = 1.0;
  double power_coeff = 1e-28;
  double max_power_dbm = 30.0;
  double energy_budget_j = 0.0;  // 0 = derive from the per-round figure
  double energy_budget_per_round_j = 0.1;
  double cell_radius_m = 500.0;
  double min_distance_m = 1.0;
  double flops_per_sample = 553406.0;

  // [payload]
  int bits_per_param = 32;
  long model_params = 553406;

  // [dataset]
  std::string dataset = "synthetic";  // synthetic|mnist
  int classes = 10;
  int input_dim = 20;
  int per_class = 100;
  int test_per_class = 100;
  double cluster_spread = 0.1;
  int classes_per_device = 2;
  std::string mnist_dir;

  // [model]
  int feature_dim = 8;
  std::vector<int> hidden_dims = {32};
  std::vector<int> hidden_choices;  // nonempty: last hidden width per device

  // [hyper]
  HyperParams hp;

  // [scheduler]
  int round_robin_window = 5;
  int pattern_min = 1;
  int pattern_max = 20;
  int pattern_uniform = 10;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);
void validate_config(const ExperimentConfig& cfg);

/// dBm/Hz -> W/Hz and dB/dBm -> linear helpers used at load time.
double db_to_linear(double db);
double dbm_to_watt(double dbm);

ChannelModel build_channel(const ExperimentConfig& cfg);
PayloadSpec build_payload(const ExperimentConfig& cfg);
SchedulerConfig build_scheduler_config(const ExperimentConfig& cfg);

/// Device profiles with seeded per-device cpu frequency and cell placement;
/// data-dependent fields are filled from the shards.
std::vector<DeviceProfile> build_profiles(
    const ExperimentConfig& cfg, const std::vector<DatasetShard>& shards);

/// Gaussian class clusters around fixed random unit-norm means, grouped by
/// class in column order.
DatasetShard gen_synthetic(int classes, int dim, int per_class, double spread,
                           uint64_t seed, RngTag data_tag = RngTag::kSyntheticData);

/// Per-device test shards sliced from a shared test pool, proportional to
/// each device's training class counts (devices sharing a class split its
/// pool disjointly).
std::vector<DatasetShard> build_test_shards(
    const DatasetShard& test_pool, const std::vector<DatasetShard>& shards);

struct MetricsRecord {
  int round = 0;
  double test_accuracy = 0.0;
  int scheduled_count = 0;
  long scheduled_data_volume = 0;
  Eigen::VectorXd per_device_cumulative_energy;
  double max_queue = 0.0;
  double dpp_objective = 0.0;
  long bytes_uploaded = 0;
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  FederationState state;
  std::vector<DeviceProfile> profiles;
  std::vector<Eigen::VectorXd> energy_trace;  // realized alpha*E per round
  std::vector<Eigen::VectorXd> queue_trace;   // q at round start, plus final
  SchedulerConfig scheduler_config;
  PayloadSpec payload;
};

/// The full T-round loop: draw channel, schedule, allocate, train the
/// scheduled devices, aggregate knowledge, update queues, evaluate.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// CSV emission: header
/// round,test_accuracy,scheduled_count,scheduled_data_volume,cum_energy_max,
/// cum_energy_mean,max_queue,dpp_objective,bytes_uploaded
/// with floats at 9 significant digits.
void emit_metrics(const std::vector<MetricsRecord>& records,
                  const std::string& path);
std::string format_metrics(const std::vector<MetricsRecord>& records);

}  // namespace kfl
