// kflsim: knowledge-aided federated learning simulator over an
// energy-limited wireless cell.
//
//   kflsim run      --config cfg.ini [--seed N] [--out metrics.csv]
//   kflsim allocate --config cfg.ini [--round N] [--devices 0,1,2] [--queues ...]
//   kflsim verify   [--quick] [--seed N]
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 infeasible allocation / failed verification.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "kfl/allocation.hpp"
#include "kfl/harness.hpp"
#include "kfl/scheduler.hpp"
#include "kfl/verify.hpp"

namespace {

std::vector<int> parse_id_list(const std::string& csv) {
  std::vector<int> out;
  std::string item;
  std::stringstream ss(csv);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

int cmd_run(const std::string& config_path, long seed_override,
            const std::string& out_override) {
  kfl::ExperimentConfig cfg = kfl::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  if (!out_override.empty()) cfg.output_path = out_override;

  kfl::ExperimentResult result = kfl::run_experiment(cfg);
  kfl::emit_metrics(result.records, cfg.output_path);

  const kfl::MetricsRecord& last = result.records.back();
  std::printf("rounds=%d scheduler=%s final_accuracy=%.4f max_queue=%.4g\n",
              cfg.horizon, cfg.scheduler_kind.c_str(), last.test_accuracy,
              last.max_queue);
  std::printf("metrics written to %s\n", cfg.output_path.c_str());
  return 0;
}

int cmd_allocate(const std::string& config_path, long seed_override, int round,
                 const std::string& devices_csv, const std::string& queues_csv) {
  kfl::ExperimentConfig cfg = kfl::load_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);

  // Build the instance exactly as the experiment loop would see it.
  kfl::DatasetShard train =
      cfg.dataset == "synthetic"
          ? kfl::gen_synthetic(cfg.classes, cfg.input_dim, cfg.per_class,
                               cfg.cluster_spread, cfg.seed)
          : kfl::load_mnist_idx(cfg.mnist_dir + "/train-images-idx3-ubyte",
                                cfg.mnist_dir + "/train-labels-idx1-ubyte",
                                cfg.classes);
  auto shards = kfl::partition_non_iid(train, cfg.devices,
                                       cfg.classes_per_device, cfg.seed);
  auto profiles = kfl::build_profiles(cfg, shards);
  kfl::ChannelModel channel = kfl::build_channel(cfg);
  kfl::PayloadSpec payload = kfl::build_payload(cfg);
  kfl::SchedulerConfig sc = kfl::build_scheduler_config(cfg);
  kfl::ChannelDraw draw =
      kfl::draw_channel(channel, profiles, round, cfg.seed);

  std::vector<int> scheduled =
      devices_csv.empty()
          ? kfl::feasible_devices(profiles, draw, sc, payload, channel)
          : parse_id_list(devices_csv);

  Eigen::VectorXd queues = Eigen::VectorXd::Ones(cfg.devices);
  if (!queues_csv.empty()) {
    std::vector<int> dummy;
    std::stringstream ss(queues_csv);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',') && i < cfg.devices) {
      queues[i++] = std::stod(item);
    }
  }

  kfl::AllocationResult alloc = kfl::allocate_bandwidth(
      scheduled, queues, draw.gains, profiles, cfg.deadline_s,
      cfg.hp.local_iters, payload, channel);

  if (!alloc.feasible) {
    std::printf("infeasible: scheduled set cannot meet the %.3g s deadline\n",
                cfg.deadline_s);
    return 3;
  }
  std::printf("round %d, mu = %.6e, objective sum(qE) = %.6e J\n", round,
              alloc.multiplier, alloc.weighted_energy);
  std::printf("%8s %12s %14s %14s %12s\n", "device", "theta", "power[W]",
              "energy[J]", "gain");
  for (size_t i = 0; i < alloc.devices.size(); ++i) {
    int k = alloc.devices[i];
    std::printf("%8d %12.6f %14.6e %14.6e %12.4e\n", k,
                alloc.shares[static_cast<Eigen::Index>(i)],
                alloc.powers[static_cast<Eigen::Index>(i)],
                alloc.energies[static_cast<Eigen::Index>(i)], draw.gains[k]);
  }
  std::printf("sum(theta) = %.9f\n", alloc.shares.sum());
  return 0;
}

int cmd_verify(bool quick, long seed_override) {
  kfl::VerifyOptions opt;
  opt.quick = quick;
  if (seed_override >= 0) opt.seed = static_cast<uint64_t>(seed_override);
  std::vector<kfl::CheckResult> results = kfl::run_verification(opt);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-aided federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_override, devices_csv, queues_csv;
  long seed_override = -1;
  int round = 0;
  bool quick = false;

  CLI::App* run = app.add_subcommand("run", "run a full experiment");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--seed", seed_override, "override config seed");
  run->add_option("--out", out_override, "override metrics output path");

  CLI::App* alloc = app.add_subcommand(
      "allocate", "one-shot bandwidth/power allocation for a described round");
  alloc->add_option("--config", config_path, "config file")->required();
  alloc->add_option("--seed", seed_override, "override config seed");
  alloc->add_option("--round", round, "round index for the channel draw");
  alloc->add_option("--devices", devices_csv,
                    "comma-separated scheduled device ids (default: all "
                    "feasible)");
  alloc->add_option("--queues", queues_csv,
                    "comma-separated queue weights (default: all 1)");

  CLI::App* verify = app.add_subcommand("verify", "run the oracle suites");
  verify->add_flag("--quick", quick, "skip the minute-scale learning checks");
  verify->add_option("--seed", seed_override, "override verification seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed_override, out_override);
    if (alloc->parsed()) {
      return cmd_allocate(config_path, seed_override, round, devices_csv,
                          queues_csv);
    }
    return cmd_verify(quick, seed_override);
  } catch (const kfl::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
