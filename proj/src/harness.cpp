#include "kfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "kfl/rng.hpp"

namespace kfl {

ChannelModel build_channel(const ExperimentConfig& cfg) {
  ChannelModel ch;
  ch.path_loss_const = db_to_linear(cfg.path_loss_const_db);
  ch.ref_distance = cfg.ref_distance_m;
  ch.path_loss_exp = cfg.path_loss_exp;
  ch.noise_psd = dbm_to_watt(cfg.noise_psd_dbm_hz);
  ch.bandwidth_total = cfg.bandwidth_hz;
  return ch;
}

PayloadSpec build_payload(const ExperimentConfig& cfg) {
  PayloadSpec p;
  p.knowledge_params = static_cast<long>(cfg.classes) * cfg.feature_dim;
  p.bits_per_param = cfg.bits_per_param;
  p.model_params = cfg.model_params;
  return p;
}

SchedulerConfig build_scheduler_config(const ExperimentConfig& cfg) {
  SchedulerConfig sc;
  sc.tradeoff_v = cfg.tradeoff_v;
  sc.horizon = cfg.horizon;
  sc.deadline = cfg.deadline_s;
  sc.local_iters = cfg.hp.local_iters;
  sc.round_robin_window = cfg.round_robin_window;
  sc.pattern_min = cfg.pattern_min;
  sc.pattern_max = cfg.pattern_max;
  sc.pattern_uniform = cfg.pattern_uniform;
  sc.round_weights.resize(cfg.horizon);
  for (int t = 0; t < cfg.horizon; ++t) {
    sc.round_weights[t] = 1.0 / (t + 1.0);  // gamma_t, finite at t = 0
  }
  return sc;
}

std::vector<DeviceProfile> build_profiles(
    const ExperimentConfig& cfg, const std::vector<DatasetShard>& shards) {
  std::vector<DeviceProfile> profiles(cfg.devices);
  double budget = cfg.energy_budget_j > 0.0
                      ? cfg.energy_budget_j
                      : cfg.energy_budget_per_round_j * cfg.horizon;
  for (int k = 0; k < cfg.devices; ++k) {
    DeviceProfile& dev = profiles[k];
    dev.id = k;
    dev.samples_per_class = shards[k].per_class_counts;
    dev.total_samples = shards[k].size();
    RngStream freq(cfg.seed, RngTag::kCpuFreq, static_cast<uint64_t>(k));
    dev.cpu_freq =
        cfg.cpu_freq_ghz[freq.below(cfg.cpu_freq_ghz.size())] * 1e9;
    dev.flops_per_cycle = cfg.flops_per_cycle;
    dev.flops_per_sample = cfg.flops_per_sample;
    dev.power_coeff = cfg.power_coeff;
    dev.max_power = dbm_to_watt(cfg.max_power_dbm);
    dev.energy_budget = budget;
    RngStream dist(cfg.seed, RngTag::kDistance, static_cast<uint64_t>(k));
    // Uniform placement over the cell disk.
    dev.distance = std::max(cfg.min_distance_m,
                            cfg.cell_radius_m * std::sqrt(dist.uniform01()));
  }
  return profiles;
}

DatasetShard gen_synthetic(int classes, int dim, int per_class, double spread,
                           uint64_t seed, RngTag data_tag) {
  // Class means are shared between train and test pools: same seed and tag.
  Eigen::MatrixXd means(dim, classes);
  for (int c = 0; c < classes; ++c) {
    RngStream m(seed, RngTag::kSyntheticMeans, static_cast<uint64_t>(c));
    for (int i = 0; i < dim; ++i) means(i, c) = m.gaussian();
    means.col(c).normalize();
  }

  DatasetShard out;
  out.features.resize(dim, static_cast<long>(classes) * per_class);
  out.labels.resize(static_cast<long>(classes) * per_class);
  out.per_class_counts = Eigen::VectorXi::Constant(classes, per_class);
  long n = 0;
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++n) {
      RngStream g(seed, data_tag, static_cast<uint64_t>(c),
                  static_cast<uint64_t>(s));
      for (int i = 0; i < dim; ++i) {
        out.features(i, n) = means(i, c) + spread * g.gaussian();
      }
      out.labels[n] = c;
    }
  }
  return out;
}

std::vector<DatasetShard> build_test_shards(
    const DatasetShard& test_pool, const std::vector<DatasetShard>& shards) {
  int classes = test_pool.classes();
  int devices = static_cast<int>(shards.size());

  std::vector<std::vector<long>> pool_by_class(classes);
  for (long n = 0; n < test_pool.size(); ++n) {
    pool_by_class[test_pool.labels[n]].push_back(n);
  }

  // Largest-remainder split of each class pool across the devices holding
  // the class, proportional to their training counts.
  std::vector<std::vector<long>> picks(devices);
  for (int c = 0; c < classes; ++c) {
    long pool = static_cast<long>(pool_by_class[c].size());
    long train_total = 0;
    for (const auto& s : shards) train_total += s.per_class_counts[c];
    if (train_total == 0 || pool == 0) continue;

    std::vector<std::pair<double, int>> rema;  // (-remainder, device)
    std::vector<long> counts(devices, 0);
    long assigned = 0;
    for (int k = 0; k < devices; ++k) {
      if (shards[k].per_class_counts[c] == 0) continue;
      double exact = static_cast<double>(pool) *
                     shards[k].per_class_counts[c] / train_total;
      counts[k] = static_cast<long>(std::floor(exact));
      assigned += counts[k];
      rema.push_back({-(exact - counts[k]), k});
    }
    std::sort(rema.begin(), rema.end());
    for (size_t i = 0; i < rema.size() && assigned < pool; ++i, ++assigned) {
      ++counts[rema[i].second];
    }
    long cursor = 0;
    for (int k = 0; k < devices; ++k) {
      for (long i = 0; i < counts[k]; ++i) {
        picks[k].push_back(pool_by_class[c][cursor++]);
      }
    }
  }

  std::vector<DatasetShard> out(devices);
  for (int k = 0; k < devices; ++k) {
    std::sort(picks[k].begin(), picks[k].end());
    DatasetShard shard;
    shard.features.resize(test_pool.features.rows(),
                          static_cast<long>(picks[k].size()));
    shard.labels.resize(static_cast<long>(picks[k].size()));
    shard.per_class_counts = Eigen::VectorXi::Zero(classes);
    for (size_t i = 0; i < picks[k].size(); ++i) {
      shard.features.col(static_cast<long>(i)) =
          test_pool.features.col(picks[k][i]);
      shard.labels[static_cast<long>(i)] = test_pool.labels[picks[k][i]];
      shard.per_class_counts[test_pool.labels[picks[k][i]]] += 1;
    }
    out[k] = std::move(shard);
  }
  return out;
}

namespace {

SchedulePattern parse_pattern(const std::string& name) {
  if (name == "ascend") return SchedulePattern::kAscend;
  if (name == "descend") return SchedulePattern::kDescend;
  return SchedulePattern::kUniform;
}

// Patterns pick the cohort; bandwidth still has to be shared, so realized
// energies come from an equal-weight allocation. Oversized cohorts the band
// cannot carry shed their weakest channels.
RoundDecision pattern_decision(const std::vector<int>& cohort,
                               const std::vector<DeviceProfile>& profiles,
                               const ChannelDraw& channel,
                               const SchedulerConfig& sc,
                               const PayloadSpec& payload,
                               const ChannelModel& ch) {
  Eigen::VectorXd unit =
      Eigen::VectorXd::Ones(static_cast<Eigen::Index>(profiles.size()));
  std::vector<int> set = cohort;
  RoundDecision decision;
  decision.allocation.feasible = true;
  while (!set.empty()) {
    AllocationResult alloc = allocate_bandwidth(
        set, unit, channel.gains, profiles, sc.deadline, sc.local_iters,
        payload, ch);
    if (alloc.feasible) {
      decision.scheduled = set;
      decision.allocation = std::move(alloc);
      break;
    }
    size_t worst = 0;
    for (size_t i = 1; i < set.size(); ++i) {
      if (channel.gains[set[i]] < channel.gains[set[worst]]) worst = i;
    }
    set.erase(set.begin() + static_cast<long>(worst));
  }
  return decision;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);

  DatasetShard train, test_pool;
  if (cfg.dataset == "synthetic") {
    train = gen_synthetic(cfg.classes, cfg.input_dim, cfg.per_class,
                          cfg.cluster_spread, cfg.seed, RngTag::kSyntheticData);
    test_pool = gen_synthetic(cfg.classes, cfg.input_dim, cfg.test_per_class,
                              cfg.cluster_spread, cfg.seed, RngTag::kTestSplit);
  } else {
    train = load_mnist_idx(cfg.mnist_dir + "/train-images-idx3-ubyte",
                           cfg.mnist_dir + "/train-labels-idx1-ubyte",
                           cfg.classes);
    test_pool = load_mnist_idx(cfg.mnist_dir + "/t10k-images-idx3-ubyte",
                               cfg.mnist_dir + "/t10k-labels-idx1-ubyte",
                               cfg.classes);
  }

  std::vector<DatasetShard> shards =
      partition_non_iid(train, cfg.devices, cfg.classes_per_device, cfg.seed);
  std::vector<DatasetShard> test_shards = build_test_shards(test_pool, shards);
  std::vector<DeviceProfile> profiles = build_profiles(cfg, shards);

  ChannelModel ch = build_channel(cfg);
  PayloadSpec payload = build_payload(cfg);
  SchedulerConfig sc = build_scheduler_config(cfg);

  ExperimentResult result;
  result.profiles = profiles;
  result.scheduler_config = sc;
  result.payload = payload;

  result.state.global_knowledge =
      KnowledgeMatrix::empty(cfg.classes, cfg.feature_dim);
  for (int k = 0; k < cfg.devices; ++k) {
    std::vector<int> hidden = cfg.hidden_dims;
    if (!cfg.hidden_choices.empty()) {
      RngStream arch(cfg.seed, RngTag::kArch, static_cast<uint64_t>(k));
      int choice =
          cfg.hidden_choices[arch.below(cfg.hidden_choices.size())];
      if (hidden.empty()) {
        hidden.push_back(choice);
      } else {
        hidden.back() = choice;
      }
    }
    result.state.models.push_back(init_model(cfg.input_dim, hidden,
                                             cfg.feature_dim, cfg.classes,
                                             cfg.seed, k));
  }

  VirtualQueueState queues;
  queues.backlogs = Eigen::VectorXd::Zero(cfg.devices);
  BaselineState baseline;
  baseline.spent = Eigen::VectorXd::Zero(cfg.devices);
  Eigen::VectorXd cumulative = Eigen::VectorXd::Zero(cfg.devices);
  double last_accuracy = 0.0;
  long bytes_per_device = knowledge_bytes_per_round(payload);

  result.queue_trace.push_back(queues.backlogs);
  for (int t = 0; t < cfg.horizon; ++t) {
    ChannelDraw draw = draw_channel(ch, profiles, t, cfg.seed);

    RoundDecision decision;
    if (cfg.scheduler_kind == "proposed") {
      decision = schedule_round(queues, profiles, draw, sc, payload, ch, t);
    } else if (cfg.scheduler_kind == "round_robin") {
      decision =
          round_robin_schedule(baseline, profiles, draw, sc, payload, ch, t);
    } else if (cfg.scheduler_kind == "myopic") {
      decision = myopic_schedule(baseline, profiles, draw, sc, payload, ch, t);
    } else {
      std::vector<int> feasible =
          feasible_devices(profiles, draw, sc, payload, ch);
      std::vector<int> cohort = pattern_schedule(
          parse_pattern(cfg.pattern), t, sc, feasible, cfg.seed);
      decision = pattern_decision(cohort, profiles, draw, sc, payload, ch);
    }
    decision.objective = drift_plus_penalty(
        decision.scheduled, decision.allocation, queues.backlogs, profiles,
        sc, t);

    run_kfl_round(result.state, shards, decision.scheduled, cfg.hp);

    Eigen::VectorXd round_energy = Eigen::VectorXd::Zero(cfg.devices);
    long data_volume = 0;
    for (int k : decision.scheduled) {
      round_energy[k] = decision.allocation.energy_of(k);
      data_volume += profiles[k].total_samples;
    }
    cumulative += round_energy;
    baseline.spent += round_energy;
    queues = update_queues(queues, decision, profiles, cfg.horizon);

    result.energy_trace.push_back(round_energy);
    result.queue_trace.push_back(queues.backlogs);

    if (t % cfg.eval_interval == 0 || t + 1 == cfg.horizon) {
      last_accuracy = evaluate_accuracy(result.state.models, test_shards);
    }

    MetricsRecord rec;
    rec.round = t;
    rec.test_accuracy = last_accuracy;
    rec.scheduled_count = static_cast<int>(decision.scheduled.size());
    rec.scheduled_data_volume = data_volume;
    rec.per_device_cumulative_energy = cumulative;
    rec.max_queue = queues.backlogs.size() ? queues.backlogs.maxCoeff() : 0.0;
    rec.dpp_objective = decision.objective;
    rec.bytes_uploaded =
        static_cast<long>(decision.scheduled.size()) * bytes_per_device;
    result.records.push_back(rec);
  }
  return result;
}

std::string format_metrics(const std::vector<MetricsRecord>& records) {
  std::string out =
      "round,test_accuracy,scheduled_count,scheduled_data_volume,"
      "cum_energy_max,cum_energy_mean,max_queue,dpp_objective,bytes_uploaded\n";
  char buf[256];
  for (const auto& r : records) {
    double cmax = 0.0, cmean = 0.0;
    if (r.per_device_cumulative_energy.size() > 0) {
      cmax = r.per_device_cumulative_energy.maxCoeff();
      cmean = r.per_device_cumulative_energy.mean();
    }
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%d,%ld,%.9g,%.9g,%.9g,%.9g,%ld\n",
                  r.round, r.test_accuracy, r.scheduled_count,
                  r.scheduled_data_volume, cmax, cmean, r.max_queue,
                  r.dpp_objective, r.bytes_uploaded);
    out += buf;
  }
  return out;
}

void emit_metrics(const std::vector<MetricsRecord>& records,
                  const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("metrics: cannot open '" + path + "'");
  out << format_metrics(records);
  if (!out) throw std::runtime_error("metrics: write failed for '" + path + "'");
}

}  // namespace kfl
