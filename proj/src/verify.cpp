#include "kfl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>
#include <numeric>

#include "kfl/allocation.hpp"
#include "kfl/numerics.hpp"
#include "kfl/rng.hpp"
#include "kfl/scheduler.hpp"

namespace kfl {

namespace {

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Random wireless instance with every device deliverable before the
// deadline: the allocation and scheduling oracles both draw from this.
struct WirelessInstance {
  std::vector<DeviceProfile> profiles;
  Eigen::VectorXd gains;
  Eigen::VectorXd queues;
  double deadline = 1.0;
  int local_iters = 5;
  PayloadSpec payload;
  ChannelModel channel;
};

WirelessInstance random_instance(RngStream& rng, int devices,
                                 double zero_queue_prob) {
  WirelessInstance inst;
  // Payload heavy enough that upload energy shapes the objective.
  inst.payload.knowledge_params = 400000;
  inst.payload.bits_per_param = 32;
  inst.channel = ChannelModel{};  // stock cell parameters
  inst.gains.resize(devices);
  inst.queues.resize(devices);
  for (int k = 0; k < devices; ++k) {
    DeviceProfile dev;
    dev.id = k;
    dev.total_samples = 100 + static_cast<long>(rng.below(301));
    dev.flops_per_sample = rng.uniform(2e4, 6e4);
    static const double freqs[] = {0.85e9, 1.12e9, 1.2e9, 1.3e9};
    dev.cpu_freq = freqs[rng.below(4)];
    dev.flops_per_cycle = 1.0;
    dev.power_coeff = 1e-28;
    dev.max_power = 1.0;
    dev.energy_budget = 5.0;
    dev.distance = rng.uniform(50.0, 400.0);
    inst.profiles.push_back(dev);

    double rho = rng.exponential();
    inst.gains[k] = inst.channel.path_loss_const * rho *
                    std::pow(inst.channel.ref_distance / dev.distance,
                             inst.channel.path_loss_exp);
    inst.queues[k] =
        rng.uniform01() < zero_queue_prob ? 0.0 : rng.uniform(0.05, 2.0);
  }
  return inst;
}

bool instance_feasible(const WirelessInstance& inst, double margin) {
  double min_sum = 0.0;
  for (const auto& dev : inst.profiles) {
    auto tmin = min_bandwidth_share(dev, inst.gains[dev.id], inst.deadline,
                                    inst.local_iters, inst.payload,
                                    inst.channel);
    if (!tmin) return false;
    min_sum += *tmin;
  }
  return min_sum < margin;
}

}  // namespace

ExperimentConfig desk_config(uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.devices = 20;
  cfg.horizon = 40;
  cfg.scheduler_kind = "pattern";
  cfg.pattern = "uniform";
  cfg.tradeoff_v = 0.01;
  cfg.deadline_s = 1.0;
  cfg.classes = 10;
  cfg.classes_per_device = 2;
  cfg.input_dim = 20;
  cfg.per_class = 30;
  cfg.test_per_class = 50;
  cfg.cluster_spread = 0.35;
  cfg.feature_dim = 8;
  cfg.hidden_dims = {16};
  cfg.hp.knowledge_weight = 0.1;
  cfg.flops_per_sample = 2e5;
  cfg.energy_budget_per_round_j = 0.1;
  return cfg;
}

CheckResult verify_overhead_ratio() {
  ExperimentConfig cfg = desk_config(1);
  cfg.feature_dim = 64;  // reference MLP configuration
  cfg.classes = 10;
  cfg.model_params = 553406;
  PayloadSpec payload = build_payload(cfg);

  long knowledge_bytes = knowledge_bytes_per_round(payload);
  double model_bytes =
      static_cast<double>(payload.model_params) * payload.bits_per_param / 8.0;
  double ratio = knowledge_bytes / model_bytes;
  double expected = 640.0 / 553406.0;

  bool pass = payload.knowledge_params == 640 &&
              std::abs(ratio - expected) < 1e-15;
  return {"communication overhead ratio", pass,
          fmt("640/553406 = %.6g (%.2g%% of model upload)", ratio,
              100.0 * ratio)};
}

CheckResult verify_lambert_identity() {
  const double inv_e = std::exp(-1.0);
  const double lo = 1e-9, hi = 1e9 + inv_e;  // grid on x + 1/e
  const int points = 10000;
  double worst = 0.0;
  double prev_w = -2.0;
  bool monotone = true;
  for (int i = 0; i < points; ++i) {
    double s = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
    double x = s - inv_e;
    double w = lambert_w0(x);
    double residual = std::abs(w * std::exp(w) - x) / std::max(1.0, std::abs(x));
    worst = std::max(worst, residual);
    if (w < prev_w - 1e-14) monotone = false;
    prev_w = w;
  }
  bool pass = worst <= 1e-10 && monotone;
  return {"Lambert W identity on log grid", pass,
          fmt("max residual %.3g (limit 1e-10), monotone=%s", worst,
              monotone ? "yes" : "no")};
}

namespace {

// Objective sum_k q_k*(E_L + E_U(theta_k)) evaluated from the energy
// formula directly; infeasible when some share cannot carry the payload at
// p_max.
double oracle_objective(const WirelessInstance& inst,
                        const std::vector<double>& shares) {
  double total = 0.0;
  for (size_t i = 0; i < inst.profiles.size(); ++i) {
    const DeviceProfile& dev = inst.profiles[i];
    double window =
        inst.deadline - compute_latency(dev, inst.local_iters);
    double theta = shares[i];
    if (theta <= 0.0) return std::numeric_limits<double>::infinity();
    double required =
        static_cast<double>(inst.payload.knowledge_params) *
        inst.payload.bits_per_param / window;
    if (uplink_rate(theta, dev.max_power, inst.gains[dev.id], inst.channel) <
        required) {
      return std::numeric_limits<double>::infinity();
    }
    total += inst.queues[dev.id] *
             (compute_energy(dev, inst.local_iters) +
              upload_energy(theta, window, inst.gains[dev.id], inst.payload,
                            inst.channel));
  }
  return total;
}

double grid_search_2(const WirelessInstance& inst, double step) {
  double best = std::numeric_limits<double>::infinity();
  double best_t = 0.5;
  for (double t = step; t < 1.0; t += step) {
    double v = oracle_objective(inst, {t, 1.0 - t});
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  // Local refinement around the winning cell.
  double lo = std::max(step / 2, best_t - step);
  double hi = std::min(1.0 - step / 2, best_t + step);
  for (int i = 0; i <= 400; ++i) {
    double t = lo + (hi - lo) * i / 400.0;
    best = std::min(best, oracle_objective(inst, {t, 1.0 - t}));
  }
  return best;
}

double grid_search_3(const WirelessInstance& inst, double step) {
  double best = std::numeric_limits<double>::infinity();
  double b1 = 1.0 / 3, b2 = 1.0 / 3;
  for (double t1 = step; t1 < 1.0; t1 += step) {
    for (double t2 = step; t1 + t2 < 1.0; t2 += step) {
      double v = oracle_objective(inst, {t1, t2, 1.0 - t1 - t2});
      if (v < best) {
        best = v;
        b1 = t1;
        b2 = t2;
      }
    }
  }
  for (int stage = 0; stage < 2; ++stage) {
    double span = stage == 0 ? step : step / 20.0;
    double lo1 = b1 - span, hi1 = b1 + span;
    double lo2 = b2 - span, hi2 = b2 + span;
    for (int i = 0; i <= 40; ++i) {
      for (int j = 0; j <= 40; ++j) {
        double t1 = lo1 + (hi1 - lo1) * i / 40.0;
        double t2 = lo2 + (hi2 - lo2) * j / 40.0;
        if (t1 <= 0 || t2 <= 0 || t1 + t2 >= 1.0) continue;
        double v = oracle_objective(inst, {t1, t2, 1.0 - t1 - t2});
        if (v < best) {
          best = v;
          if (stage == 1) continue;
          b1 = t1;
          b2 = t2;
        }
      }
    }
  }
  return best;
}

}  // namespace

CheckResult verify_allocation_oracle(uint64_t seed) {
  RngStream rng(seed, RngTag::kPattern, 3001);
  int checked = 0;
  double worst_rel = 0.0, worst_sum = 0.0, worst_power = 0.0;
  while (checked < 100) {
    int size = 2 + static_cast<int>(rng.below(2));
    WirelessInstance inst = random_instance(rng, size, 0.0);
    if (!instance_feasible(inst, 0.9)) continue;

    std::vector<int> all(size);
    std::iota(all.begin(), all.end(), 0);
    AllocationResult alloc = allocate_bandwidth(
        all, inst.queues, inst.gains, inst.profiles, inst.deadline,
        inst.local_iters, inst.payload, inst.channel);
    if (!alloc.feasible) continue;

    double oracle = size == 2 ? grid_search_2(inst, 1e-3)
                              : grid_search_3(inst, 1e-3);
    double rel = std::abs(alloc.weighted_energy - oracle) / std::abs(oracle);
    worst_rel = std::max(worst_rel, rel);
    worst_sum = std::max(worst_sum, std::abs(alloc.shares.sum() - 1.0));
    for (int k = 0; k < size; ++k) {
      worst_power = std::max(
          worst_power, alloc.powers[k] - inst.profiles[k].max_power);
    }
    ++checked;
  }
  bool pass = worst_rel <= 1e-4 && worst_sum <= 1e-6 && worst_power <= 1e-9;
  return {"bandwidth allocation vs simplex grid oracle", pass,
          fmt("%d instances: max rel gap %.3g (limit 1e-4), max |sum(theta)-1| "
              "%.3g, max power excess %.3g",
              checked, worst_rel, worst_sum, worst_power)};
}

CheckResult verify_power_identity(uint64_t seed) {
  RngStream rng(seed, RngTag::kPattern, 3002);
  double worst = 0.0;
  int checked = 0;
  while (checked < 200) {
    WirelessInstance inst = random_instance(rng, 1, 0.0);
    const DeviceProfile& dev = inst.profiles[0];
    double window = inst.deadline - compute_latency(dev, inst.local_iters);
    if (window <= 0.0) continue;
    double theta = rng.uniform(0.05, 1.0);
    double p = optimal_power(theta, dev, inst.gains[0], inst.deadline,
                             inst.local_iters, inst.payload, inst.channel);
    double bits = uplink_rate(theta, p, inst.gains[0], inst.channel) * window;
    double want = static_cast<double>(inst.payload.knowledge_params) *
                  inst.payload.bits_per_param;
    worst = std::max(worst, std::abs(bits - want) / want);
    ++checked;
  }
  bool pass = worst <= 1e-9;
  return {"power/deadline identity", pass,
          fmt("%d draws: max |rate*T_U - Qq|/Qq = %.3g (limit 1e-9)", checked,
              worst)};
}

namespace {

std::vector<double*> parameter_view(LocalModel& m) {
  std::vector<double*> out;
  auto add = [&out](Eigen::MatrixXd& w) {
    for (Eigen::Index i = 0; i < w.size(); ++i) out.push_back(w.data() + i);
  };
  auto addv = [&out](Eigen::VectorXd& b) {
    for (Eigen::Index i = 0; i < b.size(); ++i) out.push_back(b.data() + i);
  };
  for (auto& w : m.extractor_w) add(w);
  for (auto& b : m.extractor_b) addv(b);
  for (auto& w : m.predictor_w) add(w);
  for (auto& b : m.predictor_b) addv(b);
  return out;
}

}  // namespace

CheckResult verify_gradient_check(uint64_t seed) {
  const int dim = 2, feature = 3, classes = 3, samples = 12;
  const double lambda = 0.5;
  double worst = 0.0;

  for (int trial = 0; trial < 50; ++trial) {
    RngStream rng(seed, RngTag::kWeights, 4000 + trial);
    LocalModel model = init_model(dim, {}, feature, classes, seed, trial);
    // Re-randomize away from the init distribution.
    for (double* p : parameter_view(model)) *p = rng.uniform(-1.0, 1.0);

    DatasetShard shard;
    shard.features.resize(dim, samples);
    shard.labels.resize(samples);
    shard.per_class_counts = Eigen::VectorXi::Zero(classes);
    for (int n = 0; n < samples; ++n) {
      for (int i = 0; i < dim; ++i) shard.features(i, n) = rng.uniform(-1, 1);
      shard.labels[n] = n % classes;
      shard.per_class_counts[n % classes] += 1;
    }
    KnowledgeMatrix know = KnowledgeMatrix::empty(classes, feature);
    for (int c = 0; c < classes; ++c) {
      know.class_counts[c] = 1;
      for (int j = 0; j < feature; ++j) know.prototypes(c, j) = rng.uniform(-1, 1);
    }

    LossGradients g = loss_and_gradients(model, shard, know, lambda);
    std::vector<double*> params = parameter_view(model);
    LocalModel grad = g.grad;
    std::vector<double*> grads = parameter_view(grad);

    const double h = 1e-5;
    for (size_t i = 0; i < params.size(); ++i) {
      double keep = *params[i];
      *params[i] = keep + h;
      double up = empirical_loss(model, shard) +
                  lambda * knowledge_loss(model, shard, know);
      *params[i] = keep - h;
      double down = empirical_loss(model, shard) +
                    lambda * knowledge_loss(model, shard, know);
      *params[i] = keep;
      double fd = (up - down) / (2 * h);
      double rel = std::abs(*grads[i] - fd) /
                   std::max({std::abs(fd), std::abs(*grads[i]), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  bool pass = worst <= 1e-4;
  return {"knowledge-aided loss gradient vs finite differences", pass,
          fmt("50 parameter points: max rel error %.3g (limit 1e-4)", worst)};
}

CheckResult verify_scheduler_oracle(uint64_t seed) {
  RngStream rng(seed, RngTag::kPattern, 3003);
  int rounds = 0;
  int prefix_matches = 0;
  std::vector<double> gaps;

  while (rounds < 50) {
    int devices = 5 + static_cast<int>(rng.below(6));  // K in [5, 10]
    WirelessInstance inst = random_instance(rng, devices, 0.3);
    if (!instance_feasible(inst, 2.0)) continue;  // every member deliverable
    ++rounds;

    SchedulerConfig cfg;
    cfg.tradeoff_v = std::pow(10.0, rng.uniform(-5.0, -3.0));
    cfg.horizon = 50;
    cfg.deadline = inst.deadline;
    cfg.local_iters = inst.local_iters;
    int round = static_cast<int>(rng.below(50));
    cfg.round_weights.resize(50);
    for (int t = 0; t < 50; ++t) cfg.round_weights[t] = 1.0 / (t + 1.0);

    ChannelDraw draw{inst.gains, round};
    VirtualQueueState queues{inst.queues, round};
    RoundDecision decision = schedule_round(queues, inst.profiles, draw, cfg,
                                            inst.payload, inst.channel, round);

    // Independent walk over the same prefix family.
    std::vector<int> feasible =
        feasible_devices(inst.profiles, draw, cfg, inst.payload, inst.channel);
    Eigen::VectorXd estimates = Eigen::VectorXd::Zero(devices);
    for (int k : feasible) {
      estimates[k] = estimate_energy(inst.profiles[k], inst.gains[k], devices,
                                     cfg, inst.payload, inst.channel);
    }
    std::vector<int> ranked = rank_devices(feasible, inst.profiles,
                                           inst.queues, estimates, cfg, round);
    double family_min = 0.0;
    std::vector<int> prefix;
    for (int k : ranked) {
      prefix.push_back(k);
      AllocationResult alloc = allocate_bandwidth(
          prefix, inst.queues, inst.gains, inst.profiles, cfg.deadline,
          cfg.local_iters, inst.payload, inst.channel);
      if (!alloc.feasible) break;
      double value = drift_plus_penalty(prefix, alloc, inst.queues,
                                        inst.profiles, cfg, round);
      double marginal =
          -cfg.tradeoff_v * cfg.gamma(round) * inst.profiles[k].total_samples +
          inst.queues[k] * alloc.energy_of(k);
      if (marginal > 0.0) break;
      family_min = std::min(family_min, value);
    }
    if (family_min == decision.objective) ++prefix_matches;

    // Brute force over all subsets of the feasible devices.
    double brute = 0.0;
    int n = static_cast<int>(feasible.size());
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<int> set;
      for (int b = 0; b < n; ++b) {
        if (mask & (1u << b)) set.push_back(feasible[b]);
      }
      AllocationResult alloc = allocate_bandwidth(
          set, inst.queues, inst.gains, inst.profiles, cfg.deadline,
          cfg.local_iters, inst.payload, inst.channel);
      if (!alloc.feasible) continue;
      brute = std::min(brute, drift_plus_penalty(set, alloc, inst.queues,
                                                 inst.profiles, cfg, round));
    }
    if (brute < 0.0) {
      gaps.push_back((decision.objective - brute) / std::abs(brute));
    } else {
      gaps.push_back(0.0);
    }
  }

  double median_gap = median(gaps);
  bool pass = prefix_matches == rounds;
  return {"scheduler vs prefix family and brute force", pass,
          fmt("%d rounds: prefix-family min matched %d/%d (asserted); "
              "median gap to 2^K optimum %.2f%% (reported)",
              rounds, prefix_matches, rounds, 100.0 * median_gap)};
}

CheckResult verify_energy_bound(uint64_t seed) {
  bool pass = true;
  double worst_margin = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < 3; ++s) {
    ExperimentConfig cfg = desk_config(seed + s);
    cfg.scheduler_kind = "proposed";
    cfg.horizon = 50;
    ExperimentResult result = run_experiment(cfg);
    EnergyBoundReport report = energy_bound_report(
        result.energy_trace, result.scheduler_config, result.profiles);
    if (report.total_energy > report.bound) pass = false;
    worst_margin =
        std::max(worst_margin, report.total_energy - report.bound);
  }
  return {"drift-plus-penalty total-energy bound over 50-round runs", pass,
          fmt("3 seeds: max (energy - bound) = %.3g J (must be <= 0)",
              worst_margin)};
}

namespace {

// First round where the accuracy reaches 85% of its final value.
int rounds_to_threshold(const std::vector<MetricsRecord>& records) {
  double final_acc = records.back().test_accuracy;
  double target = 0.85 * final_acc;
  for (const auto& r : records) {
    if (r.test_accuracy >= target) return r.round;
  }
  return records.back().round;
}

}  // namespace

CheckResult verify_early_rounds(uint64_t seed) {
  const char* patterns[] = {"descend", "uniform", "ascend"};
  std::vector<double> medians;
  for (const char* pattern : patterns) {
    std::vector<double> rounds;
    for (int s = 0; s < 5; ++s) {
      ExperimentConfig cfg = desk_config(seed + 100 + s);
      cfg.scheduler_kind = "pattern";
      cfg.pattern = pattern;
      ExperimentResult result = run_experiment(cfg);
      rounds.push_back(rounds_to_threshold(result.records));
    }
    medians.push_back(median(rounds));
  }
  bool pass = medians[0] <= medians[1] && medians[1] <= medians[2];
  return {"early-round scheduling reaches 85% of final accuracy first", pass,
          fmt("median rounds to 85%% of final: descend %.1f <= uniform %.1f "
              "<= ascend %.1f (5 seeds)",
              medians[0], medians[1], medians[2])};
}

CheckResult verify_knowledge_benefit(uint64_t seed) {
  double with_knowledge = 0.0, isolated = 0.0;
  for (int s = 0; s < 5; ++s) {
    ExperimentConfig cfg = desk_config(seed + 200 + s);
    cfg.test_per_class = 100;
    cfg.hp.knowledge_weight = 0.1;
    with_knowledge += run_experiment(cfg).records.back().test_accuracy;
    cfg.hp.knowledge_weight = 0.0;
    isolated += run_experiment(cfg).records.back().test_accuracy;
  }
  with_knowledge /= 5.0;
  isolated /= 5.0;
  bool pass = with_knowledge >= isolated + 0.02;
  return {"knowledge aggregation beats isolated training", pass,
          fmt("mean final accuracy over 5 seeds: lambda=0.1 %.4f vs lambda=0 "
              "%.4f (criterion: +0.02)",
              with_knowledge, isolated)};
}

CheckResult verify_determinism(uint64_t seed) {
  ExperimentConfig cfg = desk_config(seed);
  cfg.scheduler_kind = "proposed";
  cfg.horizon = 5;
  cfg.devices = 10;
  cfg.classes_per_device = 2;  // 10*2 divisible by 10 classes
  std::string a = format_metrics(run_experiment(cfg).records);
  std::string b = format_metrics(run_experiment(cfg).records);
  bool pass = a == b && !a.empty();
  return {"same seed and config give byte-identical metrics", pass,
          fmt("%zu bytes compared", a.size())};
}

CheckResult verify_queue_evolution(uint64_t seed) {
  ExperimentConfig cfg = desk_config(seed);
  cfg.scheduler_kind = "proposed";
  cfg.horizon = 50;
  ExperimentResult result = run_experiment(cfg);

  double worst_evolve = 0.0;
  bool telescoping = true;
  int horizon = static_cast<int>(result.energy_trace.size());
  for (int t = 0; t < horizon; ++t) {
    for (int k = 0; k < cfg.devices; ++k) {
      double drain = result.profiles[k].energy_budget / cfg.horizon;
      double expected = std::max(
          result.queue_trace[t][k] + result.energy_trace[t][k] - drain, 0.0);
      worst_evolve = std::max(
          worst_evolve, std::abs(result.queue_trace[t + 1][k] - expected));
      if (result.energy_trace[t][k] - drain >
          result.queue_trace[t + 1][k] - result.queue_trace[t][k] + 1e-12) {
        telescoping = false;
      }
    }
  }
  bool pass = worst_evolve <= 1e-12 && telescoping;
  return {"virtual queue evolution and telescoping inequality", pass,
          fmt("max replay deviation %.3g, telescoping %s", worst_evolve,
              telescoping ? "holds" : "violated")};
}

std::vector<CheckResult> run_verification(const VerifyOptions& opt) {
  std::vector<CheckResult> results;
  results.push_back(verify_overhead_ratio());
  results.push_back(verify_lambert_identity());
  results.push_back(verify_allocation_oracle(opt.seed));
  results.push_back(verify_power_identity(opt.seed));
  results.push_back(verify_gradient_check(opt.seed));
  results.push_back(verify_scheduler_oracle(opt.seed));
  results.push_back(verify_energy_bound(opt.seed));
  if (!opt.quick) {
    results.push_back(verify_early_rounds(opt.seed));
    results.push_back(verify_knowledge_benefit(opt.seed));
  }
  results.push_back(verify_determinism(opt.seed));
  results.push_back(verify_queue_evolution(opt.seed));
  return results;
}

}  // namespace kfl
