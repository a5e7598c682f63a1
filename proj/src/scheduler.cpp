#include "kfl/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kfl/rng.hpp"

namespace kfl {

double SchedulerConfig::gamma(int round) const {
  if (round >= 0 && round < static_cast<int>(round_weights.size())) {
    return round_weights[round];
  }
  return 1.0 / (round + 1.0);
}

VirtualQueueState update_queues(const VirtualQueueState& state,
                                const RoundDecision& decision,
                                const std::vector<DeviceProfile>& profiles,
                                int horizon) {
  VirtualQueueState next;
  next.round = state.round + 1;
  next.backlogs = state.backlogs;
  for (size_t i = 0; i < profiles.size(); ++i) {
    Eigen::Index k = static_cast<Eigen::Index>(i);
    double used = decision.allocation.energy_of(profiles[i].id);
    double drain = profiles[i].energy_budget / horizon;
    next.backlogs[k] = std::max(state.backlogs[k] + used - drain, 0.0);
  }
  return next;
}

double estimate_energy(const DeviceProfile& dev, double gain, int device_count,
                       const SchedulerConfig& cfg, const PayloadSpec& payload,
                       const ChannelModel& model) {
  double window = cfg.deadline - compute_latency(dev, cfg.local_iters);
  if (window <= 0.0) return std::numeric_limits<double>::infinity();
  double share = 1.0 / device_count;
  return compute_energy(dev, cfg.local_iters) +
         upload_energy(share, window, gain, payload, model);
}

std::vector<int> rank_devices(const std::vector<int>& candidates,
                              const std::vector<DeviceProfile>& profiles,
                              const Eigen::VectorXd& queues,
                              const Eigen::VectorXd& estimates,
                              const SchedulerConfig& cfg, int round) {
  double g = cfg.gamma(round);
  std::vector<int> order = candidates;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    double da = -cfg.tradeoff_v * g * profiles[a].total_samples +
                queues[a] * estimates[a];
    double db = -cfg.tradeoff_v * g * profiles[b].total_samples +
                queues[b] * estimates[b];
    if (da != db) return da < db;
    return a < b;
  });
  return order;
}

double drift_plus_penalty(const std::vector<int>& set,
                          const AllocationResult& allocation,
                          const Eigen::VectorXd& queues,
                          const std::vector<DeviceProfile>& profiles,
                          const SchedulerConfig& cfg, int round) {
  double data = 0.0;
  double energy = 0.0;
  for (int k : set) {
    data += static_cast<double>(profiles[k].total_samples);
    energy += queues[k] * allocation.energy_of(k);
  }
  return -cfg.tradeoff_v * cfg.gamma(round) * data + energy;
}

std::vector<int> feasible_devices(const std::vector<DeviceProfile>& profiles,
                                  const ChannelDraw& channel,
                                  const SchedulerConfig& cfg,
                                  const PayloadSpec& payload,
                                  const ChannelModel& model) {
  std::vector<int> out;
  for (size_t i = 0; i < profiles.size(); ++i) {
    int k = static_cast<int>(i);
    if (compute_latency(profiles[i], cfg.local_iters) >= cfg.deadline) continue;
    if (!min_bandwidth_share(profiles[i], channel.gains[k], cfg.deadline,
                             cfg.local_iters, payload, model)) {
      continue;
    }
    out.push_back(k);
  }
  return out;
}

RoundDecision schedule_round(const VirtualQueueState& state,
                             const std::vector<DeviceProfile>& profiles,
                             const ChannelDraw& channel,
                             const SchedulerConfig& cfg,
                             const PayloadSpec& payload,
                             const ChannelModel& model, int round) {
  std::vector<int> feasible =
      feasible_devices(profiles, channel, cfg, payload, model);

  Eigen::VectorXd estimates =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(profiles.size()));
  for (int k : feasible) {
    estimates[k] =
        estimate_energy(profiles[k], channel.gains[k],
                        static_cast<int>(profiles.size()), cfg, payload, model);
  }
  std::vector<int> ranked = rank_devices(feasible, profiles, state.backlogs,
                                         estimates, cfg, round);

  RoundDecision best;  // empty set, objective 0
  best.allocation.feasible = true;

  double g = cfg.gamma(round);
  std::vector<int> prefix;
  for (int k : ranked) {
    prefix.push_back(k);
    AllocationResult alloc =
        allocate_bandwidth(prefix, state.backlogs, channel.gains, profiles,
                           cfg.deadline, cfg.local_iters, payload, model);
    if (!alloc.feasible) break;  // larger prefixes only tighten the band
    double value = drift_plus_penalty(prefix, alloc, state.backlogs, profiles,
                                      cfg, round);
    double marginal = -cfg.tradeoff_v * g * profiles[k].total_samples +
                      state.backlogs[k] * alloc.energy_of(k);
    if (marginal > 0.0) break;
    if (value < best.objective) {
      best.scheduled = prefix;
      best.allocation = std::move(alloc);
      best.objective = value;
    }
  }
  return best;
}

namespace {

// Shrink the candidate set until the optimal allocation fits every member's
// remaining budget. Removing a device only loosens the band for the rest,
// so the loop is monotone.
RoundDecision fit_to_budgets(std::vector<int> set,
                             const Eigen::VectorXd& remaining,
                             const std::vector<DeviceProfile>& profiles,
                             const ChannelDraw& channel,
                             const SchedulerConfig& cfg,
                             const PayloadSpec& payload,
                             const ChannelModel& model) {
  Eigen::VectorXd unit =
      Eigen::VectorXd::Ones(static_cast<Eigen::Index>(profiles.size()));
  RoundDecision decision;
  decision.allocation.feasible = true;
  while (!set.empty()) {
    AllocationResult alloc =
        allocate_bandwidth(set, unit, channel.gains, profiles, cfg.deadline,
                           cfg.local_iters, payload, model);
    if (!alloc.feasible) {
      // Drop the most band-hungry member and retry.
      size_t worst = 0;
      double worst_need = -1.0;
      for (size_t i = 0; i < set.size(); ++i) {
        auto tmin = min_bandwidth_share(profiles[set[i]],
                                        channel.gains[set[i]], cfg.deadline,
                                        cfg.local_iters, payload, model);
        double need = tmin ? *tmin : 2.0;
        if (need > worst_need) {
          worst_need = need;
          worst = i;
        }
      }
      set.erase(set.begin() + static_cast<long>(worst));
      continue;
    }
    std::vector<int> kept;
    for (size_t i = 0; i < set.size(); ++i) {
      if (alloc.energies[static_cast<Eigen::Index>(i)] <=
          remaining[set[i]]) {
        kept.push_back(set[i]);
      }
    }
    if (kept.size() == set.size()) {
      decision.scheduled = set;
      decision.allocation = std::move(alloc);
      break;
    }
    set = kept;
  }
  return decision;
}

}  // namespace

RoundDecision round_robin_schedule(const BaselineState& state,
                                   const std::vector<DeviceProfile>& profiles,
                                   const ChannelDraw& channel,
                                   const SchedulerConfig& cfg,
                                   const PayloadSpec& payload,
                                   const ChannelModel& model, int round) {
  int devices = static_cast<int>(profiles.size());
  int window = std::max(1, cfg.round_robin_window);
  int start = (round * window) % devices;

  std::vector<int> candidates;
  for (int j = 0; j < window && j < devices; ++j) {
    int k = (start + j) % devices;
    if (compute_latency(profiles[k], cfg.local_iters) >= cfg.deadline) continue;
    if (!min_bandwidth_share(profiles[k], channel.gains[k], cfg.deadline,
                             cfg.local_iters, payload, model)) {
      continue;
    }
    double estimate = estimate_energy(profiles[k], channel.gains[k], window,
                                      cfg, payload, model);
    double remaining = profiles[k].energy_budget - state.spent[k];
    if (estimate <= remaining) candidates.push_back(k);
  }
  std::sort(candidates.begin(), candidates.end());

  Eigen::VectorXd remaining =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(profiles.size()));
  for (size_t i = 0; i < profiles.size(); ++i) {
    remaining[static_cast<Eigen::Index>(i)] =
        profiles[i].energy_budget - state.spent[static_cast<Eigen::Index>(i)];
  }
  return fit_to_budgets(candidates, remaining, profiles, channel, cfg, payload,
                        model);
}

RoundDecision myopic_schedule(const BaselineState& state,
                              const std::vector<DeviceProfile>& profiles,
                              const ChannelDraw& channel,
                              const SchedulerConfig& cfg,
                              const PayloadSpec& payload,
                              const ChannelModel& model, int round) {
  int devices = static_cast<int>(profiles.size());
  Eigen::VectorXd budget(devices);
  for (int k = 0; k < devices; ++k) {
    budget[k] = (profiles[k].energy_budget - state.spent[k]) /
                (cfg.horizon - round + 1.0);
  }

  std::vector<int> candidates;
  for (int k = 0; k < devices; ++k) {
    if (compute_latency(profiles[k], cfg.local_iters) >= cfg.deadline) continue;
    if (!min_bandwidth_share(profiles[k], channel.gains[k], cfg.deadline,
                             cfg.local_iters, payload, model)) {
      continue;
    }
    double estimate = estimate_energy(profiles[k], channel.gains[k], devices,
                                      cfg, payload, model);
    if (estimate <= budget[k]) candidates.push_back(k);
  }
  return fit_to_budgets(candidates, budget, profiles, channel, cfg, payload,
                        model);
}

namespace {

// Ascend ramp pattern_min..pattern_max whose total matches the uniform
// pattern exactly; the residual is absorbed by interior rounds without
// breaking monotonicity.
std::vector<int> ascend_sizes(const SchedulerConfig& cfg) {
  int horizon = std::max(cfg.horizon, 1);
  std::vector<int> sizes(horizon, cfg.pattern_uniform);
  if (horizon == 1) return sizes;

  for (int t = 0; t < horizon; ++t) {
    double frac = static_cast<double>(t) / (horizon - 1);
    sizes[t] = static_cast<int>(std::llround(
        cfg.pattern_min + (cfg.pattern_max - cfg.pattern_min) * frac));
  }
  long total = 0;
  for (int s : sizes) total += s;
  long want = static_cast<long>(cfg.pattern_uniform) * horizon;
  while (total != want) {
    bool changed = false;
    for (int t = 1; t + 1 < horizon && total != want; ++t) {
      if (total > want && sizes[t] - 1 >= sizes[t - 1]) {
        --sizes[t];
        --total;
        changed = true;
      } else if (total < want && sizes[t] + 1 <= sizes[t + 1]) {
        ++sizes[t];
        ++total;
        changed = true;
      }
    }
    if (!changed) {
      throw std::invalid_argument(
          "pattern sizes: cohort bounds cannot match the uniform total");
    }
  }
  return sizes;
}

}  // namespace

int pattern_size(SchedulePattern pattern, int round,
                 const SchedulerConfig& cfg) {
  if (pattern == SchedulePattern::kUniform) return cfg.pattern_uniform;
  std::vector<int> sizes = ascend_sizes(cfg);
  int horizon = static_cast<int>(sizes.size());
  int t = std::clamp(round, 0, horizon - 1);
  return pattern == SchedulePattern::kAscend ? sizes[t]
                                             : sizes[horizon - 1 - t];
}

std::vector<int> pattern_schedule(SchedulePattern pattern, int round,
                                  const SchedulerConfig& cfg,
                                  const std::vector<int>& feasible,
                                  uint64_t seed) {
  int want = pattern_size(pattern, round, cfg);
  int n = static_cast<int>(feasible.size());
  int take = std::min(want, n);

  std::vector<int> pool = feasible;
  RngStream stream(seed, RngTag::kPattern, static_cast<uint64_t>(round));
  for (int i = 0; i < take; ++i) {
    int j = i + static_cast<int>(stream.below(static_cast<uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + take);
  std::sort(out.begin(), out.end());
  return out;
}

EnergyBoundReport energy_bound_report(const std::vector<Eigen::VectorXd>& energy_trace,
                               const SchedulerConfig& cfg,
                               const std::vector<DeviceProfile>& profiles) {
  EnergyBoundReport report;
  int devices = static_cast<int>(profiles.size());
  int horizon = static_cast<int>(energy_trace.size());
  report.zeta = Eigen::VectorXd::Zero(devices);

  double total_data = 0.0;
  double budget_sum = 0.0;
  for (const auto& dev : profiles) {
    total_data += static_cast<double>(dev.total_samples);
    budget_sum += dev.energy_budget;
  }

  double gamma_sum = 0.0;
  for (int t = 0; t < horizon; ++t) {
    gamma_sum += cfg.gamma(t);
    for (int k = 0; k < devices; ++k) {
      double used = energy_trace[t][k];
      report.total_energy += used;
      double dev = std::abs(used - profiles[k].energy_budget / cfg.horizon);
      report.zeta[k] = std::max(report.zeta[k], dev);
    }
  }
  report.zeta0 = 0.5 * report.zeta.squaredNorm();
  report.bound =
      budget_sum + std::sqrt(2.0 * devices *
                             (cfg.horizon * report.zeta0 +
                              cfg.tradeoff_v * gamma_sum * total_data));
  return report;
}

}  // namespace kfl
