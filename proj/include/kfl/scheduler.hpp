#pragma once

#include <cstdint>
#include <vector>

#include "kfl/allocation.hpp"
#include "kfl/system_model.hpp"

namespace kfl {

/// Lyapunov backlogs q_k(t) tracking energy overuse against E_k/T.
struct VirtualQueueState {
  Eigen::VectorXd backlogs;
  int round = 0;
};

enum class SchedulePattern { kUniform, kAscend, kDescend };

struct SchedulerConfig {
  double tradeoff_v = 0.01;           // V
  std::vector<double> round_weights;  // gamma_t, one per round
  int horizon = 1;                    // T
  double deadline = 1.0;              // T_max [s]
  int local_iters = 5;                // tau
  int round_robin_window = 5;
  int pattern_min = 1;      // ascend start / descend end cohort size
  int pattern_max = 20;     // ascend end / descend start cohort size
  int pattern_uniform = 10; // uniform cohort size; also the common average

  double gamma(int round) const;
};

/// One round's scheduling outcome.
struct RoundDecision {
  std::vector<int> scheduled;
  AllocationResult allocation;
  double objective = 0.0;  // drift-plus-penalty value
};

/// Cumulative spend bookkeeping used by the baseline schedulers.
struct BaselineState {
  Eigen::VectorXd spent;  // realized energy per device so far [J]
};

/// Both sides of the drift-plus-penalty total-energy inequality, ex post.
struct EnergyBoundReport {
  double total_energy = 0.0;  // sum_t sum_k alpha*E
  double bound = 0.0;         // sum_k E_k + sqrt(2K(T*zeta0 + V*sum gamma*D))
  double zeta0 = 0.0;
  Eigen::VectorXd zeta;  // per-device max_t |alpha*E - E_k/T|
};

/// q_k(t+1) = max{q_k(t) + alpha_k*E_k,t - E_k/T, 0}.
VirtualQueueState update_queues(const VirtualQueueState& state,
                                const RoundDecision& decision,
                                const std::vector<DeviceProfile>& profiles,
                                int horizon);

/// Energy estimate at equal bandwidth theta = 1/device_count and upload
/// window deadline - T_L; +inf when the deadline cannot cover training.
/// The estimate ignores the p_max cap (final allocation enforces it).
double estimate_energy(const DeviceProfile& dev, double gain, int device_count,
                       const SchedulerConfig& cfg, const PayloadSpec& payload,
                       const ChannelModel& model);

/// Ascending sort by Delta_k = -V*gamma_t*D_k + q_k*estimate_k; ties by id.
std::vector<int> rank_devices(const std::vector<int>& candidates,
                              const std::vector<DeviceProfile>& profiles,
                              const Eigen::VectorXd& queues,
                              const Eigen::VectorXd& estimates,
                              const SchedulerConfig& cfg, int round);

/// -V*gamma_t*sum_{k in S} D_k + sum_{k in S} q_k*E_k.
double drift_plus_penalty(const std::vector<int>& set,
                          const AllocationResult& allocation,
                          const Eigen::VectorXd& queues,
                          const std::vector<DeviceProfile>& profiles,
                          const SchedulerConfig& cfg, int round);

/// Drift-plus-penalty device selection: allocate over growing prefixes of
/// the Delta-ranked feasible devices, stop when the marginal term turns
/// positive, return the prefix minimizing the objective (empty set allowed).
RoundDecision schedule_round(const VirtualQueueState& state,
                             const std::vector<DeviceProfile>& profiles,
                             const ChannelDraw& channel,
                             const SchedulerConfig& cfg,
                             const PayloadSpec& payload,
                             const ChannelModel& model, int round);

/// Fairness baseline: the next fixed-size window in cyclic id order,
/// keeping only devices whose remaining budget covers the round.
RoundDecision round_robin_schedule(const BaselineState& state,
                                   const std::vector<DeviceProfile>& profiles,
                                   const ChannelDraw& channel,
                                   const SchedulerConfig& cfg,
                                   const PayloadSpec& payload,
                                   const ChannelModel& model, int round);

/// Myopic baseline: every device whose realized round energy fits within
/// (E_k - spent_k)/(T - t + 1).
RoundDecision myopic_schedule(const BaselineState& state,
                              const std::vector<DeviceProfile>& profiles,
                              const ChannelDraw& channel,
                              const SchedulerConfig& cfg,
                              const PayloadSpec& payload,
                              const ChannelModel& model, int round);

/// Cohort size of a temporal pattern in a given round; the three patterns
/// are constructed to share the same total over the horizon.
int pattern_size(SchedulePattern pattern, int round,
                 const SchedulerConfig& cfg);

/// Uniformly random cohort of the pattern's size from the feasible devices.
std::vector<int> pattern_schedule(SchedulePattern pattern, int round,
                                  const SchedulerConfig& cfg,
                                  const std::vector<int>& feasible,
                                  uint64_t seed);

/// Total-energy bound check over a complete trace of realized round energies.
EnergyBoundReport energy_bound_report(const std::vector<Eigen::VectorXd>& energy_trace,
                               const SchedulerConfig& cfg,
                               const std::vector<DeviceProfile>& profiles);

/// Devices able to finish training and upload within the deadline this round.
std::vector<int> feasible_devices(const std::vector<DeviceProfile>& profiles,
                                  const ChannelDraw& channel,
                                  const SchedulerConfig& cfg,
                                  const PayloadSpec& payload,
                                  const ChannelModel& model);

}  // namespace kfl
