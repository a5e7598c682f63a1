#pragma once

#include <optional>
#include <vector>

#include "kfl/numerics.hpp"
#include "kfl/system_model.hpp"

namespace kfl {

/// Bandwidth shares, transmit powers and round energies for a scheduled set.
/// `shares`, `powers`, `energies` are aligned with `devices`.
struct AllocationResult {
  std::vector<int> devices;
  Eigen::VectorXd shares;    // theta_{k,t}
  Eigen::VectorXd powers;    // p_{k,t} [W]
  Eigen::VectorXd energies;  // E_L + E_U [J]
  double multiplier = 0.0;   // final Lagrange multiplier mu
  bool feasible = false;
  double weighted_energy = 0.0;  // objective sum_k q_k * E_k

  double share_of(int device) const;
  double energy_of(int device) const;
};

/// Transmit power that finishes the knowledge upload in exactly
/// deadline - T_L given share theta:
///   p = theta*B*N0/h * (2^{Qq/((deadline - T_L)*theta*B)} - 1).
/// Throws std::runtime_error when the deadline cannot cover local training.
double optimal_power(double share, const DeviceProfile& dev, double gain,
                     double deadline, int local_iters,
                     const PayloadSpec& payload, const ChannelModel& model);

/// Smallest share meeting the rate requirement Qq/(deadline - T_L) at
/// p_max, found by bisection (the achievable rate grows with theta).
/// Empty when even the full band cannot deliver the payload in time.
std::optional<double> min_bandwidth_share(const DeviceProfile& dev,
                                          double gain, double deadline,
                                          int local_iters,
                                          const PayloadSpec& payload,
                                          const ChannelModel& model,
                                          const Tolerance& tol = {});

/// Stationarity share theta(mu) of the weighted-energy Lagrangian,
///   Qq ln2 / ((deadline - T_L) * B * (W(mu*h/(e*B*N0*q*(deadline-T_L)) - 1/e) + 1)).
/// Strictly decreasing in mu; returns +inf as mu -> 0 (caller clamps).
/// Throws std::invalid_argument when queue <= 0.
double theta_of_mu(double mu, const DeviceProfile& dev, double gain,
                   double queue, double deadline, int local_iters,
                   const PayloadSpec& payload, const ChannelModel& model);

/// Bracket bound for the multiplier search:
///   max_k B*N0*q_k*(deadline - T_L_k) * ((phi_k - 1)e^{phi_k} + 1) / h_k
/// with phi_k = Qq*|S|*ln2 / ((deadline - T_L_k)*B).
double mu_upper_bound(const std::vector<int>& scheduled,
                      const Eigen::VectorXd& queues,
                      const Eigen::VectorXd& gains,
                      const std::vector<DeviceProfile>& profiles,
                      double deadline, int local_iters,
                      const PayloadSpec& payload, const ChannelModel& model);

/// Optimal bandwidth/power allocation for a scheduled set: binary search on
/// mu until sum(theta) hits the bandwidth budget, theta_min clamps resolved
/// to a fixed point, zero-queue devices pinned at theta_min. Infeasible when
/// the set's theta_min shares alone exceed the band.
AllocationResult allocate_bandwidth(const std::vector<int>& scheduled,
                                    const Eigen::VectorXd& queues,
                                    const Eigen::VectorXd& gains,
                                    const std::vector<DeviceProfile>& profiles,
                                    double deadline, int local_iters,
                                    const PayloadSpec& payload,
                                    const ChannelModel& model,
                                    const Tolerance& tol = {});

}  // namespace kfl
