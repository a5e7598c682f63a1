#include "kfl/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace kfl {

namespace {

constexpr double kSumBand = 1e-6;  // early-exit band on sum(theta)

double upload_window(const DeviceProfile& dev, double deadline,
                     int local_iters) {
  double t_local = compute_latency(dev, local_iters);
  return deadline - t_local;
}

double payload_bits(const PayloadSpec& payload) {
  return static_cast<double>(payload.knowledge_params) *
         payload.bits_per_param;
}

}  // namespace

double AllocationResult::share_of(int device) const {
  for (size_t i = 0; i < devices.size(); ++i) {
    if (devices[i] == device) return shares[static_cast<Eigen::Index>(i)];
  }
  return 0.0;
}

double AllocationResult::energy_of(int device) const {
  for (size_t i = 0; i < devices.size(); ++i) {
    if (devices[i] == device) return energies[static_cast<Eigen::Index>(i)];
  }
  return 0.0;
}

double optimal_power(double share, const DeviceProfile& dev, double gain,
                     double deadline, int local_iters,
                     const PayloadSpec& payload, const ChannelModel& model) {
  double window = upload_window(dev, deadline, local_iters);
  if (window <= 0.0) {
    throw std::runtime_error("optimal_power: deadline " +
                             std::to_string(deadline) +
                             " s does not cover local training of device " +
                             std::to_string(dev.id));
  }
  double band = share * model.bandwidth_total;
  return band * model.noise_psd / gain *
         (std::exp2(payload_bits(payload) / (window * band)) - 1.0);
}

std::optional<double> min_bandwidth_share(const DeviceProfile& dev,
                                          double gain, double deadline,
                                          int local_iters,
                                          const PayloadSpec& payload,
                                          const ChannelModel& model,
                                          const Tolerance& tol) {
  double window = upload_window(dev, deadline, local_iters);
  if (window <= 0.0) return std::nullopt;
  double required = payload_bits(payload) / window;  // bits/s
  if (required <= 0.0) return 0.0;

  auto margin = [&](double theta) {
    return uplink_rate(theta, dev.max_power, gain, model) - required;
  };
  if (margin(1.0) < 0.0) return std::nullopt;

  // Return the upper end of the final bracket so the rate requirement is
  // met from above and the implied power stays at or below p_max.
  double lo = 0.0, hi = 1.0;
  Tolerance bt{1e-13, 200};
  for (int it = 0; it < bt.max_iter && hi - lo > bt.abs_tol; ++it) {
    double mid = 0.5 * (lo + hi);
    (margin(mid) >= 0.0 ? hi : lo) = mid;
  }
  (void)tol;
  return hi;
}

double theta_of_mu(double mu, const DeviceProfile& dev, double gain,
                   double queue, double deadline, int local_iters,
                   const PayloadSpec& payload, const ChannelModel& model) {
  if (queue <= 0.0) {
    throw std::invalid_argument(
        "theta_of_mu: zero-queue device must be pinned at theta_min");
  }
  double window = upload_window(dev, deadline, local_iters);
  double arg = mu * gain /
                   (std::exp(1.0) * model.bandwidth_total * model.noise_psd *
                    queue * window) -
               std::exp(-1.0);
  double denom = lambert_w0(std::max(arg, -std::exp(-1.0))) + 1.0;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return payload_bits(payload) * M_LN2 /
         (window * model.bandwidth_total * denom);
}

double mu_upper_bound(const std::vector<int>& scheduled,
                      const Eigen::VectorXd& queues,
                      const Eigen::VectorXd& gains,
                      const std::vector<DeviceProfile>& profiles,
                      double deadline, int local_iters,
                      const PayloadSpec& payload, const ChannelModel& model) {
  double bound = 0.0;
  double set_size = static_cast<double>(scheduled.size());
  for (int k : scheduled) {
    double window = upload_window(profiles[k], deadline, local_iters);
    double phi = payload_bits(payload) * set_size * M_LN2 /
                 (window * model.bandwidth_total);
    double candidate = model.bandwidth_total * model.noise_psd * queues[k] *
                       window * ((phi - 1.0) * std::exp(phi) + 1.0) / gains[k];
    bound = std::max(bound, candidate);
  }
  return bound;
}

namespace {

// Binary search over the active (positive-queue, unclamped)
// devices: find mu with sum_k theta_k(mu) equal to the remaining budget.
double solve_mu(const std::vector<int>& active, const Eigen::VectorXd& queues,
                const Eigen::VectorXd& gains,
                const std::vector<DeviceProfile>& profiles, double deadline,
                int local_iters, const PayloadSpec& payload,
                const ChannelModel& model, double budget,
                const Tolerance& tol) {
  auto share_sum = [&](double mu) {
    double s = 0.0;
    for (int k : active) {
      s += theta_of_mu(mu, profiles[k], gains[k], queues[k], deadline,
                       local_iters, payload, model);
      if (!std::isfinite(s)) return s;
    }
    return s;
  };

  double mu_ub = mu_upper_bound(active, queues, gains, profiles, deadline,
                                local_iters, payload, model);
  if (!std::isfinite(mu_ub) || mu_ub <= 0.0) mu_ub = 1e300;
  // The closed-form bound brackets the full-budget search; reduced-budget
  // re-runs may need a wider interval.
  for (int grow = 0; grow < 64 && share_sum(mu_ub) > budget; ++grow) {
    mu_ub *= 2.0;
  }

  double mu_lb = 0.0;
  double mu = mu_ub;
  int iters = std::max(tol.max_iter, 200);
  for (int it = 0; it < iters; ++it) {
    mu = 0.5 * (mu_lb + mu_ub);
    double s = share_sum(mu);
    if (s > budget) {
      mu_lb = mu;
    } else if (s < budget - kSumBand * budget) {
      mu_ub = mu;
    } else {
      break;  // within the budget band
    }
    if (mu_ub - mu_lb < 1e-9 * mu_ub) break;
  }
  return mu;
}

}  // namespace

AllocationResult allocate_bandwidth(const std::vector<int>& scheduled,
                                    const Eigen::VectorXd& queues,
                                    const Eigen::VectorXd& gains,
                                    const std::vector<DeviceProfile>& profiles,
                                    double deadline, int local_iters,
                                    const PayloadSpec& payload,
                                    const ChannelModel& model,
                                    const Tolerance& tol) {
  AllocationResult res;
  res.devices = scheduled;
  Eigen::Index n = static_cast<Eigen::Index>(scheduled.size());
  res.shares = Eigen::VectorXd::Zero(n);
  res.powers = Eigen::VectorXd::Zero(n);
  res.energies = Eigen::VectorXd::Zero(n);
  if (scheduled.empty()) {
    res.feasible = true;
    return res;
  }

  // theta_min per member; the set is undeliverable if any member cannot meet
  // the deadline even alone, or if the minima already exceed the band.
  std::vector<double> theta_min(scheduled.size());
  double min_sum = 0.0;
  for (size_t i = 0; i < scheduled.size(); ++i) {
    int k = scheduled[i];
    auto tmin = min_bandwidth_share(profiles[k], gains[k], deadline,
                                    local_iters, payload, model, tol);
    if (!tmin) return res;  // infeasible
    theta_min[i] = *tmin;
    min_sum += *tmin;
  }
  if (min_sum > 1.0 + kSumBand) return res;  // infeasible

  // Zero-queue devices do not enter the objective: pin them at theta_min and
  // run the multiplier search over the rest with the remaining budget,
  // re-running whenever the theta_min clamp activates.
  std::vector<size_t> active;
  double budget = 1.0;
  for (size_t i = 0; i < scheduled.size(); ++i) {
    if (queues[scheduled[i]] > 0.0) {
      active.push_back(i);
    } else {
      res.shares[static_cast<Eigen::Index>(i)] = theta_min[i];
      budget -= theta_min[i];
    }
  }

  double mu = 0.0;
  while (!active.empty()) {
    double active_min = 0.0;
    for (size_t i : active) active_min += theta_min[i];
    if (budget <= active_min * (1.0 + 1e-12)) {
      // Remaining budget is exactly the minima: all clamps bind.
      for (size_t i : active) {
        res.shares[static_cast<Eigen::Index>(i)] = theta_min[i];
      }
      active.clear();
      break;
    }

    std::vector<int> ids;
    for (size_t i : active) ids.push_back(scheduled[i]);
    mu = solve_mu(ids, queues, gains, profiles, deadline, local_iters, payload,
                  model, budget, tol);

    std::vector<size_t> clamped, rest;
    for (size_t i : active) {
      int k = scheduled[i];
      double theta = theta_of_mu(mu, profiles[k], gains[k], queues[k],
                                 deadline, local_iters, payload, model);
      if (theta < theta_min[i]) {
        clamped.push_back(i);
      } else {
        rest.push_back(i);
        res.shares[static_cast<Eigen::Index>(i)] = std::min(theta, 1.0);
      }
    }
    if (clamped.empty()) break;
    for (size_t i : clamped) {
      res.shares[static_cast<Eigen::Index>(i)] = theta_min[i];
      budget -= theta_min[i];
    }
    active = rest;
  }

  res.multiplier = mu;
  for (size_t i = 0; i < scheduled.size(); ++i) {
    int k = scheduled[i];
    Eigen::Index idx = static_cast<Eigen::Index>(i);
    double p = optimal_power(res.shares[idx], profiles[k], gains[k], deadline,
                             local_iters, payload, model);
    double window = upload_window(profiles[k], deadline, local_iters);
    res.powers[idx] = p;
    res.energies[idx] = compute_energy(profiles[k], local_iters) + p * window;
    res.weighted_energy += queues[k] * res.energies[idx];
  }
  res.feasible = true;
  return res;
}

}  // namespace kfl
