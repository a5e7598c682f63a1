#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace kfl {

/// Static per-device parameters of the compute/transmit cost model.
struct DeviceProfile {
  int id = 0;
  Eigen::VectorXi samples_per_class;  // D_{k,c}
  long total_samples = 0;             // D_k
  double cpu_freq = 1e9;              // f_k [cycles/s]
  double flops_per_cycle = 1.0;       // n_k
  double flops_per_sample = 0.0;      // C_k [FLOPs]
  double power_coeff = 1e-28;         // kappa [J s^2 / cycle^3]
  double max_power = 1.0;             // p_max [W]
  double energy_budget = 0.0;         // E_k [J]
  double distance = 1.0;              // d_k [m]
};

/// Wireless cell parameters, all in linear SI units.
struct ChannelModel {
  double path_loss_const = 1e-3;   // h0
  double ref_distance = 1.0;       // d0 [m]
  double path_loss_exp = 2.0;      // v
  double noise_psd = 3.9811e-21;   // N0 [W/Hz]
  double bandwidth_total = 5e6;    // B [Hz]
};

/// One round's channel realization; gains stay fixed within the round.
struct ChannelDraw {
  Eigen::VectorXd gains;  // h_{k,t}, indexed by device id
  int round = 0;
};

/// What one scheduled device uploads per round.
struct PayloadSpec {
  long knowledge_params = 0;  // Q = C * p
  int bits_per_param = 32;    // q
  long model_params = 0;      // full-model size, kept for overhead accounting
};

/// Per-device gains h0 * rho * (d0/d_k)^v with rho ~ Exp(1), drawn from
/// streams keyed (seed, device, round): scheduling decisions cannot perturb
/// channel realizations, and per-device evaluation order is irrelevant.
ChannelDraw draw_channel(const ChannelModel& model,
                         const std::vector<DeviceProfile>& profiles, int round,
                         uint64_t seed);

/// Local training latency tau * D_k * C_k / (f_k * n_k) [s].
double compute_latency(const DeviceProfile& dev, int local_iters);

/// Local training energy kappa * tau * D_k * C_k * f_k^2 / n_k [J].
double compute_energy(const DeviceProfile& dev, int local_iters);

/// Shannon uplink rate theta*B*log2(1 + p*h/(theta*B*N0)) [bits/s].
double uplink_rate(double share, double power, double gain,
                   const ChannelModel& model);

/// Knowledge upload time Q*q/rate [s]; +inf when the rate is not positive.
double upload_latency(const PayloadSpec& payload, double rate);

/// Upload energy theta*B*T_U*N0/h * (2^{Qq/(theta*B*T_U)} - 1) [J].
/// Equals p*T_U for the power that finishes the upload in exactly T_U.
double upload_energy(double share, double upload_time, double gain,
                     const PayloadSpec& payload, const ChannelModel& model);

/// Bytes one device uploads per scheduled round: Q*q/8.
long knowledge_bytes_per_round(const PayloadSpec& payload);

}  // namespace kfl
