#include "kfl/system_model.hpp"

#include <cmath>
#include <limits>

#include "kfl/rng.hpp"

namespace kfl {

ChannelDraw draw_channel(const ChannelModel& model,
                         const std::vector<DeviceProfile>& profiles, int round,
                         uint64_t seed) {
  ChannelDraw draw;
  draw.round = round;
  draw.gains.resize(static_cast<Eigen::Index>(profiles.size()));
  for (size_t k = 0; k < profiles.size(); ++k) {
    RngStream stream(seed, RngTag::kChannel, static_cast<uint64_t>(k),
                     static_cast<uint64_t>(round));
    double rho = stream.exponential();
    double path = std::pow(model.ref_distance / profiles[k].distance,
                           model.path_loss_exp);
    draw.gains[static_cast<Eigen::Index>(k)] =
        model.path_loss_const * rho * path;
  }
  return draw;
}

double compute_latency(const DeviceProfile& dev, int local_iters) {
  return local_iters * static_cast<double>(dev.total_samples) *
         dev.flops_per_sample / (dev.cpu_freq * dev.flops_per_cycle);
}

double compute_energy(const DeviceProfile& dev, int local_iters) {
  return dev.power_coeff * local_iters *
         static_cast<double>(dev.total_samples) * dev.flops_per_sample *
         dev.cpu_freq * dev.cpu_freq / dev.flops_per_cycle;
}

double uplink_rate(double share, double power, double gain,
                   const ChannelModel& model) {
  if (power <= 0.0 || share <= 0.0) return 0.0;
  double band = share * model.bandwidth_total;
  return band * std::log2(1.0 + power * gain / (band * model.noise_psd));
}

double upload_latency(const PayloadSpec& payload, double rate) {
  if (rate <= 0.0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(payload.knowledge_params) *
         payload.bits_per_param / rate;
}

double upload_energy(double share, double upload_time, double gain,
                     const PayloadSpec& payload, const ChannelModel& model) {
  double band = share * model.bandwidth_total;
  double bits = static_cast<double>(payload.knowledge_params) *
                payload.bits_per_param;
  return band * upload_time * model.noise_psd / gain *
         (std::exp2(bits / (band * upload_time)) - 1.0);
}

long knowledge_bytes_per_round(const PayloadSpec& payload) {
  return payload.knowledge_params * payload.bits_per_param / 8;
}

}  // namespace kfl
