#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kfl/allocation.hpp"
#include "kfl/system_model.hpp"

using namespace kfl;

namespace {

DeviceProfile reference_device() {
  DeviceProfile dev;
  dev.id = 0;
  dev.total_samples = 600;
  dev.flops_per_sample = 553406;  // reference MLP FLOPs per sample
  dev.cpu_freq = 1.2e9;
  dev.flops_per_cycle = 1.0;
  dev.power_coeff = 1e-28;
  dev.max_power = 1.0;
  dev.distance = 10.0;
  return dev;
}

std::vector<DeviceProfile> ring_of(int n, double distance) {
  std::vector<DeviceProfile> devs(n, reference_device());
  for (int k = 0; k < n; ++k) {
    devs[k].id = k;
    devs[k].distance = distance;
  }
  return devs;
}

}  // namespace

TEST_CASE("compute_latency matches the hand-evaluated formula") {
  DeviceProfile dev = reference_device();
  CHECK(compute_latency(dev, 0) == 0.0);
  // 5*600*553406/1.2e9 s
  CHECK(compute_latency(dev, 5) == doctest::Approx(1.3835150).epsilon(1e-6));
  DeviceProfile fast = dev;
  fast.cpu_freq *= 2.0;
  CHECK(compute_latency(fast, 5) ==
        doctest::Approx(0.5 * compute_latency(dev, 5)).epsilon(1e-12));
}

TEST_CASE("compute_energy matches the hand-evaluated formula") {
  DeviceProfile dev = reference_device();
  CHECK(compute_energy(dev, 0) == 0.0);
  // kappa*5*600*553406*f^2 ~ 0.239 J
  CHECK(compute_energy(dev, 5) == doctest::Approx(0.23907).epsilon(1e-4));
  DeviceProfile fast = dev;
  fast.cpu_freq *= 2.0;
  CHECK(compute_energy(fast, 5) ==
        doctest::Approx(4.0 * compute_energy(dev, 5)).epsilon(1e-12));
}

TEST_CASE("latency and energy are linear in tau and D_k") {
  DeviceProfile dev = reference_device();
  DeviceProfile doubled = dev;
  doubled.total_samples *= 2;
  CHECK(compute_latency(dev, 10) ==
        doctest::Approx(2 * compute_latency(dev, 5)).epsilon(1e-12));
  CHECK(compute_latency(doubled, 5) ==
        doctest::Approx(2 * compute_latency(dev, 5)).epsilon(1e-12));
  CHECK(compute_energy(doubled, 5) ==
        doctest::Approx(2 * compute_energy(dev, 5)).epsilon(1e-12));
}

TEST_CASE("uplink_rate special points") {
  ChannelModel ch;
  CHECK(uplink_rate(0.5, 0.0, 1e-6, ch) == 0.0);

  // SNR term exactly 1: rate = theta*B
  double theta = 0.5;
  double h = 1e-6;
  double p = theta * ch.bandwidth_total * ch.noise_psd / h;
  CHECK(uplink_rate(theta, p, h, ch) ==
        doctest::Approx(theta * ch.bandwidth_total).epsilon(1e-12));

  // SNR term 3: log2(4) = 2
  CHECK(uplink_rate(theta, 3 * p, h, ch) ==
        doctest::Approx(2 * theta * ch.bandwidth_total).epsilon(1e-12));
}

TEST_CASE("upload_latency basics") {
  PayloadSpec payload{640, 32, 553406};
  CHECK(upload_latency(payload, 640.0 * 32) == doctest::Approx(1.0));
  CHECK(upload_latency(payload, 20480.0) == doctest::Approx(1.0));
  CHECK(upload_latency(payload, 1e18) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(std::isinf(upload_latency(payload, 0.0)));
}

TEST_CASE("upload_energy closed form and identities") {
  ChannelModel ch;
  PayloadSpec payload{640, 32, 553406};
  double h = 2e-8;

  // Qq/(theta*B*T_U) = 1  ->  E_U = theta*B*T_U*N0/h
  double theta = 0.4;
  double t_u = 640.0 * 32 / (theta * ch.bandwidth_total);
  CHECK(upload_energy(theta, t_u, h, payload, ch) ==
        doctest::Approx(theta * ch.bandwidth_total * t_u * ch.noise_psd / h)
            .epsilon(1e-12));

  // E_U / T_U equals the exact-finish power from the allocation module.
  DeviceProfile dev = reference_device();
  double deadline = 2.0;
  int tau = 5;
  double window = deadline - compute_latency(dev, tau);
  double p = optimal_power(theta, dev, h, deadline, tau, payload, ch);
  CHECK(upload_energy(theta, window, h, payload, ch) / window ==
        doctest::Approx(p).epsilon(1e-9));

  // Strictly decreasing in theta at fixed T_U.
  double prev = upload_energy(0.05, 1.0, h, payload, ch);
  for (double t = 0.1; t <= 1.0; t += 0.05) {
    double cur = upload_energy(t, 1.0, h, payload, ch);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("draw_channel realizes the path-loss model") {
  ChannelModel ch;
  ch.path_loss_const = 1e-3;
  ch.ref_distance = 1.0;
  ch.path_loss_exp = 2.0;

  // rho ~ Exp(1) has unit mean: the empirical mean approaches h0*(d0/d)^v.
  auto devs = ring_of(1, 10.0);
  double sum = 0.0;
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    sum += draw_channel(ch, devs, t, 7).gains[0];
  }
  double expected = 1e-3 * std::pow(1.0 / 10.0, 2.0);
  CHECK(sum / draws == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("draw_channel is keyed by (seed, device, round)") {
  ChannelModel ch;
  auto devs = ring_of(4, 100.0);

  ChannelDraw a = draw_channel(ch, devs, 3, 42);
  ChannelDraw b = draw_channel(ch, devs, 3, 42);
  CHECK(a.gains == b.gains);  // bit-identical rerun

  // Per-device streams: dropping devices does not change the others' draws.
  auto first_two = ring_of(2, 100.0);
  ChannelDraw c = draw_channel(ch, first_two, 3, 42);
  CHECK(c.gains[0] == a.gains[0]);
  CHECK(c.gains[1] == a.gains[1]);

  CHECK(draw_channel(ch, devs, 4, 42).gains != a.gains);
  CHECK(draw_channel(ch, devs, 3, 43).gains != a.gains);
}

TEST_CASE("knowledge_bytes_per_round") {
  PayloadSpec payload{640, 32, 553406};
  CHECK(knowledge_bytes_per_round(payload) == 2560);
}
