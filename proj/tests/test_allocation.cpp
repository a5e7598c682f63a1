#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "kfl/allocation.hpp"
#include "kfl/rng.hpp"

using namespace kfl;

namespace {

struct Instance {
  std::vector<DeviceProfile> profiles;
  Eigen::VectorXd gains;
  Eigen::VectorXd queues;
  double deadline = 1.0;
  int tau = 5;
  PayloadSpec payload{400000, 32, 553406};
  ChannelModel channel;
};

Instance make_instance(int devices, uint64_t key) {
  RngStream rng(key, RngTag::kPattern, 99);
  Instance inst;
  inst.gains.resize(devices);
  inst.queues.resize(devices);
  for (int k = 0; k < devices; ++k) {
    DeviceProfile dev;
    dev.id = k;
    dev.total_samples = 150 + static_cast<long>(rng.below(200));
    dev.flops_per_sample = rng.uniform(2e4, 6e4);
    dev.cpu_freq = 1e9;
    dev.max_power = 1.0;
    dev.distance = rng.uniform(50, 300);
    inst.profiles.push_back(dev);
    inst.gains[k] = 1e-3 * rng.uniform(0.3, 2.0) /
                    (dev.distance * dev.distance);
    inst.queues[k] = rng.uniform(0.1, 2.0);
  }
  return inst;
}

std::vector<int> all_ids(const Instance& inst) {
  std::vector<int> ids(inst.profiles.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

TEST_CASE("optimal_power special point and round trip") {
  Instance inst = make_instance(1, 1);
  const DeviceProfile& dev = inst.profiles[0];
  double window = inst.deadline - compute_latency(dev, inst.tau);
  REQUIRE(window > 0);

  // Exponent exactly 1: p = theta*B*N0/h (payload sized so theta <= 1).
  PayloadSpec light{40000, 32, 553406};
  double light_bits = 40000.0 * 32;
  double theta = light_bits / (window * inst.channel.bandwidth_total);
  REQUIRE(theta <= 1.0);
  double p = optimal_power(theta, dev, inst.gains[0], inst.deadline, inst.tau,
                           light, inst.channel);
  CHECK(p == doctest::Approx(theta * inst.channel.bandwidth_total *
                             inst.channel.noise_psd / inst.gains[0])
                 .epsilon(1e-12));

  // Transmitting at p with share theta moves exactly Qq bits in the window.
  double bits = 400000.0 * 32;
  for (double t : {0.1, 0.3, 0.7, 1.0}) {
    double power = optimal_power(t, dev, inst.gains[0], inst.deadline,
                                 inst.tau, inst.payload, inst.channel);
    double moved =
        uplink_rate(t, power, inst.gains[0], inst.channel) * window;
    CHECK(moved == doctest::Approx(bits).epsilon(1e-9));
  }
}

TEST_CASE("optimal_power rejects a deadline inside local training") {
  Instance inst = make_instance(1, 2);
  double t_local = compute_latency(inst.profiles[0], inst.tau);
  CHECK_THROWS_AS(optimal_power(0.5, inst.profiles[0], inst.gains[0],
                                0.5 * t_local, inst.tau, inst.payload,
                                inst.channel),
                  std::runtime_error);
}

TEST_CASE("min_bandwidth_share meets the rate with equality at p_max") {
  Instance inst = make_instance(1, 3);
  const DeviceProfile& dev = inst.profiles[0];
  double window = inst.deadline - compute_latency(dev, inst.tau);
  double required = 400000.0 * 32 / window;

  auto tmin = min_bandwidth_share(dev, inst.gains[0], inst.deadline, inst.tau,
                                  inst.payload, inst.channel);
  REQUIRE(tmin.has_value());
  double rate = uplink_rate(*tmin, dev.max_power, inst.gains[0], inst.channel);
  CHECK(rate >= required);
  CHECK(rate == doctest::Approx(required).epsilon(1e-6));

  // Grid oracle: smallest feasible theta on a dense scan.
  double oracle = 1.0;
  for (int i = 100000; i >= 1; --i) {
    double theta = i / 100000.0;
    if (uplink_rate(theta, dev.max_power, inst.gains[0], inst.channel) >=
        required) {
      oracle = theta;
    } else {
      break;
    }
  }
  CHECK(*tmin == doctest::Approx(oracle).epsilon(1e-4));

  // theta_min implies transmit power p_max.
  double p = optimal_power(*tmin, dev, inst.gains[0], inst.deadline, inst.tau,
                           inst.payload, inst.channel);
  CHECK(p == doctest::Approx(dev.max_power).epsilon(1e-6));
  CHECK(p <= dev.max_power + 1e-9);
}

TEST_CASE("min_bandwidth_share edge cases") {
  Instance inst = make_instance(1, 4);
  PayloadSpec empty{0, 32, 553406};
  auto tmin = min_bandwidth_share(inst.profiles[0], inst.gains[0],
                                  inst.deadline, inst.tau, empty,
                                  inst.channel);
  REQUIRE(tmin.has_value());
  CHECK(*tmin == doctest::Approx(0.0));

  // A channel too weak for the payload even at full band.
  auto none = min_bandwidth_share(inst.profiles[0], 1e-18, inst.deadline,
                                  inst.tau, inst.payload, inst.channel);
  CHECK(!none.has_value());
}

TEST_CASE("theta_of_mu is decreasing and satisfies stationarity") {
  Instance inst = make_instance(1, 5);
  const DeviceProfile& dev = inst.profiles[0];
  double window = inst.deadline - compute_latency(dev, inst.tau);
  double q = inst.queues[0];

  CHECK(std::isinf(theta_of_mu(0.0, dev, inst.gains[0], q, inst.deadline,
                               inst.tau, inst.payload, inst.channel)));
  CHECK_THROWS_AS(theta_of_mu(1.0, dev, inst.gains[0], 0.0, inst.deadline,
                              inst.tau, inst.payload, inst.channel),
                  std::invalid_argument);

  double mu_hi = mu_upper_bound({0}, inst.queues, inst.gains, inst.profiles,
                                inst.deadline, inst.tau, inst.payload,
                                inst.channel);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 100; ++i) {
    double mu = mu_hi * i / 100.0;
    double theta = theta_of_mu(mu, dev, inst.gains[0], q, inst.deadline,
                               inst.tau, inst.payload, inst.channel);
    CHECK(theta < prev);
    prev = theta;

    // First-order condition of the Lagrangian: d(q*E_U)/dtheta + mu = 0.
    double c = inst.channel.bandwidth_total * inst.channel.noise_psd * window /
               inst.gains[0];
    double a = 400000.0 * 32 * M_LN2 /
               (window * inst.channel.bandwidth_total);
    double deriv =
        q * c * (std::exp(a / theta) * (1.0 - a / theta) - 1.0) + mu;
    CHECK(std::abs(deriv) <= 1e-6 * std::max(1.0, mu));
  }
}

TEST_CASE("mu_upper_bound properties") {
  // phi = 1 collapses the inner factor to 1.
  Instance inst = make_instance(1, 6);
  DeviceProfile dev = inst.profiles[0];
  double window = inst.deadline - compute_latency(dev, inst.tau);
  PayloadSpec payload = inst.payload;
  payload.knowledge_params = static_cast<long>(
      window * inst.channel.bandwidth_total / (32 * M_LN2));
  double phi = payload.knowledge_params * 32.0 * M_LN2 /
               (window * inst.channel.bandwidth_total);
  REQUIRE(phi == doctest::Approx(1.0).epsilon(1e-4));
  double bound = mu_upper_bound({0}, inst.queues, inst.gains, inst.profiles,
                                inst.deadline, inst.tau, payload,
                                inst.channel);
  double expected = inst.channel.bandwidth_total * inst.channel.noise_psd *
                    inst.queues[0] * window / inst.gains[0] *
                    ((phi - 1.0) * std::exp(phi) + 1.0);
  CHECK(bound == doctest::Approx(expected).epsilon(1e-12));

  // Bracket validity: at mu_ub the singleton's share fits in the band.
  for (uint64_t key = 10; key < 30; ++key) {
    Instance one = make_instance(1, key);
    double ub = mu_upper_bound({0}, one.queues, one.gains, one.profiles,
                               one.deadline, one.tau, one.payload,
                               one.channel);
    double theta = theta_of_mu(ub, one.profiles[0], one.gains[0],
                               one.queues[0], one.deadline, one.tau,
                               one.payload, one.channel);
    CHECK(theta <= 1.0 + 1e-9);
  }

  // mu_ub dominates the solver's final multiplier.
  int dominated = 0, total = 0;
  for (uint64_t key = 100; key < 200; ++key) {
    Instance inst2 = make_instance(2 + key % 3, key);
    auto ids = all_ids(inst2);
    AllocationResult res = allocate_bandwidth(
        ids, inst2.queues, inst2.gains, inst2.profiles, inst2.deadline,
        inst2.tau, inst2.payload, inst2.channel);
    if (!res.feasible) continue;
    double ub = mu_upper_bound(ids, inst2.queues, inst2.gains, inst2.profiles,
                               inst2.deadline, inst2.tau, inst2.payload,
                               inst2.channel);
    ++total;
    if (ub >= res.multiplier) ++dominated;
  }
  CHECK(total >= 80);
  CHECK(dominated == total);
}

TEST_CASE("allocate_bandwidth singleton and symmetry") {
  Instance inst = make_instance(1, 7);
  AllocationResult one = allocate_bandwidth(
      {0}, inst.queues, inst.gains, inst.profiles, inst.deadline, inst.tau,
      inst.payload, inst.channel);
  REQUIRE(one.feasible);
  CHECK(one.shares[0] == doctest::Approx(1.0).epsilon(1e-6));

  // Two identical devices split the band evenly.
  Instance twin = make_instance(1, 8);
  twin.profiles.push_back(twin.profiles[0]);
  twin.profiles[1].id = 1;
  twin.gains.conservativeResize(2);
  twin.gains[1] = twin.gains[0];
  twin.queues.conservativeResize(2);
  twin.queues[1] = twin.queues[0];
  AllocationResult pair = allocate_bandwidth(
      {0, 1}, twin.queues, twin.gains, twin.profiles, twin.deadline, twin.tau,
      twin.payload, twin.channel);
  REQUIRE(pair.feasible);
  CHECK(pair.shares[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(pair.shares[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("allocate_bandwidth zero queues pin everyone at theta_min") {
  Instance inst = make_instance(3, 9);
  inst.queues.setZero();
  auto ids = all_ids(inst);
  AllocationResult res = allocate_bandwidth(
      ids, inst.queues, inst.gains, inst.profiles, inst.deadline, inst.tau,
      inst.payload, inst.channel);
  REQUIRE(res.feasible);
  CHECK(res.weighted_energy == 0.0);
  for (int k = 0; k < 3; ++k) {
    auto tmin = min_bandwidth_share(inst.profiles[k], inst.gains[k],
                                    inst.deadline, inst.tau, inst.payload,
                                    inst.channel);
    REQUIRE(tmin.has_value());
    CHECK(res.shares[k] == doctest::Approx(*tmin).epsilon(1e-9));
  }
}

TEST_CASE("allocate_bandwidth reports infeasible sets") {
  // Each member deliverable alone, but the minima exceed the band together:
  // weaken every gain until theta_min lands near 0.5.
  Instance inst = make_instance(3, 11);
  for (int k = 0; k < 3; ++k) {
    for (int guard = 0; guard < 200; ++guard) {
      auto tmin = min_bandwidth_share(inst.profiles[k], inst.gains[k],
                                      inst.deadline, inst.tau, inst.payload,
                                      inst.channel);
      REQUIRE(tmin.has_value());
      if (*tmin >= 0.45) break;
      inst.gains[k] /= 1.2;
    }
  }
  auto ids = all_ids(inst);
  AllocationResult res = allocate_bandwidth(
      ids, inst.queues, inst.gains, inst.profiles, inst.deadline, inst.tau,
      inst.payload, inst.channel);
  CHECK(!res.feasible);

  // A member that cannot deliver even with the whole band also sinks the set.
  Instance weak = make_instance(2, 13);
  weak.gains[1] = 1e-18;
  AllocationResult res2 = allocate_bandwidth(
      {0, 1}, weak.queues, weak.gains, weak.profiles, weak.deadline, weak.tau,
      weak.payload, weak.channel);
  CHECK(!res2.feasible);
}

TEST_CASE("allocate_bandwidth invariants over random instances") {
  int feasible_count = 0;
  for (uint64_t key = 300; key < 400; ++key) {
    Instance inst = make_instance(2 + key % 3, key);
    auto ids = all_ids(inst);
    AllocationResult res = allocate_bandwidth(
        ids, inst.queues, inst.gains, inst.profiles, inst.deadline, inst.tau,
        inst.payload, inst.channel);
    if (!res.feasible) continue;
    ++feasible_count;
    CHECK(std::abs(res.shares.sum() - 1.0) <= 1e-6);
    for (Eigen::Index i = 0; i < res.powers.size(); ++i) {
      CHECK(res.powers[i] <= inst.profiles[ids[i]].max_power + 1e-9);
      CHECK(res.shares[i] > 0.0);
    }
    double recomputed = 0.0;
    for (size_t i = 0; i < ids.size(); ++i) {
      recomputed += inst.queues[ids[i]] * res.energies[i];
    }
    CHECK(res.weighted_energy == doctest::Approx(recomputed).epsilon(1e-12));
  }
  CHECK(feasible_count >= 80);
}

TEST_CASE("allocate_bandwidth leaves the empty set trivially feasible") {
  Instance inst = make_instance(2, 12);
  AllocationResult res = allocate_bandwidth(
      {}, inst.queues, inst.gains, inst.profiles, inst.deadline, inst.tau,
      inst.payload, inst.channel);
  CHECK(res.feasible);
  CHECK(res.devices.empty());
  CHECK(res.weighted_energy == 0.0);
}
