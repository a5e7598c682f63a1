#pragma once

#include <string>
#include <vector>

#include "kfl/harness.hpp"

namespace kfl {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyOptions {
  uint64_t seed = 20240101;
  bool quick = false;  // skip the minute-scale learning-curve checks
};

/// The oracle suite behind `kflsim verify`: independent grid searches,
/// brute-force enumerations and finite differences pitted against the
/// closed-form/algorithmic implementations, plus the end-to-end checks.
std::vector<CheckResult> run_verification(const VerifyOptions& opt = {});

/// Shared desk-scale synthetic configuration used by the end-to-end checks.
ExperimentConfig desk_config(uint64_t seed);

CheckResult verify_overhead_ratio();
CheckResult verify_lambert_identity();
CheckResult verify_allocation_oracle(uint64_t seed);
CheckResult verify_power_identity(uint64_t seed);
CheckResult verify_gradient_check(uint64_t seed);
CheckResult verify_scheduler_oracle(uint64_t seed);
CheckResult verify_energy_bound(uint64_t seed);
CheckResult verify_early_rounds(uint64_t seed);
CheckResult verify_knowledge_benefit(uint64_t seed);
CheckResult verify_determinism(uint64_t seed);
CheckResult verify_queue_evolution(uint64_t seed);

}  // namespace kfl
