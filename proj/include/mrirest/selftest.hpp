#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mrirest::selftest {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Adjoint dot-product tests of fft2c, apply_mask, expand and reduce.
std::vector<CheckResult> adjoint_checks(std::uint64_t seed, int trials = 100);
// Central-difference gradient checks of the differentiable ops, both gated
// blocks and a two-step cascade (real64, h = 1e-4).
std::vector<CheckResult> gradient_checks(std::uint64_t seed);
// SimpleGate product, LSConv loop equivalence and delta-kernel identity.
std::vector<CheckResult> identity_checks(std::uint64_t seed);
// Data-consistency fixed point and full-mask exactness.
std::vector<CheckResult> data_consistency_checks(std::uint64_t seed);
// SR degradation idempotence, linearity and retained block size.
std::vector<CheckResult> sr_checks(std::uint64_t seed);
// Slice-wise vs volumetric SSIM against a sliding-window loop.
std::vector<CheckResult> ssim_checks(std::uint64_t seed);

std::vector<CheckResult> run_all(std::uint64_t seed);

}  // namespace mrirest::selftest
