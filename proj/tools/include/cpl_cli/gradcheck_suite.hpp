#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cpl/gradcheck.hpp"

namespace cpl::cli {

inline constexpr double kGradcheckTolerance = 1e-4;

struct CheckResult {
  std::string name;
  GradcheckReport report;
};

/// Differentiable ops that are linear in their checked argument.
std::vector<CheckResult> linear_checks(std::uint64_t seed);
/// Every differentiable op, including the sparse gate and the loss terms.
std::vector<CheckResult> op_checks(std::uint64_t seed);
/// Full CPR loss on a tiny model (16×16 crops, n=3, k=1, m=2), one check per
/// parameter tensor and trial, each trial with its own seed and random
/// parameter point.
std::vector<CheckResult> end2end_checks(std::uint64_t seed, std::size_t trials);
/// Negative control: an op whose backward rule is deliberately wrong.
CheckResult corrupted_fixture_check(std::uint64_t seed);

double worst_error(const std::vector<CheckResult>& results);

}  // namespace cpl::cli
