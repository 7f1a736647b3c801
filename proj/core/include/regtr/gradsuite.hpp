#pragma once

#include "regtr/gradcheck.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace regtr {

struct GradSuiteCase {
  std::string name;
  ad::GradCheckReport report;
};

struct GradSuiteOptions {
  std::uint64_t seed = 7;
  double step = 1e-5;
};

/// Finite-difference checks, in float64 on small random inputs, for every
/// tensor op and for the attention, encoder layer, backbone, heads and losses.
/// Each case reduces its output to a scalar with a fixed random weighting.
/// Inputs to kinked ops (relu, abs, clamp, max) are kept away from the kinks.
std::vector<GradSuiteCase> run_grad_suite(const GradSuiteOptions& options = {});

}  // namespace regtr
