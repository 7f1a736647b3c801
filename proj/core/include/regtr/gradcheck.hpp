#pragma once

#include "regtr/tensor.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace regtr::ad {

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;  // at worst_index
  double numeric = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences with step h, for every element of every named input. `f` must
/// rebuild its graph from the inputs on each call.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<std::pair<std::string, Tensor<double>>>& inputs, double h = 1e-4);

}  // namespace regtr::ad
