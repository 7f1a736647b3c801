#include "regtr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace regtr::ad {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<std::pair<std::string, Tensor<double>>>& inputs, double h) {
  for (const auto& [name, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, t] : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& [name, t] = inputs[k];
    GradCheckEntry e;
    e.name = name;
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = f().item();
      v[i] = orig - h;
      const double fm = f().item();
      v[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double err = relative_error(analytic[k][i], numeric);
      if (err > e.max_rel_error || i == 0) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = analytic[k][i];
        e.numeric = numeric;
      }
    }
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace regtr::ad
