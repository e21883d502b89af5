#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dosepred/tensor.hpp"

namespace dosepred {

struct GradCheckResult {
  int checked = 0;
  int passed = 0;
  double max_rel_err = 0.0;
  std::string worst_param;

  double pass_fraction() const {
    return checked == 0 ? 1.0 : static_cast<double>(passed) / checked;
  }
};

/// Central finite-difference check of sampled parameter entries against the
/// analytic gradient from one taped backward pass. `loss_fn` must rebuild the
/// forward pass from the current parameter values on the given tape.
/// corrupt_analytic perturbs the analytic gradients first (negative control).
GradCheckResult gradcheck_params(
    std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Tensor(Tape&)>& loss_fn, int samples, double step,
    double tolerance, std::uint64_t seed, bool corrupt_analytic = false);

double fd_rel_err(double analytic, double numeric);

}  // namespace dosepred
