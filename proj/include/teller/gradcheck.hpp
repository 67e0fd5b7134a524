#pragma once

#include <functional>
#include <string>

#include "teller/common.hpp"

namespace teller {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Central-difference check of `analytic` against `loss` for every entry of
// every parameter. Relative error is |a - n| / max(|a| + |n|, floor).
// `loss` is re-evaluated with one entry perturbed at a time and must read
// parameter values live.
GradCheckReport check_gradients(const ParamRefs& params, const std::function<double()>& loss,
                                const Gradients& analytic, double step = 1e-5,
                                double floor = 1e-6);

}  // namespace teller
