#include "teller/gradcheck.hpp"

#include <cmath>

namespace teller {

GradCheckReport check_gradients(const ParamRefs& params, const std::function<double()>& loss,
                                const Gradients& analytic, double step, double floor) {
  if (analytic.size() != params.size()) {
    throw ValidationError("check_gradients: analytic gradients do not match parameter list");
  }
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& value = params[pi]->value;
    const Matrix& g = analytic[pi];
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      double& slot = value.data()[i];
      const double saved = slot;
      slot = saved + step;
      const double up = loss();
      slot = saved - step;
      const double down = loss();
      slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = g.data()[i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      ++report.entries_checked;
      if (rel > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_param = params[pi]->name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace teller
