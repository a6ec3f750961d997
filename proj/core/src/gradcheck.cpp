#include "attrprompt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "attrprompt/error.hpp"

namespace attrprompt {

GradientReport finite_diff_check(ParamStore& store, std::string_view name,
                                 const std::function<double()>& loss, double h,
                                 double tol_rel) {
  require(h > 0.0, ErrorKind::kInvalidArgument, "finite-difference step must be positive");
  require(tol_rel > 0.0, ErrorKind::kInvalidArgument, "tolerance must be positive");
  Parameter& p = store.get(name);
  const Tensor analytic = p.grad;

  GradientReport report;
  report.param_name = std::string(name);
  auto& values = p.value.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + h;
    const double plus = loss();
    values[i] = original - h;
    const double minus = loss();
    values[i] = original;
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic[i];
    require(std::isfinite(numeric), ErrorKind::kNumericFailure,
            "non-finite finite difference for " + report.param_name);
    const double abs_err = std::abs(a - numeric);
    const double mag = std::max({std::abs(a), std::abs(numeric)});
    const double rel = mag < kGradZeroFloor ? 0.0 : abs_err / std::max(mag, 1e-8);
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    report.max_rel_err = std::max(report.max_rel_err, rel);
    ++report.checked;
  }
  report.pass = report.max_rel_err < tol_rel;
  return report;
}

std::vector<GradientReport> finite_diff_check_all(ParamStore& store,
                                                  const std::function<void()>& analytic,
                                                  const std::function<double()>& loss,
                                                  double h, double tol_rel) {
  analytic();
  std::vector<GradientReport> reports;
  reports.reserve(store.size());
  for (std::size_t k = 0; k < store.size(); ++k) {
    const std::string name = store.entries()[k].name;
    reports.push_back(finite_diff_check(store, name, loss, h, tol_rel));
  }
  return reports;
}

}  // namespace attrprompt
