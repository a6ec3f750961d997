#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "attrprompt/param_store.hpp"

namespace attrprompt {

struct GradientReport {
  std::string param_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

// Entries whose analytic and numeric gradients are both below this magnitude
// count as agreeing (relative error 0).
inline constexpr double kGradZeroFloor = 1e-10;

// Compares the analytic gradient already stored in store.get(name).grad with
// central differences (f(w+h) - f(w-h)) / 2h, entry by entry. `loss` must
// evaluate the loss from the store's current values without touching its
// gradient slots. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradientReport finite_diff_check(ParamStore& store, std::string_view name,
                                 const std::function<double()>& loss, double h,
                                 double tol_rel);

// Runs finite_diff_check on every entry. `analytic` must run forward and
// backward, filling the store's gradient slots.
std::vector<GradientReport> finite_diff_check_all(ParamStore& store,
                                                  const std::function<void()>& analytic,
                                                  const std::function<double()>& loss,
                                                  double h, double tol_rel);

}  // namespace attrprompt
