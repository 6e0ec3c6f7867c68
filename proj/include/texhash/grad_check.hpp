#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "texhash/tensor.hpp"

namespace texhash {

struct GradCheckResult {
  // max_i |analytic_i - numeric_i| / max(1, |numeric_i|); +inf when any
  // estimate is non-finite.
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
  std::string message;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

// Compares the reverse-mode gradient of scalar f at `point` with central
// differences of step h.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double h = 1e-5);

// Same check with respect to every element of each tensor in `params`; `loss`
// rebuilds the graph from the current parameter values on every call.
GradCheckResult grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                  double h = 1e-5);

}  // namespace texhash
