#include "texhash/grad_check.hpp"

#include <cmath>
#include <limits>

namespace texhash {

namespace {

void fold(GradCheckResult& r, std::size_t index, double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
    if (r.finite) {
      r.message = "non-finite estimate at coordinate " + std::to_string(index) + " (analytic " +
                  std::to_string(analytic) + ", numeric " + std::to_string(numeric) + ")";
    }
    r.finite = false;
    r.max_rel_error = std::numeric_limits<double>::infinity();
    r.worst_index = index;
    return;
  }
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
  if (r.finite && err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = index;
  }
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           double h) {
  Tensor x = point.clone();
  x.set_requires_grad(true);
  return grad_check_params([&] { return f(x); }, {x}, h);
}

GradCheckResult grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                  double h) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  GradCheckResult result;
  std::size_t offset = 0;
  for (auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    auto values = p.data_mut();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      // Divide by the step actually realised in floating point so linear
      // functions are differentiated exactly whenever their sums are exact.
      const double hi = saved + h, lo = saved - h;
      values[i] = hi;
      const double up = loss().item();
      values[i] = lo;
      const double down = loss().item();
      values[i] = saved;
      fold(result, offset + i, analytic[i], (up - down) / (hi - lo));
    }
    offset += values.size();
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace texhash
