#pragma once

#include "featlens/tensor.hpp"

namespace featlens {

// Central-difference gradient verification, run in double precision. Returns
// the max over coordinates of |analytic - numeric| / max(1, |analytic|).
// Callers must supply a point away from non-differentiable kinks (ReLU zeros,
// top-K ties) by a margin larger than eps.
inline double grad_check(const std::function<DTensor(const DTensor&)>& f, const DTensor& point,
                         double eps = 1e-5) {
  DTensor x = point.detach(true);
  DTensor y = f(x);
  check(y.size() == 1, "grad_check: function must be scalar-valued");
  backward(y);
  check(x.has_grad(), "grad_check: function does not depend on the point");
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<double> base(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (size_t i = 0; i < base.size(); ++i) {
    auto probe = [&](double delta) {
      std::vector<double> d = base;
      d[i] += delta;
      DTensor xp = DTensor::from_data(x.shape(), std::move(d));
      return f(xp).item();
    };
    const double numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace featlens
