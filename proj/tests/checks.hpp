#pragma once

// Finite-difference oracle shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "disent/autodiff.hpp"
#include "disent/rng.hpp"

namespace disent::testing {

inline constexpr double kFdStep = 1e-5;

/// Elementwise relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between `analytic` and central differences of
/// `loss` with respect to every entry of every tensor in `params`.
inline double max_fd_error(std::vector<Tensor*> params, const std::vector<Tensor>& analytic,
                           const std::function<double()>& loss, double step = kFdStep) {
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t]->data.size(); ++i) {
      double& w = params[t]->data[i];
      const double saved = w;
      w = saved + step;
      const double up = loss();
      w = saved - step;
      const double down = loss();
      w = saved;
      worst = std::max(worst, relative_error(analytic[t].data[i], (up - down) / (2.0 * step)));
    }
  }
  return worst;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace disent::testing
