#pragma once

#include <cmath>
#include <vector>

#include "vbc/core/stats.hpp"
#include "vbc/marginal.hpp"

namespace vbc::testing {

//! Standard normal margin tabulated on a fine grid.
inline MixtureMarginal
normal_margin(double mean = 0.0, double sd = 1.0)
{
  std::vector<double> knots, dens;
  for (int k = 0; k <= 6000; ++k) {
    const double z = mean + sd * (-9.0 + 18.0 * k / 6000.0);
    knots.push_back(z);
    dens.push_back(stats::dnorm((z - mean) / sd) / sd);
  }
  auto g = GridDensity::normalized(knots, dens);
  return MixtureMarginal(SupportKind::interval, {}, g.knots(), g.densities(), 0.0);
}

//! p * delta_0 + (1 - p) * Exp(rate), tabulated on the log scale.
inline MixtureMarginal
zero_inflated_exponential(double p = 0.4, double rate = 1.0)
{
  std::vector<double> knots, dens;
  for (int k = 0; k <= 6000; ++k) {
    const double z = -25.0 + 29.0 * k / 6000.0 - std::log(rate);
    knots.push_back(z);
    const double x = std::exp(z);
    dens.push_back(rate * x * std::exp(-rate * x));
  }
  auto g = GridDensity::normalized(knots, dens);
  if (p == 0.0) {
    return MixtureMarginal(SupportKind::nonnegative, {}, g.knots(), g.densities(), 0.0);
  }
  return MixtureMarginal(SupportKind::zero_inflated, { { 0.0, p } }, g.knots(), g.densities(),
                         0.0);
}

} // namespace vbc::testing
