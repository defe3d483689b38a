#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vbc/copula.hpp"
#include "vbc/core/errors.hpp"
#include "vbc/core/stats.hpp"
#include "vbc/dataset.hpp"
#include "vbc/marginal.hpp"
#include "vbc/vine.hpp"

namespace vbc {

//! Ground truth of a five-variable test climate: dewpoint d, precipitation p
//! (zero-inflated), radiation r (zero-inflated), wind speed w and
//! temperature t, linked by a D-vine along d - t - r - p - w.
struct SyntheticSpec
{
  //! additive shift of t
  double shift = 0.0;
  //! multiplicative scale of w
  double scale = 1.0;
  //! zero share of r
  double inflation = 0.3;
  //! Kendall's tau between d and t
  double tau = 0.6;

  static SyntheticSpec reference() { return {}; }
  static SyntheticSpec biased() { return { 2.0, 1.5, 0.5, 0.3 }; }

  //! Parses "shift=2,scale=1.5,inflation=0.5,tau=0.3" on top of the
  //! reference; omitted keys keep reference values.
  static SyntheticSpec parse(const std::string& text)
  {
    SyntheticSpec s;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) {
        continue;
      }
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("bias: expected key=value, got '" + item + "'");
      }
      const auto key = item.substr(0, eq);
      double value;
      try {
        std::size_t used = 0;
        value = std::stod(item.substr(eq + 1), &used);
        if (used != item.size() - eq - 1) {
          throw std::invalid_argument(item);
        }
      } catch (const std::exception&) {
        throw ConfigError("bias: '" + key + "' needs a numeric value");
      }
      if (key == "shift") {
        s.shift = value;
      } else if (key == "scale") {
        s.scale = value;
      } else if (key == "inflation") {
        s.inflation = value;
      } else if (key == "tau") {
        s.tau = value;
      } else {
        throw ConfigError("bias: unknown key '" + key + "' (shift, scale, inflation, tau)");
      }
    }
    if (!(s.scale > 0.0)) {
      throw ConfigError("bias: scale must be positive");
    }
    if (!(s.inflation >= 0.0 && s.inflation < 1.0)) {
      throw ConfigError("bias: inflation must lie in [0, 1)");
    }
    if (!(s.tau > -1.0 && s.tau < 1.0)) {
      throw ConfigError("bias: tau must lie in (-1, 1)");
    }
    return s;
  }
};

namespace synthetic {

inline constexpr std::size_t dim = 5;
inline constexpr std::size_t d = 0, p = 1, r = 2, w = 3, t = 4;
inline constexpr double precipitation_zero_share = 0.4;

inline std::vector<std::string>
names()
{
  return { "d", "p", "r", "w", "t" };
}

inline std::vector<SupportKind>
kinds()
{
  return { SupportKind::interval, SupportKind::zero_inflated, SupportKind::zero_inflated,
           SupportKind::nonnegative, SupportKind::interval };
}

inline std::vector<std::string>
units()
{
  return { "degC", "kg/m2", "W/m2", "m/s", "degC" };
}

inline double
rho_from_tau(double tau)
{
  return std::sin(stats::pi * tau / 2.0);
}

inline VineCopula
copula(const SyntheticSpec& spec)
{
  auto s = VineStructure::dvine({ d, t, r, p, w });
  std::vector<std::vector<BivariateCopula>> pairs(s.num_trees());
  for (std::size_t k = 0; k < s.num_trees(); ++k) {
    pairs[k].assign(s.tree(k).size(), BivariateCopula::independence());
  }
  pairs[0][0] = BivariateCopula::gaussian(rho_from_tau(spec.tau));
  pairs[0][1] = BivariateCopula::gumbel(1.0 / (1.0 - 0.4));
  pairs[0][2] = BivariateCopula::gaussian(rho_from_tau(-0.3));
  pairs[0][3] = BivariateCopula::clayton(2.0 * 0.25 / 0.75);
  pairs[1][0] = BivariateCopula::gaussian(rho_from_tau(0.15));
  return VineCopula(std::move(s), std::move(pairs));
}

inline double
zero_inflated_exponential_quantile(double u, double zero_share, double mean)
{
  if (u <= zero_share) {
    return 0.0;
  }
  const double v = (u - zero_share) / (1.0 - zero_share);
  return -mean * std::log1p(-std::min(v, 1.0 - 1e-16));
}

//! Maps a row on the uniform scale to the variable scale.
inline void
to_values(const SyntheticSpec& spec, const double* u, double* x)
{
  x[d] = 2.0 + 4.0 * stats::qnorm(u[d]);
  x[p] = zero_inflated_exponential_quantile(u[p], precipitation_zero_share, 1.5);
  x[r] = zero_inflated_exponential_quantile(u[r], spec.inflation, 180.0);
  x[w] = spec.scale * 3.0 * std::exp(0.5 * stats::qnorm(u[w]));
  x[t] = 8.0 + spec.shift + 6.0 * stats::qnorm(u[t]);
}

} // namespace synthetic

//! Draws n rows from the synthetic climate (columns d, p, r, w, t).
inline Eigen::MatrixXd
synthetic_sample(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed)
{
  const auto u = synthetic::copula(spec).simulate_uniform(n, seed);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(synthetic::dim));
  double uu[synthetic::dim], xx[synthetic::dim];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      uu[j] = std::clamp(u(i, j), 1e-15, 1.0 - 1e-15);
    }
    synthetic::to_values(spec, uu, xx);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      x(i, j) = xx[j];
    }
  }
  return x;
}

//! Synthetic ensemble on a 3-hourly grid: `steps` time steps per member
//! starting at `start`, rows drawn independently per member.
inline ClimateTable
synthetic_table(const SyntheticSpec& spec, const std::vector<std::int64_t>& members,
                std::size_t steps, std::uint64_t seed,
                const Timestamp& start = Timestamp{ 2001, 1, 1, 0, 0, 0 })
{
  std::vector<Variable> vars;
  const auto names = synthetic::names();
  const auto kinds = synthetic::kinds();
  const auto units = synthetic::units();
  for (std::size_t j = 0; j < synthetic::dim; ++j) {
    vars.push_back({ names[j], kinds[j], units[j] });
  }
  const auto n = members.size() * steps;
  std::vector<Timestamp> times;
  std::vector<std::int64_t> ids;
  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(synthetic::dim));
  Eigen::Index row = 0;
  for (auto m : members) {
    const auto x = synthetic_sample(spec, steps, combine_seed(seed, static_cast<std::uint64_t>(m)));
    Timestamp t = start;
    for (std::size_t s = 0; s < steps; ++s, ++row) {
      times.push_back(t);
      ids.push_back(m);
      values.row(row) = x.row(static_cast<Eigen::Index>(s));
      t = t.plus_hours(3);
    }
  }
  return ClimateTable(std::move(vars), std::move(times), std::move(ids), std::move(values));
}

} // namespace vbc
