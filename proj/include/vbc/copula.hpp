#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "json.hpp"

#include "vbc/core/errors.hpp"
#include "vbc/core/random.hpp"
#include "vbc/core/stats.hpp"

namespace vbc {

//! Value of a (conditional) distribution function at an observation
//! together with its left limit. Discrete observations sit on a jump.
struct PseudoObs
{
  double u{ 0.5 };
  double u_left{ 0.5 };
  bool discrete{ false };

  static PseudoObs continuous(double u) { return { u, u, false }; }
  static PseudoObs mixed(double u, double u_left, bool discrete)
  {
    return { u, u_left, discrete };
  }

  double jump() const { return u - u_left; }

  //! u_left + w (u - u_left)
  double jitter(double w) const { return discrete ? u_left + w * (u - u_left) : u; }
};

//! Jumps below this size are treated as continuity points.
inline constexpr double min_jump = 1e-12;

enum class CopulaFamily
{
  independence,
  gaussian,
  clayton,
  gumbel,
  frank,
  checkerboard
};

inline std::string
to_string(CopulaFamily f)
{
  switch (f) {
    case CopulaFamily::independence:
      return "independence";
    case CopulaFamily::gaussian:
      return "gaussian";
    case CopulaFamily::clayton:
      return "clayton";
    case CopulaFamily::gumbel:
      return "gumbel";
    case CopulaFamily::frank:
      return "frank";
    case CopulaFamily::checkerboard:
      return "checkerboard";
  }
  return "independence";
}

inline CopulaFamily
copula_family_from_string(const std::string& s)
{
  for (auto f : { CopulaFamily::independence, CopulaFamily::gaussian,
                  CopulaFamily::clayton, CopulaFamily::gumbel, CopulaFamily::frank,
                  CopulaFamily::checkerboard }) {
    if (to_string(f) == s) {
      return f;
    }
  }
  throw ConfigError("unknown copula family '" + s + "'");
}

inline std::vector<CopulaFamily>
all_families()
{
  return { CopulaFamily::independence, CopulaFamily::gaussian, CopulaFamily::clayton,
           CopulaFamily::gumbel,       CopulaFamily::frank,    CopulaFamily::checkerboard };
}

namespace detail {

inline constexpr double rho_cap = 0.999;
inline constexpr double theta_cap = 50.0;
inline constexpr double frank_cap = 35.0;

// log(exp(a) + exp(b) - 1) for a, b >= 0
inline double
log_sum_exp_m1(double a, double b)
{
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m) - std::exp(-m));
}

inline double
debye1(double x)
{
  if (x == 0.0) {
    return 1.0;
  }
  auto f = [](double t) { return t == 0.0 ? 1.0 : t / std::expm1(t); };
  const double integral =
    boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, std::fabs(x), 5, 1e-14);
  const double d = integral / std::fabs(x);
  // D1(-x) = D1(x) + x / 2
  return x > 0.0 ? d : d + std::fabs(x) / 2.0;
}

inline double
frank_tau(double theta)
{
  if (std::fabs(theta) < 1e-8) {
    return theta / 9.0;
  }
  return 1.0 - 4.0 / theta + 4.0 * debye1(theta) / theta;
}

} // namespace detail

//! Bivariate copula: parametric family with rotation, or a checkerboard
//! copula given by an m x m doubly stochastic mass grid.
class BivariateCopula
{
public:
  BivariateCopula() = default;

  static BivariateCopula independence() { return BivariateCopula(); }

  static BivariateCopula gaussian(double rho)
  {
    if (!(std::fabs(rho) < 1.0)) {
      throw std::invalid_argument("gaussian copula needs |rho| < 1");
    }
    BivariateCopula c;
    c.family_ = CopulaFamily::gaussian;
    c.param_ = rho;
    return c;
  }

  static BivariateCopula clayton(double theta, int rotation = 0)
  {
    if (!(theta > 0.0)) {
      throw std::invalid_argument("clayton copula needs theta > 0");
    }
    BivariateCopula c;
    c.family_ = CopulaFamily::clayton;
    c.param_ = theta;
    c.rotation_ = checked_rotation(rotation);
    return c;
  }

  static BivariateCopula gumbel(double theta, int rotation = 0)
  {
    if (!(theta >= 1.0)) {
      throw std::invalid_argument("gumbel copula needs theta >= 1");
    }
    BivariateCopula c;
    c.family_ = CopulaFamily::gumbel;
    c.param_ = theta;
    c.rotation_ = checked_rotation(rotation);
    return c;
  }

  static BivariateCopula frank(double theta)
  {
    if (theta == 0.0 || !std::isfinite(theta)) {
      throw std::invalid_argument("frank copula needs a finite nonzero theta");
    }
    BivariateCopula c;
    c.family_ = CopulaFamily::frank;
    c.param_ = theta;
    return c;
  }

  //! `mass` is row-major m x m, rows indexing the first argument. Must be
  //! doubly stochastic (row and column sums 1/m).
  static BivariateCopula checkerboard(std::vector<double> mass, std::size_t m)
  {
    if (m == 0 || mass.size() != m * m) {
      throw std::invalid_argument("checkerboard grid must be m x m");
    }
    BivariateCopula c;
    c.family_ = CopulaFamily::checkerboard;
    c.m_ = m;
    c.mass_ = std::move(mass);
    c.build_prefix();
    return c;
  }

  CopulaFamily family() const { return family_; }
  int rotation() const { return rotation_; }
  double parameter() const { return param_; }
  std::size_t resolution() const { return m_; }
  const std::vector<double>& grid() const { return mass_; }

  std::size_t num_parameters() const
  {
    switch (family_) {
      case CopulaFamily::independence:
        return 0;
      case CopulaFamily::checkerboard:
        return (m_ - 1) * (m_ - 1);
      default:
        return 1;
    }
  }

  //! Copula distribution function.
  double cdf(double u, double v) const
  {
    u = std::clamp(u, 0.0, 1.0);
    v = std::clamp(v, 0.0, 1.0);
    if (u == 0.0 || v == 0.0) {
      return 0.0;
    }
    if (u == 1.0) {
      return v;
    }
    if (v == 1.0) {
      return u;
    }
    double c;
    switch (rotation_) {
      case 90:
        c = v - cdf0(1.0 - u, v);
        break;
      case 180:
        c = u + v - 1.0 + cdf0(1.0 - u, 1.0 - v);
        break;
      case 270:
        c = u - cdf0(u, 1.0 - v);
        break;
      default:
        c = cdf0(u, v);
    }
    return std::clamp(c, std::max(0.0, u + v - 1.0), std::min(u, v));
  }

  //! Lebesgue density of the copula.
  double pdf(double u, double v) const
  {
    u = clamp_open(u);
    v = clamp_open(v);
    switch (rotation_) {
      case 90:
        return pdf0(1.0 - u, v);
      case 180:
        return pdf0(1.0 - u, 1.0 - v);
      case 270:
        return pdf0(u, 1.0 - v);
      default:
        return pdf0(u, v);
    }
  }

  //! dC/du, the distribution of the second argument given the first.
  double d1(double u, double v) const
  {
    v = std::clamp(v, 0.0, 1.0);
    if (v == 0.0) {
      return 0.0;
    }
    if (v == 1.0) {
      return 1.0;
    }
    u = clamp_open(u);
    double d;
    switch (rotation_) {
      case 90:
        d = d1_0(1.0 - u, v);
        break;
      case 180:
        d = 1.0 - d1_0(1.0 - u, 1.0 - v);
        break;
      case 270:
        d = 1.0 - d1_0(u, 1.0 - v);
        break;
      default:
        d = d1_0(u, v);
    }
    return std::clamp(d, 0.0, 1.0);
  }

  //! dC/dv, the distribution of the first argument given the second.
  double d2(double u, double v) const
  {
    u = std::clamp(u, 0.0, 1.0);
    if (u == 0.0) {
      return 0.0;
    }
    if (u == 1.0) {
      return 1.0;
    }
    v = clamp_open(v);
    double d;
    switch (rotation_) {
      case 90:
        d = 1.0 - d2_0(1.0 - u, v);
        break;
      case 180:
        d = 1.0 - d2_0(1.0 - u, 1.0 - v);
        break;
      case 270:
        d = d2_0(u, 1.0 - v);
        break;
      default:
        d = d2_0(u, v);
    }
    return std::clamp(d, 0.0, 1.0);
  }

  //! Population Kendall's tau.
  double tau() const
  {
    double t = 0.0;
    switch (family_) {
      case CopulaFamily::independence:
        return 0.0;
      case CopulaFamily::gaussian:
        return 2.0 / stats::pi * std::asin(param_);
      case CopulaFamily::clayton:
        t = param_ / (param_ + 2.0);
        break;
      case CopulaFamily::gumbel:
        t = 1.0 - 1.0 / param_;
        break;
      case CopulaFamily::frank:
        return detail::frank_tau(param_);
      case CopulaFamily::checkerboard:
        return checkerboard_tau();
    }
    return (rotation_ == 90 || rotation_ == 270) ? -t : t;
  }

  double loglik(std::span<const double> u, std::span<const double> v) const
  {
    if (family_ == CopulaFamily::independence) {
      return 0.0;
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      ll += std::log(std::max(pdf(u[i], v[i]), 1e-300));
    }
    return ll;
  }

  std::string str() const
  {
    std::string s = to_string(family_);
    if (family_ == CopulaFamily::checkerboard) {
      return s + "(m=" + std::to_string(m_) + ")";
    }
    if (family_ != CopulaFamily::independence) {
      s += "(" + std::to_string(param_);
      if (rotation_ != 0) {
        s += ", rot=" + std::to_string(rotation_);
      }
      s += ")";
    }
    return s;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["family"] = to_string(family_);
    j["rotation"] = rotation_;
    if (family_ == CopulaFamily::checkerboard) {
      j["resolution"] = m_;
      j["grid"] = mass_;
    } else if (family_ != CopulaFamily::independence) {
      j["parameters"] = { param_ };
    }
    return j;
  }

  static BivariateCopula from_json(const nlohmann::json& j)
  {
    const auto family = copula_family_from_string(j.at("family").get<std::string>());
    const int rot = j.value("rotation", 0);
    switch (family) {
      case CopulaFamily::independence:
        return independence();
      case CopulaFamily::gaussian:
        return gaussian(j.at("parameters").at(0).get<double>());
      case CopulaFamily::clayton:
        return clayton(j.at("parameters").at(0).get<double>(), rot);
      case CopulaFamily::gumbel:
        return gumbel(j.at("parameters").at(0).get<double>(), rot);
      case CopulaFamily::frank:
        return frank(j.at("parameters").at(0).get<double>());
      case CopulaFamily::checkerboard:
        return checkerboard(j.at("grid").get<std::vector<double>>(),
                            j.at("resolution").get<std::size_t>());
    }
    return independence();
  }

private:
  CopulaFamily family_{ CopulaFamily::independence };
  int rotation_{ 0 };
  double param_{ 0.0 };
  std::size_t m_{ 0 };
  std::vector<double> mass_;
  std::vector<double> prefix_; // (m+1) x (m+1) cumulative masses

  static int checked_rotation(int r)
  {
    if (r != 0 && r != 90 && r != 180 && r != 270) {
      throw std::invalid_argument("rotation must be 0, 90, 180 or 270");
    }
    return r;
  }

  static double clamp_open(double u) { return std::clamp(u, 1e-15, 1.0 - 1e-15); }

  void build_prefix()
  {
    const std::size_t s = m_ + 1;
    prefix_.assign(s * s, 0.0);
    for (std::size_t i = 1; i <= m_; ++i) {
      for (std::size_t j = 1; j <= m_; ++j) {
        prefix_[i * s + j] = mass_[(i - 1) * m_ + (j - 1)] + prefix_[(i - 1) * s + j] +
                             prefix_[i * s + j - 1] - prefix_[(i - 1) * s + j - 1];
      }
    }
  }

  double S(std::size_t i, std::size_t j) const { return prefix_[i * (m_ + 1) + j]; }

  // cell index and in-cell fraction for a coordinate
  std::pair<std::size_t, double> cell(double u) const
  {
    const double a = u * static_cast<double>(m_);
    auto i = static_cast<std::size_t>(std::floor(a));
    if (i >= m_) {
      i = m_ - 1;
    }
    return { i, a - static_cast<double>(i) };
  }

  double checkerboard_tau() const
  {
    double acc = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t j = 0; j < m_; ++j) {
        const double avg = 0.25 * (S(i, j) + S(i + 1, j) + S(i, j + 1) + S(i + 1, j + 1));
        acc += mass_[i * m_ + j] * avg;
      }
    }
    return 4.0 * acc - 1.0;
  }

  double cdf0(double u, double v) const
  {
    switch (family_) {
      case CopulaFamily::independence:
        return u * v;
      case CopulaFamily::gaussian:
        return stats::pbvnorm(stats::qnorm(u), stats::qnorm(v), param_);
      case CopulaFamily::clayton: {
        const double a = -param_ * std::log(u);
        const double b = -param_ * std::log(v);
        return std::exp(-detail::log_sum_exp_m1(a, b) / param_);
      }
      case CopulaFamily::gumbel: {
        const double x = -std::log(u), y = -std::log(v);
        return std::exp(-std::pow(std::pow(x, param_) + std::pow(y, param_), 1.0 / param_));
      }
      case CopulaFamily::frank: {
        const double a = std::expm1(-param_ * u);
        const double b = std::expm1(-param_ * v);
        const double c = std::expm1(-param_);
        return -std::log1p(a * b / c) / param_;
      }
      case CopulaFamily::checkerboard: {
        const auto [i, s] = cell(u);
        const auto [j, t] = cell(v);
        return (1 - s) * (1 - t) * S(i, j) + s * (1 - t) * S(i + 1, j) +
               (1 - s) * t * S(i, j + 1) + s * t * S(i + 1, j + 1);
      }
    }
    return u * v;
  }

  double pdf0(double u, double v) const
  {
    switch (family_) {
      case CopulaFamily::independence:
        return 1.0;
      case CopulaFamily::gaussian: {
        const double x = stats::qnorm(u), y = stats::qnorm(v);
        const double r = param_, r2 = r * r;
        return std::exp(-(r2 * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * (1.0 - r2))) /
               std::sqrt(1.0 - r2);
      }
      case CopulaFamily::clayton: {
        const double th = param_;
        const double lu = std::log(u), lv = std::log(v);
        const double ls = detail::log_sum_exp_m1(-th * lu, -th * lv);
        return std::exp(std::log1p(th) + (-th - 1.0) * (lu + lv) + (-1.0 / th - 2.0) * ls);
      }
      case CopulaFamily::gumbel: {
        const double th = param_;
        const double x = -std::log(u), y = -std::log(v);
        const double a = std::pow(x, th) + std::pow(y, th);
        const double l = std::pow(a, 1.0 / th);
        const double logc = -l - std::log(u) - std::log(v) + (th - 1.0) * std::log(x * y) +
                            (2.0 / th - 2.0) * std::log(a) + std::log1p((th - 1.0) / l);
        return std::exp(logc);
      }
      case CopulaFamily::frank: {
        const double th = param_;
        const double a = std::expm1(-th * u);
        const double b = std::expm1(-th * v);
        const double c = std::expm1(-th);
        const double den = c + a * b;
        return -th * c * std::exp(-th * (u + v)) / (den * den);
      }
      case CopulaFamily::checkerboard: {
        const auto [i, s] = cell(u);
        const auto [j, t] = cell(v);
        return static_cast<double>(m_ * m_) * mass_[i * m_ + j];
      }
    }
    return 1.0;
  }

  // dC0/du
  double d1_0(double u, double v) const
  {
    switch (family_) {
      case CopulaFamily::independence:
        return v;
      case CopulaFamily::gaussian:
        return stats::pnorm((stats::qnorm(v) - param_ * stats::qnorm(u)) /
                            std::sqrt(1.0 - param_ * param_));
      case CopulaFamily::clayton: {
        // (1 + u^th (v^-th - 1))^(-(1 + th) / th)
        const double th = param_;
        const double lt = th * std::log(u) + std::log(std::expm1(-th * std::log(v)));
        return std::exp(-(1.0 + th) / th * std::log1p(std::exp(lt)));
      }
      case CopulaFamily::gumbel: {
        const double th = param_;
        const double x = -std::log(u), y = -std::log(v);
        const double a = std::pow(x, th) + std::pow(y, th);
        const double l = std::pow(a, 1.0 / th);
        return std::exp(-l + (1.0 / th - 1.0) * std::log(a) + (th - 1.0) * std::log(x) + x);
      }
      case CopulaFamily::frank: {
        const double th = param_;
        const double a = std::expm1(-th * u);
        const double b = std::expm1(-th * v);
        const double c = std::expm1(-th);
        return std::exp(-th * u) * b / (c + a * b);
      }
      case CopulaFamily::checkerboard: {
        const auto [i, s] = cell(u);
        const auto [j, t] = cell(v);
        return static_cast<double>(m_) *
               ((1 - t) * (S(i + 1, j) - S(i, j)) + t * (S(i + 1, j + 1) - S(i, j + 1)));
      }
    }
    return v;
  }

  // dC0/dv
  double d2_0(double u, double v) const
  {
    if (family_ == CopulaFamily::checkerboard) {
      const auto [i, s] = cell(u);
      const auto [j, t] = cell(v);
      return static_cast<double>(m_) *
             ((1 - s) * (S(i, j + 1) - S(i, j)) + s * (S(i + 1, j + 1) - S(i + 1, j)));
    }
    // remaining families are exchangeable
    return d1_0(v, u);
  }
};

namespace detail {

inline void
check_conditioner(const PseudoObs& c)
{
  if (c.discrete && !(c.jump() >= min_jump)) {
    throw DomainError("discrete pseudo-observation with jump below 1e-12 (u=" +
                      std::to_string(c.u) + ", u_left=" + std::to_string(c.u_left) + ")");
  }
}

} // namespace detail

//! Generalized copula density with respect to the mixed dominating measure:
//! rectangle probabilities for discrete coordinates, partial derivatives
//! for mixed ones, and the Lebesgue copula density when both are continuous.
inline double
gen_density(const BivariateCopula& c, const PseudoObs& a, const PseudoObs& b)
{
  detail::check_conditioner(a);
  detail::check_conditioner(b);
  if (c.family() == CopulaFamily::independence) {
    return 1.0;
  }
  if (a.discrete && b.discrete) {
    const double rect = c.cdf(a.u, b.u) - c.cdf(a.u, b.u_left) - c.cdf(a.u_left, b.u) +
                        c.cdf(a.u_left, b.u_left);
    return std::max(rect, 0.0) / (a.jump() * b.jump());
  }
  if (a.discrete) {
    return std::max(c.d2(a.u, b.u) - c.d2(a.u_left, b.u), 0.0) / a.jump();
  }
  if (b.discrete) {
    return std::max(c.d1(a.u, b.u) - c.d1(a.u, b.u_left), 0.0) / b.jump();
  }
  return c.pdf(a.u, b.u);
}

//! Conditional distribution function. direction 1: first argument given
//! the second; direction 2: second given the first. Only `target.u` enters.
inline double
hfunc(const BivariateCopula& c, int direction, const PseudoObs& target,
      const PseudoObs& conditioner)
{
  detail::check_conditioner(conditioner);
  const double t = target.u;
  if (c.family() == CopulaFamily::independence) {
    return std::clamp(t, 0.0, 1.0);
  }
  double h;
  if (direction == 1) {
    h = conditioner.discrete
          ? (c.cdf(t, conditioner.u) - c.cdf(t, conditioner.u_left)) / conditioner.jump()
          : c.d2(t, conditioner.u);
  } else if (direction == 2) {
    h = conditioner.discrete
          ? (c.cdf(conditioner.u, t) - c.cdf(conditioner.u_left, t)) / conditioner.jump()
          : c.d1(conditioner.u, t);
  } else {
    throw std::invalid_argument("hfunc direction must be 1 or 2");
  }
  return std::clamp(h, 0.0, 1.0);
}

//! Inverts hfunc in the target argument by bisection.
inline double
hfunc_inverse(const BivariateCopula& c, int direction, double v,
              const PseudoObs& conditioner, double tol = 1e-10,
              int max_iter = 200)
{
  v = std::clamp(v, 0.0, 1.0);
  if (c.family() == CopulaFamily::independence) {
    return v;
  }
  auto h = [&](double u) {
    return hfunc(c, direction, PseudoObs::continuous(u), conditioner);
  };
  double lo = 0.0, hi = 1.0;
  double h_lo = h(lo), h_hi = h(hi);
  if (h_lo > h_hi + 1e-12) {
    throw DomainError("non-monotone h-function for " + c.str() + ": h(0)=" +
                      std::to_string(h_lo) + " > h(1)=" + std::to_string(h_hi));
  }
  if (v <= h_lo) {
    return lo;
  }
  if (v >= h_hi) {
    return hi;
  }
  for (int it = 0; it < max_iter && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double hm = h(mid);
    if (hm < h_lo - 1e-12 || hm > h_hi + 1e-12) {
      throw DomainError("non-monotone h-function for " + c.str() + " near u=" +
                        std::to_string(mid));
    }
    if (hm == v) {
      return mid;
    }
    if (hm < v) {
      lo = mid;
      h_lo = hm;
    } else {
      hi = mid;
      h_hi = hm;
    }
  }
  return 0.5 * (lo + hi);
}

struct TauResult
{
  double tau{ 0.0 };
  bool degenerate{ false };
};

//! Kendall's tau of jitter-resolved pseudo-observations.
inline TauResult
kendall_tau(std::span<const PseudoObs> a, std::span<const PseudoObs> b,
            std::uint64_t seed)
{
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("kendall_tau needs two equally sized samples, n >= 2");
  }
  auto constant = [](std::span<const PseudoObs> x) {
    return std::all_of(x.begin(), x.end(), [&](const PseudoObs& o) {
      return o.u == x[0].u && o.u_left == x[0].u_left;
    });
  };
  if (constant(a) || constant(b)) {
    return { 0.0, true };
  }
  Rng rng(seed);
  std::vector<double> ua(a.size()), ub(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ua[i] = a[i].jitter(rng.uniform());
    ub[i] = b[i].jitter(rng.uniform());
  }
  return { stats::kendall_tau_b(ua, ub), false };
}

//! Empirical randomized PIT of a sample: F_n^-(x) + w (F_n(x) - F_n^-(x)).
inline std::vector<PseudoObs>
empirical_pseudo_obs(std::span<const double> x)
{
  const std::size_t n = x.size();
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<PseudoObs> out(n);
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x[i]) - sorted.begin();
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), x[i]) - sorted.begin();
    out[i] = { static_cast<double>(hi) / dn, static_cast<double>(lo) / dn, hi - lo > 1 };
  }
  return out;
}

//! Kendall's tau of raw pairs via their empirical randomized PIT; exact
//! ties are resolved by one seeded jitter.
inline TauResult
kendall_tau(std::span<const std::pair<double, double>> pairs, std::uint64_t seed = 0)
{
  if (pairs.size() < 2) {
    throw std::invalid_argument("kendall_tau needs n >= 2");
  }
  std::vector<double> x(pairs.size()), y(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    x[i] = pairs[i].first;
    y[i] = pairs[i].second;
  }
  const auto px = empirical_pseudo_obs(x);
  const auto py = empirical_pseudo_obs(y);
  return kendall_tau(std::span<const PseudoObs>(px), std::span<const PseudoObs>(py), seed);
}

struct PairFitOptions
{
  std::vector<CopulaFamily> family_set = all_families();
  std::size_t checkerboard_resolution = 32;
  double checkerboard_pseudo_count = 0.5;
  //! level of the Kendall's tau independence test
  double independence_level = 0.05;
};

//! Sinkhorn scaling to row and column sums 1/m.
inline void
make_doubly_stochastic(std::vector<double>& mass, std::size_t m, int max_rounds = 100,
                       double tol = 1e-9)
{
  const double target = 1.0 / static_cast<double>(m);
  for (int round = 0; round < max_rounds; ++round) {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        s += mass[i * m + j];
      }
      for (std::size_t j = 0; j < m; ++j) {
        mass[i * m + j] *= target / s;
      }
    }
    double err = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        s += mass[i * m + j];
      }
      for (std::size_t i = 0; i < m; ++i) {
        mass[i * m + j] *= target / s;
      }
      err = std::max(err, std::fabs(s - target));
    }
    if (err < tol) {
      break;
    }
  }
}

namespace detail {

inline double
frank_theta_from_tau(double tau)
{
  const double target = std::fabs(tau);
  if (target >= frank_tau(frank_cap)) {
    return std::copysign(frank_cap, tau);
  }
  std::uintmax_t iters = 200;
  auto res = boost::math::tools::toms748_solve(
    [target](double th) { return frank_tau(th) - target; }, 1e-8, frank_cap,
    boost::math::tools::eps_tolerance<double>(50), iters);
  return std::copysign(0.5 * (res.first + res.second), tau);
}

inline double
clamp_unit(double u)
{
  return std::clamp(u, 1e-10, 1.0 - 1e-10);
}

} // namespace detail

//! Fits a pair copula to continuous pseudo-observations (already jittered).
//! Parametric families use inversion of Kendall's tau; the candidate with
//! the smallest AIC is returned. Independence is selected directly when the
//! tau test does not reject.
inline BivariateCopula
fit_pair_continuous(std::span<const double> u_in, std::span<const double> v_in,
                    const PairFitOptions& options = {})
{
  const std::size_t n = u_in.size();
  if (v_in.size() != n) {
    throw std::invalid_argument("fit_pair: size mismatch");
  }
  if (n < 30) {
    throw EstimationError("pair copula fit needs at least 30 observations, got " +
                          std::to_string(n));
  }
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = detail::clamp_unit(u_in[i]);
    v[i] = detail::clamp_unit(v_in[i]);
  }
  const auto& fams = options.family_set;
  auto allowed = [&](CopulaFamily f) {
    return std::find(fams.begin(), fams.end(), f) != fams.end();
  };

  const double tau = stats::kendall_tau_b(u, v);
  const double dn = static_cast<double>(n);
  if (allowed(CopulaFamily::independence)) {
    const double z = 3.0 * tau * std::sqrt(dn * (dn - 1.0)) / std::sqrt(2.0 * (2.0 * dn + 5.0));
    const double crit = stats::qnorm(1.0 - options.independence_level / 2.0);
    if (std::fabs(z) < crit) {
      return BivariateCopula::independence();
    }
  }

  std::vector<BivariateCopula> candidates;
  if (allowed(CopulaFamily::independence)) {
    candidates.push_back(BivariateCopula::independence());
  }
  const double at = std::fabs(tau);
  if (allowed(CopulaFamily::gaussian)) {
    const double rho = std::clamp(std::sin(stats::pi * tau / 2.0), -detail::rho_cap, detail::rho_cap);
    candidates.push_back(BivariateCopula::gaussian(rho));
  }
  const std::array<int, 2> rots = tau > 0.0 ? std::array<int, 2>{ 0, 180 }
                                            : std::array<int, 2>{ 90, 270 };
  if (allowed(CopulaFamily::clayton) && at > 0.0 && at < 1.0) {
    const double th = std::min(2.0 * at / (1.0 - at), detail::theta_cap);
    for (int r : rots) {
      candidates.push_back(BivariateCopula::clayton(th, r));
    }
  }
  if (allowed(CopulaFamily::gumbel) && at > 0.0 && at < 1.0) {
    const double th = std::min(1.0 / (1.0 - at), detail::theta_cap);
    for (int r : rots) {
      candidates.push_back(BivariateCopula::gumbel(th, r));
    }
  }
  if (allowed(CopulaFamily::frank) && at > 0.0 && at < 1.0) {
    candidates.push_back(BivariateCopula::frank(detail::frank_theta_from_tau(tau)));
  }
  if (allowed(CopulaFamily::checkerboard)) {
    const std::size_t m = options.checkerboard_resolution;
    std::vector<double> mass(m * m, options.checkerboard_pseudo_count);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = std::min(static_cast<std::size_t>(u[i] * static_cast<double>(m)), m - 1);
      const auto b = std::min(static_cast<std::size_t>(v[i] * static_cast<double>(m)), m - 1);
      mass[a * m + b] += 1.0;
    }
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    for (double& p : mass) {
      p /= total;
    }
    make_doubly_stochastic(mass, m);
    candidates.push_back(BivariateCopula::checkerboard(std::move(mass), m));
  }
  if (candidates.empty()) {
    return BivariateCopula::independence();
  }

  std::size_t best = 0;
  double best_aic = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double aic = -2.0 * candidates[k].loglik(u, v) +
                       2.0 * static_cast<double>(candidates[k].num_parameters());
    if (aic < best_aic) {
      best_aic = aic;
      best = k;
    }
  }
  return candidates[best];
}

//! Fits a pair copula to pseudo-observations carrying left limits; discrete
//! observations are spread over [u_left, u] by one seeded uniform jitter.
inline BivariateCopula
fit_pair(std::span<const PseudoObs> a, std::span<const PseudoObs> b,
         const PairFitOptions& options = {}, std::uint64_t seed = 0)
{
  if (a.size() != b.size()) {
    throw std::invalid_argument("fit_pair: size mismatch");
  }
  Rng rng(seed);
  std::vector<double> u(a.size()), v(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    u[i] = a[i].jitter(rng.uniform());
    v[i] = b[i].jitter(rng.uniform());
  }
  return fit_pair_continuous(u, v, options);
}

} // namespace vbc
