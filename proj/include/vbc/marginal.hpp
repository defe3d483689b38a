#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "vbc/core/errors.hpp"
#include "vbc/core/stats.hpp"

namespace vbc {

enum class SupportKind
{
  interval,
  nonnegative,
  zero_inflated
};

inline std::string
to_string(SupportKind kind)
{
  switch (kind) {
    case SupportKind::interval:
      return "interval";
    case SupportKind::nonnegative:
      return "nonnegative";
    case SupportKind::zero_inflated:
      return "zero_inflated";
  }
  return "interval";
}

inline SupportKind
support_kind_from_string(const std::string& s)
{
  if (s == "interval") {
    return SupportKind::interval;
  }
  if (s == "nonnegative" || s == "nonnegative-continuous" ||
      s == "nonnegative_continuous") {
    return SupportKind::nonnegative;
  }
  if (s == "zero_inflated" || s == "zero-inflated") {
    return SupportKind::zero_inflated;
  }
  throw SchemaError("unknown variable kind '" + s + "'");
}

inline bool
is_nonnegative(SupportKind kind)
{
  return kind != SupportKind::interval;
}

enum class BandwidthRule
{
  normal_reference,
  silverman
};

inline std::string
to_string(BandwidthRule rule)
{
  return rule == BandwidthRule::silverman ? "silverman" : "normal_reference";
}

inline BandwidthRule
bandwidth_rule_from_string(const std::string& s)
{
  if (s == "normal_reference") {
    return BandwidthRule::normal_reference;
  }
  if (s == "silverman") {
    return BandwidthRule::silverman;
  }
  throw ConfigError("unknown bandwidth rule '" + s + "'");
}

struct Atom
{
  double value;
  double mass;
};

struct MarginalEvaluation
{
  double cdf;
  double cdf_left;
  //! density w.r.t. Dirac measures at the atoms plus Lebesgue measure
  //! elsewhere
  double density;
};

//! Piecewise-linear density on a knot grid with exponential tails.
//! Integrates to one; CDF and quantile are exact for the piecewise model.
class GridDensity
{
public:
  GridDensity() = default;

  //! `density` must already be normalized (see `normalized`).
  GridDensity(std::vector<double> knots, std::vector<double> density)
    : knots_(std::move(knots))
    , dens_(std::move(density))
  {
    if (knots_.size() < 2 || knots_.size() != dens_.size()) {
      throw std::invalid_argument("GridDensity: need >= 2 knots and matching densities");
    }
    for (std::size_t i = 1; i < knots_.size(); ++i) {
      if (!(knots_[i] > knots_[i - 1])) {
        throw std::invalid_argument("GridDensity: knots must be increasing");
      }
    }
    for (double g : dens_) {
      if (!(g >= 0.0) || !std::isfinite(g)) {
        throw std::invalid_argument("GridDensity: densities must be finite and >= 0");
      }
    }
    build();
  }

  //! Rescale raw density values so that grid plus tails integrate to one.
  static GridDensity normalized(std::vector<double> knots, std::vector<double> raw)
  {
    GridDensity tmp(knots, raw);
    const double total = tmp.total_mass();
    if (!(total > 0.0)) {
      throw EstimationError("density estimate has zero mass");
    }
    for (double& g : raw) {
      g /= total;
    }
    return GridDensity(std::move(knots), std::move(raw));
  }

  double pdf(double z) const
  {
    const std::size_t k = knots_.size();
    if (z < knots_[0]) {
      return left_rate_ > 0.0 ? dens_[0] * std::exp(left_rate_ * (z - knots_[0])) : 0.0;
    }
    if (z > knots_[k - 1]) {
      return right_rate_ > 0.0
               ? dens_[k - 1] * std::exp(-right_rate_ * (z - knots_[k - 1]))
               : 0.0;
    }
    const std::size_t i = segment(z);
    const double t = (z - knots_[i]) / (knots_[i + 1] - knots_[i]);
    return dens_[i] + t * (dens_[i + 1] - dens_[i]);
  }

  double cdf(double z) const
  {
    const std::size_t k = knots_.size();
    if (z == -stats::inf) {
      return 0.0;
    }
    if (z == stats::inf) {
      return 1.0;
    }
    if (z < knots_[0]) {
      return left_mass_ * std::exp(left_rate_ * (z - knots_[0]));
    }
    if (z >= knots_[k - 1]) {
      const double tail =
        right_rate_ > 0.0 ? right_mass_ * std::exp(-right_rate_ * (z - knots_[k - 1])) : 0.0;
      return std::clamp(cum_[k - 1] + right_mass_ - tail, 0.0, 1.0);
    }
    const std::size_t i = segment(z);
    const double t = z - knots_[i];
    const double slope = (dens_[i + 1] - dens_[i]) / (knots_[i + 1] - knots_[i]);
    return std::clamp(cum_[i] + dens_[i] * t + 0.5 * slope * t * t, 0.0, 1.0);
  }

  double quantile(double p) const
  {
    const std::size_t k = knots_.size();
    if (p <= 0.0) {
      return left_mass_ > 0.0 ? -stats::inf : knots_[0];
    }
    if (p >= 1.0) {
      return right_mass_ > 0.0 ? stats::inf : knots_[k - 1];
    }
    if (p < cum_[0]) {
      return knots_[0] + std::log(p / left_mass_) / left_rate_;
    }
    if (p >= cum_[k - 1]) {
      if (!(right_mass_ > 0.0)) {
        return knots_[k - 1];
      }
      const double rem = (cum_[k - 1] + right_mass_ - p) / right_mass_;
      if (rem <= 0.0) {
        return stats::inf;
      }
      return knots_[k - 1] - std::log(std::min(rem, 1.0)) / right_rate_;
    }
    // segment i with cum_[i] <= p < cum_[i + 1]
    auto it = std::upper_bound(cum_.begin(), cum_.end(), p);
    std::size_t i = static_cast<std::size_t>(it - cum_.begin()) - 1;
    // skip flat zero-mass segments
    const double width = knots_[i + 1] - knots_[i];
    const double slope = (dens_[i + 1] - dens_[i]) / width;
    const double rem = p - cum_[i];
    const double disc = dens_[i] * dens_[i] + 2.0 * slope * rem;
    double t;
    const double root = std::sqrt(std::max(disc, 0.0));
    if (dens_[i] + root > 0.0) {
      t = 2.0 * rem / (dens_[i] + root);
    } else {
      t = 0.0;
    }
    return knots_[i] + std::clamp(t, 0.0, width);
  }

  double total_mass() const { return cum_.back() + right_mass_; }

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& densities() const { return dens_; }
  double left_rate() const { return left_rate_; }
  double right_rate() const { return right_rate_; }

private:
  std::vector<double> knots_;
  std::vector<double> dens_;
  std::vector<double> cum_;
  double left_rate_{ 0.0 };
  double right_rate_{ 0.0 };
  double left_mass_{ 0.0 };
  double right_mass_{ 0.0 };

  std::size_t segment(double z) const
  {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), z);
    auto i = static_cast<std::size_t>(it - knots_.begin());
    i = i == 0 ? 0 : i - 1;
    return std::min(i, knots_.size() - 2);
  }

  static double tail_rate(double g_edge, double g_inner, double dz, double span)
  {
    // log-slope at the boundary; falls back to a decay over the grid span
    double rate = 0.0;
    if (g_edge > 0.0 && g_inner > 0.0) {
      rate = (std::log(g_inner) - std::log(g_edge)) / dz;
    }
    return std::max(rate, 5.0 / span);
  }

  void build()
  {
    const std::size_t k = knots_.size();
    const double span = knots_[k - 1] - knots_[0];
    left_rate_ = tail_rate(dens_[0], dens_[1], knots_[1] - knots_[0], span);
    right_rate_ = tail_rate(dens_[k - 1], dens_[k - 2], knots_[k - 1] - knots_[k - 2], span);
    left_mass_ = dens_[0] / left_rate_;
    right_mass_ = dens_[k - 1] / right_rate_;
    cum_.assign(k, 0.0);
    cum_[0] = left_mass_;
    for (std::size_t i = 1; i < k; ++i) {
      cum_[i] = cum_[i - 1] + 0.5 * (dens_[i] + dens_[i - 1]) * (knots_[i] - knots_[i - 1]);
    }
  }
};

//! Univariate discrete-continuous mixture: finitely many atoms plus an
//! absolutely continuous part estimated by a Gaussian kernel density. For
//! nonnegative and zero-inflated support the continuous part lives on the
//! log scale.
class MixtureMarginal
{
public:
  static constexpr std::size_t grid_size = 512;
  static constexpr std::size_t min_sample_size = 30;
  static constexpr int format_version = 1;

  MixtureMarginal() = default;

  //! Assembles a marginal from its parts. `knots` are on the transformed
  //! scale and `densities` must integrate to one there.
  MixtureMarginal(SupportKind kind,
                  std::vector<Atom> atoms,
                  std::vector<double> knots,
                  std::vector<double> densities,
                  double bandwidth)
    : kind_(kind)
    , atoms_(std::move(atoms))
    , bandwidth_(bandwidth)
  {
    std::sort(atoms_.begin(), atoms_.end(),
              [](const Atom& a, const Atom& b) { return a.value < b.value; });
    double atom_mass = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (!(atoms_[i].mass > 0.0 && atoms_[i].mass <= 1.0)) {
        throw std::invalid_argument("atom masses must lie in (0, 1]");
      }
      if (i > 0 && atoms_[i].value == atoms_[i - 1].value) {
        throw std::invalid_argument("duplicate atom value");
      }
      atom_mass += atoms_[i].mass;
    }
    continuous_mass_ = std::max(0.0, 1.0 - atom_mass);
    if (continuous_mass_ < 1e-12) {
      continuous_mass_ = 0.0;
    }
    if (std::fabs(atom_mass + continuous_mass_ - 1.0) > 1e-9) {
      throw std::invalid_argument("atom masses exceed one");
    }
    if (continuous_mass_ > 0.0) {
      continuous_ = GridDensity(std::move(knots), std::move(densities));
    }
  }

  //! Fits atoms and the continuous part to a sample.
  static MixtureMarginal fit(std::span<const double> sample,
                             SupportKind kind,
                             BandwidthRule rule = BandwidthRule::normal_reference,
                             double atom_threshold = 0.01);

  MarginalEvaluation eval(double x) const
  {
    double below = 0.0, at = 0.0;
    for (const auto& a : atoms_) {
      if (a.value < x) {
        below += a.mass;
      } else if (a.value == x) {
        at = a.mass;
      }
    }
    double cont_cdf = 0.0, cont_pdf = 0.0;
    if (continuous_mass_ > 0.0) {
      if (uses_log()) {
        if (x > 0.0) {
          const double z = std::log(x);
          cont_cdf = continuous_.cdf(z);
          cont_pdf = continuous_.pdf(z) / x;
        }
      } else if (std::isfinite(x)) {
        cont_cdf = continuous_.cdf(x);
        cont_pdf = continuous_.pdf(x);
      } else {
        cont_cdf = x > 0 ? 1.0 : 0.0;
      }
    }
    MarginalEvaluation out;
    out.cdf_left = std::clamp(below + continuous_mass_ * cont_cdf, 0.0, 1.0);
    out.cdf = std::clamp(out.cdf_left + at, 0.0, 1.0);
    out.density = at > 0.0 ? at : continuous_mass_ * cont_pdf;
    return out;
  }

  double cdf(double x) const { return eval(x).cdf; }
  double cdf_left(double x) const { return eval(x).cdf_left; }
  double density(double x) const { return eval(x).density; }

  //! Generalized inverse: smallest x with F(x) >= v.
  double quantile(double v) const
  {
    v = std::clamp(v, 0.0, 1.0);
    double acc = 0.0;
    for (const auto& a : atoms_) {
      const double left = acc + continuous_mass_ * continuous_cdf(a.value);
      if (v <= left && continuous_mass_ > 0.0) {
        return std::min(continuous_quantile((v - acc) / continuous_mass_), a.value);
      }
      if (v <= left + a.mass) {
        return a.value;
      }
      acc += a.mass;
    }
    if (continuous_mass_ > 0.0) {
      double x = continuous_quantile((v - acc) / continuous_mass_);
      if (!atoms_.empty()) {
        x = std::max(x, atoms_.back().value);
      }
      return x;
    }
    return atoms_.empty() ? std::numeric_limits<double>::quiet_NaN()
                          : atoms_.back().value;
  }

  //! w F(x) + (1 - w) F^-(x)
  double randomized_pit(double x, double w) const
  {
    const auto e = eval(x);
    return w * e.cdf + (1.0 - w) * e.cdf_left;
  }

  bool is_atom(double x) const
  {
    return std::any_of(atoms_.begin(), atoms_.end(),
                       [x](const Atom& a) { return a.value == x; });
  }

  SupportKind kind() const { return kind_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  double continuous_mass() const { return continuous_mass_; }
  bool degenerate() const { return continuous_mass_ == 0.0; }
  double bandwidth() const { return bandwidth_; }
  const GridDensity& continuous_part() const { return continuous_; }
  bool uses_log() const { return is_nonnegative(kind_); }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["version"] = format_version;
    j["kind"] = to_string(kind_);
    j["atoms"] = nlohmann::json::array();
    for (const auto& a : atoms_) {
      j["atoms"].push_back({ a.value, a.mass });
    }
    j["bandwidth"] = bandwidth_;
    j["transform"] = uses_log() ? "log" : "identity";
    if (continuous_mass_ > 0.0) {
      j["knots"] = continuous_.knots();
      j["densities"] = continuous_.densities();
    } else {
      j["knots"] = nlohmann::json::array();
      j["densities"] = nlohmann::json::array();
    }
    return j;
  }

  static MixtureMarginal from_json(const nlohmann::json& j)
  {
    if (j.at("version").get<int>() != format_version) {
      throw SchemaError("unsupported marginal format version");
    }
    std::vector<Atom> atoms;
    for (const auto& a : j.at("atoms")) {
      atoms.push_back({ a.at(0).get<double>(), a.at(1).get<double>() });
    }
    return MixtureMarginal(support_kind_from_string(j.at("kind").get<std::string>()),
                           std::move(atoms),
                           j.at("knots").get<std::vector<double>>(),
                           j.at("densities").get<std::vector<double>>(),
                           j.at("bandwidth").get<double>());
  }

private:
  SupportKind kind_{ SupportKind::interval };
  std::vector<Atom> atoms_;
  double continuous_mass_{ 1.0 };
  GridDensity continuous_;
  double bandwidth_{ 0.0 };

  double continuous_cdf(double x) const
  {
    if (uses_log()) {
      return x > 0.0 ? continuous_.cdf(std::log(x)) : 0.0;
    }
    return continuous_.cdf(x);
  }

  double continuous_quantile(double p) const
  {
    const double z = continuous_.quantile(std::clamp(p, 0.0, 1.0));
    return uses_log() ? std::exp(z) : z;
  }
};

namespace detail {

inline double
select_bandwidth(std::span<const double> z, BandwidthRule rule)
{
  const double n = static_cast<double>(z.size());
  const double sd = stats::stddev(z);
  std::vector<double> v(z.begin(), z.end());
  const double iqr = stats::quantile(v, 0.75) - stats::quantile(v, 0.25);
  double scale = std::min(sd, iqr / 1.349);
  if (!(scale > 0.0)) {
    scale = sd;
  }
  if (!(scale > 0.0)) {
    scale = 1e-3 * std::max(1.0, std::fabs(stats::mean(z)));
  }
  const double factor = rule == BandwidthRule::silverman ? 0.9 : 1.06;
  return factor * scale * std::pow(n, -0.2);
}

} // namespace detail

inline MixtureMarginal
MixtureMarginal::fit(std::span<const double> sample,
                     SupportKind kind,
                     BandwidthRule rule,
                     double atom_threshold)
{
  if (sample.size() < min_sample_size) {
    throw EstimationError("marginal fit needs at least " +
                          std::to_string(min_sample_size) + " observations, got " +
                          std::to_string(sample.size()));
  }
  for (double x : sample) {
    if (!std::isfinite(x)) {
      throw EstimationError("marginal fit: non-finite observation");
    }
    if (is_nonnegative(kind) && x < 0.0) {
      throw EstimationError("marginal fit: negative value for nonnegative variable");
    }
  }
  const double n = static_cast<double>(sample.size());
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());

  std::vector<Atom> atoms;
  if (kind == SupportKind::zero_inflated) {
    const auto zeros = std::upper_bound(sorted.begin(), sorted.end(), 0.0) - sorted.begin();
    if (zeros > 0) {
      atoms.push_back({ 0.0, static_cast<double>(zeros) / n });
    }
  } else {
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i + 1;
      while (j < sorted.size() && sorted[j] == sorted[i]) {
        ++j;
      }
      const double freq = static_cast<double>(j - i) / n;
      if (j - i >= 2 && freq >= atom_threshold) {
        atoms.push_back({ sorted[i], freq });
      }
      i = j;
    }
  }

  std::vector<double> rest;
  rest.reserve(sorted.size());
  for (double x : sorted) {
    const bool atomic = std::any_of(atoms.begin(), atoms.end(),
                                    [x](const Atom& a) { return a.value == x; });
    if (!atomic) {
      rest.push_back(x);
    }
  }
  if (rest.empty()) {
    return MixtureMarginal(kind, std::move(atoms), {}, {}, 0.0);
  }

  // continuous part on the (possibly log-transformed) scale
  std::vector<double> z(rest.size());
  if (is_nonnegative(kind)) {
    double min_pos = stats::inf;
    for (double x : rest) {
      if (x > 0.0) {
        min_pos = std::min(min_pos, x);
      }
    }
    if (!std::isfinite(min_pos)) {
      min_pos = 1.0;
    }
    for (std::size_t i = 0; i < rest.size(); ++i) {
      z[i] = std::log(rest[i] > 0.0 ? rest[i] : 0.5 * min_pos);
    }
    std::sort(z.begin(), z.end());
  } else {
    z = rest;
  }

  const double h = detail::select_bandwidth(z, rule);
  const double lo = z.front() - 4.0 * h;
  const double hi = z.back() + 4.0 * h;
  std::vector<double> knots(grid_size), dens(grid_size, 0.0);
  const double step = (hi - lo) / static_cast<double>(grid_size - 1);
  for (std::size_t k = 0; k < grid_size; ++k) {
    knots[k] = lo + step * static_cast<double>(k);
  }
  knots.back() = hi;

  // scatter each kernel onto the knots within 8 bandwidths
  const double cutoff = 8.0 * h;
  const double norm = 1.0 / (static_cast<double>(z.size()) * h);
  for (double zi : z) {
    const auto k0 = static_cast<std::ptrdiff_t>(std::ceil((zi - cutoff - lo) / step));
    const auto k1 = static_cast<std::ptrdiff_t>(std::floor((zi + cutoff - lo) / step));
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(k0, 0);
         k <= std::min<std::ptrdiff_t>(k1, static_cast<std::ptrdiff_t>(grid_size) - 1);
         ++k) {
      dens[static_cast<std::size_t>(k)] +=
        norm * stats::dnorm((knots[static_cast<std::size_t>(k)] - zi) / h);
    }
  }

  auto grid = GridDensity::normalized(knots, dens);
  return MixtureMarginal(kind, std::move(atoms), grid.knots(), grid.densities(), h);
}

} // namespace vbc
