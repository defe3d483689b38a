#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vbc/copula.hpp"
#include "vbc/core/errors.hpp"
#include "vbc/core/random.hpp"
#include "vbc/marginal.hpp"
#include "vbc/vine.hpp"

namespace vbc {

enum class DeltaMode
{
  automatic,
  additive,
  multiplicative
};

inline std::string
to_string(DeltaMode m)
{
  switch (m) {
    case DeltaMode::additive:
      return "additive-only";
    case DeltaMode::multiplicative:
      return "multiplicative-only";
    default:
      return "auto";
  }
}

inline DeltaMode
delta_mode_from_string(const std::string& s)
{
  if (s == "auto") {
    return DeltaMode::automatic;
  }
  if (s == "additive-only") {
    return DeltaMode::additive;
  }
  if (s == "multiplicative-only") {
    return DeltaMode::multiplicative;
  }
  throw ConfigError("delta_mode: unknown value '" + s +
                    "' (expected auto, additive-only or multiplicative-only)");
}

struct DeltaFactors
{
  //! x_mp / q, NaN when q == 0
  double multiplicative;
  //! x_mp - q
  double additive;
};

//! Discrepancy factors between a projection value and its quantile-matched
//! calibration value q = F_mc^-1(F_mp(x_mp)).
inline DeltaFactors
delta_factors(double x_mp, double q)
{
  return { q == 0.0 ? std::numeric_limits<double>::quiet_NaN() : x_mp / q, x_mp - q };
}

//! Relative distance below which q is taken to equal x_mp, so that
//! quantile round-off does not move corrected values off atoms.
inline constexpr double delta_identity_tolerance = 1e-9;

//! Projects a calibrated value given the quantile-matched calibration value q.
inline double
apply_delta(double x_hat_mc, double x_mp, double q, bool nonnegative,
            DeltaMode mode = DeltaMode::automatic)
{
  if (std::fabs(x_mp - q) <= delta_identity_tolerance * std::max(1.0, std::fabs(x_mp))) {
    q = x_mp;
  }
  const auto f = delta_factors(x_mp, q);
  const bool has_ratio = q != 0.0;
  double out;
  if (mode == DeltaMode::additive || !nonnegative || !has_ratio) {
    out = x_hat_mc + f.additive;
  } else if (mode == DeltaMode::multiplicative || f.multiplicative < 1.0) {
    out = x_hat_mc * f.multiplicative;
  } else {
    out = x_hat_mc + f.additive;
  }
  return nonnegative ? std::max(out, 0.0) : out;
}

//! Delta mapping of one value: q = F_mc^-1(F_mp(x_mp)). At atoms of F_mp the
//! probability is randomized, w F(x) + (1 - w) F(x-); w = 1 is the plain CDF.
inline double
delta_map(double x_hat_mc, double x_mp, const MixtureMarginal& f_mc,
          const MixtureMarginal& f_mp, bool nonnegative,
          DeltaMode mode = DeltaMode::automatic, double w = 1.0)
{
  const double q = f_mc.quantile(f_mp.randomized_pit(x_mp, w));
  return apply_delta(x_hat_mc, x_mp, q, nonnegative, mode);
}

struct CorrectionConfig
{
  std::vector<CopulaFamily> family_set = all_families();
  BandwidthRule bandwidth_rule = BandwidthRule::normal_reference;
  double overlap_fraction = 0.25;
  std::size_t truncation_level = 0;
  std::uint64_t seed = 0;
  DeltaMode delta_mode = DeltaMode::automatic;
  double atom_threshold = 0.01;
  double independence_level = 0.05;
  std::size_t checkerboard_resolution = 32;
  double inverse_tolerance = 1e-10;
  //! fit the projection vine on the structure selected for the reference
  //! instead of selecting it separately
  bool shared_structure = false;
  //! worker threads; 0 selects the number of available cores
  std::size_t threads = 0;

  void validate() const
  {
    if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) {
      throw ConfigError("overlap_fraction: must lie in [0, 1]");
    }
    if (family_set.empty()) {
      throw ConfigError("family_set: must not be empty");
    }
    if (!(atom_threshold > 0.0 && atom_threshold < 1.0)) {
      throw ConfigError("atom_threshold: must lie in (0, 1)");
    }
    if (!(independence_level > 0.0 && independence_level < 1.0)) {
      throw ConfigError("independence_level: must lie in (0, 1)");
    }
    if (checkerboard_resolution < 2) {
      throw ConfigError("checkerboard_resolution: must be at least 2");
    }
    if (!(inverse_tolerance > 0.0 && inverse_tolerance < 1e-3)) {
      throw ConfigError("inverse_tolerance: must lie in (0, 1e-3)");
    }
  }

  std::size_t resolved_threads() const
  {
    if (threads > 0) {
      return threads;
    }
    return std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
  }

  VineFitOptions vine_options() const
  {
    VineFitOptions o;
    o.pair.family_set = family_set;
    o.pair.checkerboard_resolution = checkerboard_resolution;
    o.pair.independence_level = independence_level;
    o.truncation_level = truncation_level;
    o.bandwidth = bandwidth_rule;
    o.atom_threshold = atom_threshold;
    return o;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json j;
    j["family_set"] = nlohmann::json::array();
    for (auto f : family_set) {
      j["family_set"].push_back(to_string(f));
    }
    j["bandwidth_rule"] = to_string(bandwidth_rule);
    j["overlap_fraction"] = overlap_fraction;
    j["truncation_level"] = truncation_level;
    j["seed"] = seed;
    j["delta_mode"] = to_string(delta_mode);
    j["atom_threshold"] = atom_threshold;
    j["independence_level"] = independence_level;
    j["checkerboard_resolution"] = checkerboard_resolution;
    j["inverse_tolerance"] = inverse_tolerance;
    j["shared_structure"] = shared_structure;
    j["threads"] = threads;
    return j;
  }

  //! Missing keys keep their defaults; unknown keys and ill-typed values
  //! raise ConfigError naming the field.
  static CorrectionConfig from_json(const nlohmann::json& j)
  {
    if (!j.is_object()) {
      throw ConfigError("config: expected a JSON object");
    }
    static const std::set<std::string> known = {
      "family_set",         "bandwidth_rule",   "overlap_fraction",
      "truncation_level",   "seed",             "delta_mode",
      "atom_threshold",     "independence_level", "checkerboard_resolution",
      "inverse_tolerance",  "shared_structure", "threads"
    };
    for (const auto& item : j.items()) {
      if (!known.count(item.key())) {
        throw ConfigError(item.key() + ": unknown field");
      }
    }
    CorrectionConfig c;
    auto number = [&](const char* key, double& out) {
      if (j.contains(key)) {
        if (!j[key].is_number()) {
          throw ConfigError(std::string(key) + ": expected a number");
        }
        out = j[key].get<double>();
      }
    };
    auto count = [&](const char* key, auto& out) {
      if (j.contains(key)) {
        const auto& v = j[key];
        if (!v.is_number_unsigned() &&
            !(v.is_number_integer() && v.template get<std::int64_t>() >= 0)) {
          throw ConfigError(std::string(key) + ": expected a nonnegative integer");
        }
        out = j[key].get<std::remove_reference_t<decltype(out)>>();
      }
    };
    auto text = [&](const char* key) -> std::string {
      if (!j[key].is_string()) {
        throw ConfigError(std::string(key) + ": expected a string");
      }
      return j[key].get<std::string>();
    };
    if (j.contains("family_set")) {
      if (!j["family_set"].is_array()) {
        throw ConfigError("family_set: expected an array of family names");
      }
      c.family_set.clear();
      for (const auto& f : j["family_set"]) {
        if (!f.is_string()) {
          throw ConfigError("family_set: expected an array of family names");
        }
        try {
          c.family_set.push_back(copula_family_from_string(f.get<std::string>()));
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("family_set: ") + e.what());
        }
      }
    }
    if (j.contains("bandwidth_rule")) {
      try {
        c.bandwidth_rule = bandwidth_rule_from_string(text("bandwidth_rule"));
      } catch (const ConfigError& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.rfind("bandwidth_rule", 0) == 0 ? msg : "bandwidth_rule: " + msg);
      }
    }
    if (j.contains("delta_mode")) {
      c.delta_mode = delta_mode_from_string(text("delta_mode"));
    }
    if (j.contains("shared_structure")) {
      if (!j["shared_structure"].is_boolean()) {
        throw ConfigError("shared_structure: expected true or false");
      }
      c.shared_structure = j["shared_structure"].get<bool>();
    }
    number("overlap_fraction", c.overlap_fraction);
    number("atom_threshold", c.atom_threshold);
    number("independence_level", c.independence_level);
    number("inverse_tolerance", c.inverse_tolerance);
    count("truncation_level", c.truncation_level);
    count("seed", c.seed);
    count("checkerboard_resolution", c.checkerboard_resolution);
    count("threads", c.threads);
    c.validate();
    return c;
  }
};

//! Seed of one (chunk, member) unit of work.
inline std::uint64_t
unit_seed(std::uint64_t master, const std::string& chunk, std::int64_t member)
{
  return combine_seed(combine_seed(master, chunk), static_cast<std::uint64_t>(member));
}

struct CorrectedSet
{
  //! projected corrections, aligned with the projection rows
  Eigen::MatrixXd values;
  //! corrected values before delta mapping
  Eigen::MatrixXd calibrated;
  std::string chunk;
  std::int64_t member{ 0 };
  std::uint64_t seed{ 0 };
  std::string method;
};

//! Data of one correction unit. `projection` holds the rows to correct,
//! `projection_estimation` the rows used to fit the projection model
//! (defaults to `projection`), `reference` the calibration-period reference
//! and `model_calibration` the calibration-period model data.
struct CorrectionInput
{
  Eigen::MatrixXd projection;
  Eigen::MatrixXd projection_estimation;
  Eigen::MatrixXd reference;
  Eigen::MatrixXd model_calibration;
  std::vector<SupportKind> kinds;
  std::vector<std::string> names;
  std::string chunk;
  std::int64_t member{ 0 };
};

namespace detail {

inline const Eigen::MatrixXd&
estimation_rows(const CorrectionInput& in)
{
  return in.projection_estimation.size() > 0 ? in.projection_estimation : in.projection;
}

inline void
check_schema(const CorrectionInput& in)
{
  const auto d = static_cast<Eigen::Index>(in.kinds.size());
  auto check = [&](const Eigen::MatrixXd& m, const char* what) {
    if (m.cols() != d) {
      throw SchemaError(std::string(what) + " has " + std::to_string(m.cols()) +
                        " columns, expected " + std::to_string(d));
    }
  };
  check(in.projection, "projection data");
  check(estimation_rows(in), "projection estimation data");
  check(in.reference, "reference data");
  check(in.model_calibration, "model calibration data");
  if (!in.names.empty() && in.names.size() != in.kinds.size()) {
    throw SchemaError("expected one name per variable");
  }
  if (d < 1) {
    throw SchemaError("at least one variable required");
  }
}

inline std::string
unit_label(const CorrectionInput& in)
{
  return "chunk " + (in.chunk.empty() ? std::string("-") : in.chunk) + ", member " +
         std::to_string(in.member);
}

//! Noise for the randomized transforms, one uniform per cell.
inline Eigen::MatrixXd
noise_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed)
{
  Rng rng(combine_seed(seed, "noise"));
  Eigen::MatrixXd w(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      w(i, j) = rng.uniform();
    }
  }
  return w;
}

inline std::vector<MixtureMarginal>
fit_margins(const Eigen::MatrixXd& data, const CorrectionInput& in,
            const CorrectionConfig& config, const char* what)
{
  std::vector<MixtureMarginal> out;
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    std::vector<double> col(data.col(j).data(), data.col(j).data() + data.rows());
    const auto name = in.names.empty() ? "x" + std::to_string(j + 1) : in.names[j];
    try {
      out.push_back(MixtureMarginal::fit(col, in.kinds[static_cast<std::size_t>(j)],
                                         config.bandwidth_rule, config.atom_threshold));
    } catch (const EstimationError& e) {
      throw EstimationError(unit_label(in) + ", " + what + ", variable '" + name +
                            "': " + e.what());
    }
  }
  return out;
}

inline VineModel
fit_model(const Eigen::MatrixXd& data, const CorrectionInput& in, const CorrectionConfig& config,
          std::uint64_t seed, const char* what,
          const std::optional<VineStructure>& structure = std::nullopt)
{
  auto options = config.vine_options();
  options.structure = structure;
  try {
    return VineModel::fit(data, in.kinds, options, seed, in.names);
  } catch (const EstimationError& e) {
    throw EstimationError(unit_label(in) + ", " + what + ": " + e.what());
  }
}

inline CorrectedSet
project(const CorrectionInput& in, const Eigen::MatrixXd& calibrated,
        const std::vector<MixtureMarginal>& f_mp, const Eigen::MatrixXd& noise,
        const CorrectionConfig& config, std::uint64_t seed, const char* method)
{
  const auto mc = fit_margins(in.model_calibration, in, config, "model calibration margins");
  CorrectedSet out;
  out.calibrated = calibrated;
  out.values.resize(calibrated.rows(), calibrated.cols());
  for (Eigen::Index j = 0; j < calibrated.cols(); ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const bool nonneg = is_nonnegative(in.kinds[jj]);
    for (Eigen::Index i = 0; i < calibrated.rows(); ++i) {
      out.values(i, j) = delta_map(calibrated(i, j), in.projection(i, j), mc[jj], f_mp[jj],
                                   nonneg, config.delta_mode, noise(i, j));
    }
  }
  out.chunk = in.chunk;
  out.member = in.member;
  out.seed = seed;
  out.method = method;
  return out;
}

} // namespace detail

//! Vine-copula bias correction: randomized forward Rosenblatt transform under
//! the projection model, inverse transform under the reference model, then
//! delta mapping per variable.
inline CorrectedSet
vbc_correct(const CorrectionInput& in, const CorrectionConfig& config, std::uint64_t seed)
{
  config.validate();
  detail::check_schema(in);
  const auto rc =
    detail::fit_model(in.reference, in, config, combine_seed(seed, "rc"), "reference model");
  const auto mp = detail::fit_model(
    detail::estimation_rows(in), in, config, combine_seed(seed, "mp"), "projection model",
    config.shared_structure ? std::optional<VineStructure>(rc.structure()) : std::nullopt);
  const Eigen::Index n = in.projection.rows(), d = in.projection.cols();
  const auto noise = detail::noise_matrix(n, d, seed);
  Eigen::MatrixXd calibrated(n, d);
  std::vector<double> x(static_cast<std::size_t>(d)), w(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      x[static_cast<std::size_t>(j)] = in.projection(i, j);
      w[static_cast<std::size_t>(j)] = noise(i, j);
    }
    std::vector<double> y;
    try {
      y = rc.rosenblatt_inverse(mp.rosenblatt_forward(x, w), config.inverse_tolerance);
    } catch (const DomainError& e) {
      throw DomainError(detail::unit_label(in) + ", row " + std::to_string(i) + ": " + e.what());
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      calibrated(i, j) = y[static_cast<std::size_t>(j)];
    }
  }
  return detail::project(in, calibrated, mp.margins(), noise, config, seed, "vbc");
}

//! Univariate quantile mapping followed by the same delta mapping.
inline CorrectedSet
ubc_correct(const CorrectionInput& in, const CorrectionConfig& config, std::uint64_t seed)
{
  config.validate();
  detail::check_schema(in);
  const auto mp =
    detail::fit_margins(detail::estimation_rows(in), in, config, "projection margins");
  const auto rc = detail::fit_margins(in.reference, in, config, "reference margins");
  const Eigen::Index n = in.projection.rows(), d = in.projection.cols();
  const auto noise = detail::noise_matrix(n, d, seed);
  Eigen::MatrixXd calibrated(n, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    for (Eigen::Index i = 0; i < n; ++i) {
      calibrated(i, j) = rc[jj].quantile(mp[jj].randomized_pit(in.projection(i, j), noise(i, j)));
    }
  }
  return detail::project(in, calibrated, mp, noise, config, seed, "ubc");
}

} // namespace vbc
