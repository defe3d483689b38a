#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vbc/copula.hpp"
#include "vbc/core/random.hpp"
#include "vbc/core/stats.hpp"
#include "vbc/detail/network_simplex.hpp"

namespace vbc {

//! Mean empirical joint non-exceedance of the MCI threshold below which a
//! correction counts as non-invasive.
inline constexpr double mci_threshold = 0.05;

struct W2Options
{
  //! standardize both sets per coordinate by the second set's mean and sd
  bool standardize = true;
  //! subsample size cap for exact transport in d >= 2
  std::size_t max_points = 512;
  std::size_t repetitions = 4;
  std::uint64_t seed = 0;
};

namespace detail {

// exact W2 between two 1-d empirical measures via the quantile coupling
inline double
w2_squared_1d(std::vector<double> a, std::vector<double> b)
{
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  // walk the merged breakpoints i/n and j/m in integer arithmetic
  std::size_t i = 0, j = 0;
  std::uint64_t pos = 0;
  const std::uint64_t total = static_cast<std::uint64_t>(n) * m;
  double acc = 0.0;
  while (pos < total) {
    const std::uint64_t next_a = (i + 1) * static_cast<std::uint64_t>(m);
    const std::uint64_t next_b = (j + 1) * static_cast<std::uint64_t>(n);
    const std::uint64_t next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    acc += diff * diff * static_cast<double>(next - pos);
    pos = next;
    if (next == next_a) {
      ++i;
    }
    if (next == next_b) {
      ++j;
    }
  }
  return acc / static_cast<double>(total);
}

inline double
w2_squared_exact(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  const auto n = static_cast<std::size_t>(a.rows());
  const auto m = static_cast<std::size_t>(b.rows());
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      cost[i * m + j] =
        (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(j))).squaredNorm();
    }
  }
  NetworkSimplex ns(std::vector<std::int64_t>(n, static_cast<std::int64_t>(m)),
                    std::vector<std::int64_t>(m, static_cast<std::int64_t>(n)), cost);
  return std::max(ns.solve() / (static_cast<double>(n) * static_cast<double>(m)), 0.0);
}

inline Eigen::MatrixXd
take_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx)
{
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
  }
  return out;
}

} // namespace detail

//! Second Wasserstein distance between the empirical measures of the rows
//! of A and B (Euclidean ground distance). Coordinates with zero variance
//! in B are centered only; a message is appended to `warnings`.
inline double
wasserstein2(const Eigen::MatrixXd& a_in, const Eigen::MatrixXd& b_in,
             const W2Options& options = {}, std::vector<std::string>* warnings = nullptr)
{
  if (a_in.rows() < 1 || b_in.rows() < 1) {
    throw std::invalid_argument("wasserstein2 needs nonempty sets");
  }
  if (a_in.cols() != b_in.cols()) {
    throw std::invalid_argument("wasserstein2 dimension mismatch");
  }
  Eigen::MatrixXd a = a_in, b = b_in;
  const Eigen::Index d = a.cols();
  if (options.standardize) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mu = b.col(j).mean();
      double sd = 0.0;
      if (b.rows() > 1) {
        sd = std::sqrt((b.col(j).array() - mu).square().sum() / static_cast<double>(b.rows() - 1));
      }
      a.col(j).array() -= mu;
      b.col(j).array() -= mu;
      if (sd > 0.0) {
        a.col(j) /= sd;
        b.col(j) /= sd;
      } else if (warnings) {
        warnings->push_back("coordinate " + std::to_string(j) +
                            " has zero reference variance; centered only");
      }
    }
  }
  if (d == 1) {
    std::vector<double> va(a.data(), a.data() + a.rows());
    std::vector<double> vb(b.data(), b.data() + b.rows());
    return std::sqrt(detail::w2_squared_1d(std::move(va), std::move(vb)));
  }
  const auto n = static_cast<std::size_t>(a.rows());
  const auto m = static_cast<std::size_t>(b.rows());
  if (n <= options.max_points && m <= options.max_points) {
    return std::sqrt(detail::w2_squared_exact(a, b));
  }
  Rng rng(options.seed);
  double acc = 0.0;
  const std::size_t reps = std::max<std::size_t>(options.repetitions, 1);
  for (std::size_t r = 0; r < reps; ++r) {
    auto ia = rng.sample_without_replacement(n, std::min(n, options.max_points));
    auto ib = rng.sample_without_replacement(m, std::min(m, options.max_points));
    acc += std::sqrt(detail::w2_squared_exact(detail::take_rows(a, ia), detail::take_rows(b, ib)));
  }
  return acc / static_cast<double>(reps);
}

//! W2(model, reference) - W2(corrected, reference).
inline double
improvement_iw2(const Eigen::MatrixXd& corrected, const Eigen::MatrixXd& model,
                const Eigen::MatrixXd& reference, const W2Options& options = {})
{
  return wasserstein2(model, reference, options) - wasserstein2(corrected, reference, options);
}

//! Fraction of rows of D that are componentwise <= x.
inline double
empirical_joint_cdf(const Eigen::MatrixXd& data, std::span<const double> x)
{
  if (data.rows() < 1) {
    throw std::invalid_argument("empirical_joint_cdf needs at least one row");
  }
  if (static_cast<std::size_t>(data.cols()) != x.size()) {
    throw std::invalid_argument("empirical_joint_cdf dimension mismatch");
  }
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    bool below = true;
    for (Eigen::Index j = 0; j < data.cols() && below; ++j) {
      below = data(i, j) <= x[static_cast<std::size_t>(j)];
    }
    count += below;
  }
  return static_cast<double>(count) / static_cast<double>(data.rows());
}

struct MciResult
{
  std::vector<double> series;
  double mean{ 0.0 };
  bool non_invasive() const { return mean < mci_threshold; }
};

//! Model-correction inconsistency: per time step, the absolute change of
//! each set's own empirical joint non-exceedance probability.
inline MciResult
mci(const Eigen::MatrixXd& model, const Eigen::MatrixXd& corrected)
{
  if (model.rows() != corrected.rows()) {
    throw std::invalid_argument("mci: row counts differ (" + std::to_string(model.rows()) +
                                " vs " + std::to_string(corrected.rows()) + ")");
  }
  if (model.cols() != corrected.cols()) {
    throw std::invalid_argument("mci: dimension mismatch");
  }
  MciResult r;
  const auto n = static_cast<std::size_t>(model.rows());
  r.series.resize(n);
  if (n == 0) {
    return r;
  }
  // row-major copies for cache-friendly scans
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> mm = model;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cc = corrected;
  const auto d = static_cast<std::size_t>(model.cols());
  auto joint = [&](const auto& m, std::size_t t) {
    const double* x = m.data() + t * d;
    std::size_t count = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const double* y = m.data() + s * d;
      std::size_t j = 0;
      while (j < d && y[j] <= x[j]) {
        ++j;
      }
      count += j == d;
    }
    return static_cast<double>(count) / static_cast<double>(n);
  };
  double acc = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    r.series[t] = std::fabs(joint(mm, t) - joint(cc, t));
    acc += r.series[t];
  }
  r.mean = acc / static_cast<double>(n);
  return r;
}

//! Empirical randomized PIT of every column (one seeded jitter for ties).
inline Eigen::MatrixXd
pseudo_observations(const Eigen::MatrixXd& x, std::uint64_t seed)
{
  Eigen::MatrixXd u(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<double> col(x.col(j).data(), x.col(j).data() + x.rows());
    const auto obs = empirical_pseudo_obs(col);
    Rng rng(combine_seed(seed, static_cast<std::uint64_t>(j)));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      u(i, j) = obs[static_cast<std::size_t>(i)].jitter(rng.uniform());
    }
  }
  return u;
}

//! Metrics of one corrected unit.
struct UnitMetrics
{
  std::string chunk;
  std::int64_t member{ 0 };
  double w2_model{ 0.0 };
  double w2_corrected{ 0.0 };
  double iw2{ 0.0 };
  double mci{ 0.0 };
  bool non_invasive{ true };
  std::vector<double> margin_iw2;
  double copula_iw2{ 0.0 };
  std::vector<double> mci_series;
};

//! Evaluates a corrected set against the uncorrected model data and the
//! reference. Multivariate W2 is standardized by the reference; margins
//! are compared on the original scale and copulas on each set's own PIT.
inline UnitMetrics
evaluate_unit(const Eigen::MatrixXd& model, const Eigen::MatrixXd& corrected,
              const Eigen::MatrixXd& reference, std::uint64_t seed,
              std::vector<std::string>* warnings = nullptr)
{
  UnitMetrics u;
  W2Options opts;
  opts.seed = combine_seed(seed, "w2");
  u.w2_model = wasserstein2(model, reference, opts, warnings);
  u.w2_corrected = wasserstein2(corrected, reference, opts, warnings);
  u.iw2 = u.w2_model - u.w2_corrected;
  const auto m = mci(model, corrected);
  u.mci = m.mean;
  u.non_invasive = m.non_invasive();
  u.mci_series = m.series;

  W2Options raw;
  raw.standardize = false;
  raw.seed = opts.seed;
  for (Eigen::Index j = 0; j < model.cols(); ++j) {
    u.margin_iw2.push_back(wasserstein2(model.col(j), reference.col(j), raw) -
                           wasserstein2(corrected.col(j), reference.col(j), raw));
  }
  const auto pm = pseudo_observations(model, combine_seed(seed, "pit-model"));
  const auto pc = pseudo_observations(corrected, combine_seed(seed, "pit-corrected"));
  const auto pr = pseudo_observations(reference, combine_seed(seed, "pit-reference"));
  u.copula_iw2 = wasserstein2(pm, pr, raw) - wasserstein2(pc, pr, raw);
  return u;
}

struct Summary
{
  double median{ 0.0 };
  double q1{ 0.0 };
  double q3{ 0.0 };
};

inline Summary
summarize(const std::vector<double>& v)
{
  if (v.empty()) {
    return {};
  }
  return { stats::quantile(v, 0.5), stats::quantile(v, 0.25), stats::quantile(v, 0.75) };
}

//! Aggregates over units.
struct MetricAggregates
{
  std::size_t units{ 0 };
  Summary iw2;
  Summary mci;
  Summary copula_iw2;
  std::vector<Summary> margin_iw2;
  double share_improved{ 0.0 };
  double share_non_invasive{ 0.0 };
};

inline MetricAggregates
aggregate(const std::vector<UnitMetrics>& units)
{
  MetricAggregates a;
  a.units = units.size();
  if (units.empty()) {
    return a;
  }
  std::vector<double> iw2, mcis, cop;
  std::size_t improved = 0, calm = 0;
  const std::size_t d = units.front().margin_iw2.size();
  std::vector<std::vector<double>> margins(d);
  for (const auto& u : units) {
    iw2.push_back(u.iw2);
    mcis.push_back(u.mci);
    cop.push_back(u.copula_iw2);
    improved += u.iw2 > 0.0;
    calm += u.non_invasive;
    for (std::size_t j = 0; j < d && j < u.margin_iw2.size(); ++j) {
      margins[j].push_back(u.margin_iw2[j]);
    }
  }
  a.iw2 = summarize(iw2);
  a.mci = summarize(mcis);
  a.copula_iw2 = summarize(cop);
  for (const auto& m : margins) {
    a.margin_iw2.push_back(summarize(m));
  }
  a.share_improved = static_cast<double>(improved) / static_cast<double>(units.size());
  a.share_non_invasive = static_cast<double>(calm) / static_cast<double>(units.size());
  return a;
}

} // namespace vbc
