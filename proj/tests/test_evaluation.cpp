#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vbc/core/random.hpp"
#include "vbc/core/stats.hpp"
#include "vbc/evaluation.hpp"

using namespace vbc;

namespace {

Eigen::MatrixXd
gaussian_cloud(std::size_t n, std::size_t d, double shift, std::uint64_t seed)
{
  Rng rng(seed);
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x(i, j) = stats::qnorm(rng.uniform_open()) + (j == 0 ? shift : 0.0);
    }
  }
  return x;
}

// minimum over all permutations of the mean squared distance
double
brute_force_w2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  std::vector<int> p(a.rows());
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do {
    double c = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      c += (a.row(i) - b.row(p[i])).squaredNorm();
    }
    best = std::min(best, c / a.rows());
  } while (std::next_permutation(p.begin(), p.end()));
  return std::sqrt(best);
}

W2Options
raw()
{
  W2Options o;
  o.standardize = false;
  return o;
}

} // namespace

TEST(Wasserstein, Anchors)
{
  const auto a = gaussian_cloud(300, 3, 0.0, 1);
  EXPECT_EQ(wasserstein2(a, a, raw()), 0.0);
  Eigen::MatrixXd z(1, 1), o(1, 1);
  z << 0.0;
  o << 1.0;
  EXPECT_DOUBLE_EQ(wasserstein2(z, o, raw()), 1.0);
}

TEST(Wasserstein, GaussianMeanShift)
{
  const auto a = gaussian_cloud(5000, 2, 0.0, 2);
  const auto b = gaussian_cloud(5000, 2, 1.0, 3);
  EXPECT_NEAR(wasserstein2(a, b, raw()), 1.0, 0.1);
}

TEST(Wasserstein, ExactTransportMatchesPermutationSearch)
{
  Rng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 2 + rng.below(6);
    const auto a = gaussian_cloud(n, 2, 0.0, 100 + rep);
    const auto b = gaussian_cloud(n, 2, 0.5, 200 + rep);
    EXPECT_NEAR(wasserstein2(a, b, raw()), brute_force_w2(a, b), 1e-12);
  }
}

TEST(Wasserstein, UnequalSizesMatchQuantileCoupling)
{
  // a second constant coordinate routes the problem through the simplex
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 3 + rng.below(40), m = 3 + rng.below(40);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, 2), b = Eigen::MatrixXd::Zero(m, 2);
    for (std::size_t i = 0; i < n; ++i) {
      a(i, 0) = stats::qnorm(rng.uniform_open());
    }
    for (std::size_t j = 0; j < m; ++j) {
      b(j, 0) = 1.5 * stats::qnorm(rng.uniform_open()) + 0.3;
    }
    EXPECT_NEAR(wasserstein2(a, b, raw()), wasserstein2(a.col(0), b.col(0), raw()), 1e-10);
  }
}

TEST(Wasserstein, OneDimensionalClosedForm)
{
  Eigen::MatrixXd a(2, 1), b(3, 1);
  a << 0.0, 1.0;
  b << 0.0, 0.0, 3.0;
  // quantile coupling: [0,1/2): 0-0, [1/2,2/3): 1-0, [2/3,1): 1-3
  const double expected = std::sqrt(0.5 * 0 + (1.0 / 6) * 1 + (1.0 / 3) * 4);
  EXPECT_NEAR(wasserstein2(a, b, raw()), expected, 1e-15);
}

TEST(Wasserstein, SymmetryAndTriangleInequality)
{
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const auto a = gaussian_cloud(5 + rng.below(30), 1, 0.0, 300 + rep);
    const auto b = gaussian_cloud(5 + rng.below(30), 1, 0.7, 400 + rep);
    const auto c = gaussian_cloud(5 + rng.below(30), 1, -0.4, 500 + rep);
    const double ab = wasserstein2(a, b, raw()), ba = wasserstein2(b, a, raw());
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(wasserstein2(a, c, raw()), ab + wasserstein2(b, c, raw()) + 1e-12);
  }
  const auto a = gaussian_cloud(40, 2, 0.0, 7);
  const auto b = gaussian_cloud(60, 2, 0.3, 8);
  EXPECT_NEAR(wasserstein2(a, b, raw()), wasserstein2(b, a, raw()), 1e-10);
}

TEST(Wasserstein, StandardizationByReference)
{
  auto a = gaussian_cloud(200, 2, 0.0, 9);
  auto b = gaussian_cloud(200, 2, 0.0, 10);
  Eigen::MatrixXd a2 = a, b2 = b;
  a2.col(1) *= 1000.0;
  b2.col(1) *= 1000.0;
  // rescaling a coordinate of both sets leaves the standardized distance unchanged
  EXPECT_NEAR(wasserstein2(a, b), wasserstein2(a2, b2), 1e-9);
  b2.col(0).setConstant(2.0);
  std::vector<std::string> warnings;
  wasserstein2(a2, b2, {}, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Wasserstein, SubsamplingIsSeeded)
{
  const auto a = gaussian_cloud(700, 2, 0.0, 11);
  const auto b = gaussian_cloud(900, 2, 0.5, 12);
  W2Options o = raw();
  o.seed = 3;
  EXPECT_EQ(wasserstein2(a, b, o), wasserstein2(a, b, o));
}

TEST(Improvement, Identities)
{
  const auto model = gaussian_cloud(300, 2, 1.0, 13);
  const auto ref = gaussian_cloud(300, 2, 0.0, 14);
  EXPECT_EQ(improvement_iw2(model, model, ref), 0.0);
  EXPECT_NEAR(improvement_iw2(ref, model, ref), wasserstein2(model, ref), 1e-15);
  EXPECT_GE(improvement_iw2(ref, model, ref), 0.0);
}

TEST(EmpiricalJointCdf, Basics)
{
  Eigen::MatrixXd d(3, 2);
  d << 1, 5, 2, 4, 3, 6;
  EXPECT_EQ(empirical_joint_cdf(d, std::vector<double>{ 0, 0 }), 0.0);
  EXPECT_EQ(empirical_joint_cdf(d, std::vector<double>{ 3, 6 }), 1.0);
  Eigen::MatrixXd s(5, 1);
  s << 0.1, 0.4, 0.9, 1.3, 2.0;
  for (int k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(empirical_joint_cdf(s, std::vector<double>{ s(k, 0) }), (k + 1) / 5.0);
  }
}

TEST(EmpiricalJointCdf, MatchesIndependentCount)
{
  Rng rng(15);
  Eigen::MatrixXd d(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      d(i, j) = static_cast<double>(rng.below(5));
    }
  }
  for (Eigen::Index t = 0; t < 50; ++t) {
    int count = 0;
    for (Eigen::Index i = 0; i < 50; ++i) {
      count += (d(i, 0) <= d(t, 0)) && (d(i, 1) <= d(t, 1)) && (d(i, 2) <= d(t, 2));
    }
    const std::vector<double> x = { d(t, 0), d(t, 1), d(t, 2) };
    EXPECT_EQ(empirical_joint_cdf(d, x), count / 50.0);
  }
}

TEST(Mci, IdentityAndHandComputedCase)
{
  const auto m = gaussian_cloud(100, 3, 0.0, 16);
  const auto r = mci(m, m);
  EXPECT_EQ(r.mean, 0.0);
  EXPECT_TRUE(std::all_of(r.series.begin(), r.series.end(), [](double x) { return x == 0.0; }));

  Eigen::MatrixXd a(2, 1), b(2, 1);
  a << 1, 2;
  b << 2, 1;
  const auto h = mci(a, b);
  EXPECT_EQ(h.series, (std::vector<double>{ 0.5, 0.5 }));
  EXPECT_EQ(h.mean, 0.5);
  EXPECT_THROW(mci(a, gaussian_cloud(3, 1, 0, 1)), std::invalid_argument);
}

TEST(Mci, ThresholdClassification)
{
  MciResult r;
  r.mean = 0.049;
  EXPECT_TRUE(r.non_invasive());
  r.mean = 0.051;
  EXPECT_FALSE(r.non_invasive());
}

TEST(Mci, BoundedOnRandomPairs)
{
  Rng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(100);
    const auto a = gaussian_cloud(n, 1 + rng.below(4), 0.0, 1000 + rep);
    const auto b = gaussian_cloud(n, a.cols(), 0.3, 2000 + rep);
    const auto r = mci(a, b);
    for (double s : r.series) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(Aggregates, MatchRecomputation)
{
  std::vector<UnitMetrics> units(5);
  for (int k = 0; k < 5; ++k) {
    units[k].iw2 = k - 1.0;
    units[k].mci = 0.02 * k;
    units[k].non_invasive = units[k].mci < mci_threshold;
    units[k].margin_iw2 = { 0.1 * k };
  }
  const auto a = aggregate(units);
  EXPECT_DOUBLE_EQ(a.iw2.median, 1.0);
  EXPECT_DOUBLE_EQ(a.iw2.q1, 0.0);
  EXPECT_DOUBLE_EQ(a.iw2.q3, 2.0);
  EXPECT_DOUBLE_EQ(a.share_improved, 0.6);
  EXPECT_DOUBLE_EQ(a.share_non_invasive, 0.6);
  EXPECT_EQ(aggregate({}).units, 0u);
}
