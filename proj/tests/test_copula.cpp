#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vbc/copula.hpp"
#include "vbc/core/random.hpp"
#include "vbc/core/stats.hpp"

using namespace vbc;

namespace {

std::vector<BivariateCopula>
zoo()
{
  std::vector<BivariateCopula> out = { BivariateCopula::independence(),
                                       BivariateCopula::gaussian(0.5),
                                       BivariateCopula::gaussian(-0.7),
                                       BivariateCopula::frank(4.0),
                                       BivariateCopula::frank(-6.0) };
  for (int r : { 0, 90, 180, 270 }) {
    out.push_back(BivariateCopula::clayton(2.0, r));
    out.push_back(BivariateCopula::gumbel(1.8, r));
  }
  // asymmetric 3 x 3 doubly stochastic grid
  out.push_back(BivariateCopula::checkerboard(
    { 0.2, 0.1, 1.0 / 30, 0.1, 0.1, 4.0 / 30, 1.0 / 30, 4.0 / 30, 5.0 / 30 }, 3));
  return out;
}

std::pair<std::vector<double>, std::vector<double>>
sample_copula(const BivariateCopula& c, std::size_t n, std::uint64_t seed)
{
  Rng rng(seed);
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = rng.uniform_open();
    v[i] = hfunc_inverse(c, 2, rng.uniform_open(), PseudoObs::continuous(u[i]), 1e-13);
  }
  return { u, v };
}

std::pair<std::vector<double>, std::vector<double>>
sample_gaussian(double rho, std::size_t n, std::uint64_t seed)
{
  Rng rng(seed);
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = stats::qnorm(rng.uniform_open());
    const double z2 = rho * z1 + std::sqrt(1 - rho * rho) * stats::qnorm(rng.uniform_open());
    u[i] = stats::pnorm(z1);
    v[i] = stats::pnorm(z2);
  }
  return { u, v };
}

} // namespace

TEST(BivariateCopula, UniformMargins)
{
  for (const auto& c : zoo()) {
    for (double u : { 0.0, 0.013, 0.25, 0.5, 0.77, 0.999, 1.0 }) {
      EXPECT_NEAR(c.cdf(u, 1.0), u, 1e-9) << c.str();
      EXPECT_NEAR(c.cdf(1.0, u), u, 1e-9) << c.str();
      EXPECT_EQ(c.cdf(u, 0.0), 0.0);
    }
  }
}

TEST(BivariateCopula, PartialsMatchFiniteDifferences)
{
  const double eps = 1e-6;
  for (const auto& c : zoo()) {
    for (double u : { 0.11, 0.37, 0.52, 0.86 }) {
      for (double v : { 0.07, 0.41, 0.69, 0.93 }) {
        const double fd1 = (c.cdf(u + eps, v) - c.cdf(u - eps, v)) / (2 * eps);
        const double fd2 = (c.cdf(u, v + eps) - c.cdf(u, v - eps)) / (2 * eps);
        EXPECT_NEAR(c.d1(u, v), fd1, 1e-6) << c.str() << " " << u << " " << v;
        EXPECT_NEAR(c.d2(u, v), fd2, 1e-6) << c.str() << " " << u << " " << v;
        const double fd12 = (c.cdf(u + eps, v + eps) - c.cdf(u + eps, v - eps) -
                             c.cdf(u - eps, v + eps) + c.cdf(u - eps, v - eps)) /
                            (4 * eps * eps);
        EXPECT_NEAR(c.pdf(u, v), fd12, 2e-3 * std::max(1.0, c.pdf(u, v))) << c.str();
      }
    }
  }
}

TEST(BivariateCopula, TauMatchesQuadrature)
{
  // tau = 1 - 4 * int int d1 * d2
  const int k = 600;
  for (const auto& c : zoo()) {
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const double u = (i + 0.5) / k, v = (j + 0.5) / k;
        acc += c.d1(u, v) * c.d2(u, v);
      }
    }
    EXPECT_NEAR(c.tau(), 1.0 - 4.0 * acc / (k * k), 2e-3) << c.str();
  }
  EXPECT_NEAR(BivariateCopula::gaussian(0.5).tau(), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(BivariateCopula::clayton(2.0).tau(), 0.5, 1e-15);
}

TEST(GenDensity, IndependenceIsOneForEveryPattern)
{
  const auto c = BivariateCopula::independence();
  const auto d = PseudoObs::mixed(0.4, 0.1, true);
  const auto k = PseudoObs::continuous(0.6);
  EXPECT_EQ(gen_density(c, d, d), 1.0);
  EXPECT_EQ(gen_density(c, d, k), 1.0);
  EXPECT_EQ(gen_density(c, k, d), 1.0);
  EXPECT_EQ(gen_density(c, k, k), 1.0);
}

TEST(GenDensity, GaussianRectangleAndDensity)
{
  const auto c = BivariateCopula::gaussian(0.5);
  // Phi_2(qnorm(0.4), qnorm(0.3); 0.5) by 50-digit quadrature
  const double rect = 0.1918906868249182;
  EXPECT_NEAR(gen_density(c, PseudoObs::mixed(0.4, 0.0, true), PseudoObs::mixed(0.3, 0.0, true)),
              rect / 0.12, 1e-12);
  EXPECT_NEAR(gen_density(c, PseudoObs::continuous(0.5), PseudoObs::continuous(0.5)),
              1.0 / std::sqrt(0.75), 1e-14);
}

TEST(GenDensity, TinyJumpIsDomainError)
{
  const auto c = BivariateCopula::gaussian(0.5);
  EXPECT_THROW(gen_density(c, PseudoObs::mixed(0.4, 0.4, true), PseudoObs::continuous(0.3)),
               DomainError);
}

TEST(Hfunc, ClosedForms)
{
  EXPECT_DOUBLE_EQ(hfunc(BivariateCopula::independence(), 1, PseudoObs::continuous(0.3),
                         PseudoObs::continuous(0.8)),
                   0.3);
  EXPECT_NEAR(hfunc(BivariateCopula::clayton(2.0), 2, PseudoObs::continuous(0.5),
                    PseudoObs::continuous(0.5)),
              8.0 * std::pow(7.0, -1.5), 1e-14);
}

TEST(Hfunc, DiscreteConditionerMatchesIntegratedDerivative)
{
  // [C(0.5, 0.4) - C(0.5, 0)] / 0.4, with C(0.5, 0.4) = int_0^0.4 dC/dv(0.5, t) dt
  const double rho = 0.5;
  auto dcdv = [&](double t) {
    return stats::pnorm((0.0 - rho * stats::qnorm(t)) / std::sqrt(1 - rho * rho));
  };
  // Simpson on t = 0.4 * s^2 to tame the endpoint behaviour
  const int k = 20000;
  double acc = 0.0;
  for (int i = 0; i <= k; ++i) {
    const double s = static_cast<double>(i) / k;
    const double w = (i == 0 || i == k) ? 1 : (i % 2 ? 4 : 2);
    acc += w * (s == 0 ? 0.0 : dcdv(0.4 * s * s) * 0.8 * s);
  }
  const double c_val = acc / (3.0 * k);
  const double h = hfunc(BivariateCopula::gaussian(rho), 1, PseudoObs::continuous(0.5),
                         PseudoObs::mixed(0.4, 0.0, true));
  EXPECT_NEAR(h, c_val / 0.4, 1e-9);
}

TEST(Hfunc, DifferenceQuotientConvergesToDerivative)
{
  for (const auto& c : zoo()) {
    if (c.family() == CopulaFamily::independence || c.family() == CopulaFamily::checkerboard) {
      continue;
    }
    const double u = 0.43, t = 0.62;
    const double exact = hfunc(c, 1, PseudoObs::continuous(t), PseudoObs::continuous(u));
    double prev = 1.0;
    for (double jump : { 1e-2, 1e-4, 1e-6 }) {
      const auto cond = PseudoObs::mixed(u + jump / 2, u - jump / 2, true);
      const double err = std::fabs(hfunc(c, 1, PseudoObs::continuous(t), cond) - exact);
      EXPECT_LT(err, prev) << c.str();
      prev = err;
    }
    EXPECT_LT(prev, 1e-4);
  }
}

TEST(Hfunc, BoundedAndMonotoneInTarget)
{
  for (const auto& c : zoo()) {
    for (int dir : { 1, 2 }) {
      for (const auto& cond : { PseudoObs::continuous(0.3), PseudoObs::mixed(0.7, 0.4, true) }) {
        double last = 0.0;
        for (int k = 0; k <= 200; ++k) {
          const double h = hfunc(c, dir, PseudoObs::continuous(k / 200.0), cond);
          EXPECT_GE(h, 0.0);
          EXPECT_LE(h, 1.0);
          EXPECT_GE(h, last - 1e-12) << c.str();
          last = h;
        }
      }
    }
  }
}

TEST(HfuncInverse, RoundTrip)
{
  EXPECT_DOUBLE_EQ(hfunc_inverse(BivariateCopula::independence(), 1, 0.37,
                                 PseudoObs::continuous(0.2)),
                   0.37);
  const auto cl = BivariateCopula::clayton(2.0);
  const auto cond = PseudoObs::continuous(0.6);
  const double h = hfunc(cl, 1, PseudoObs::continuous(0.3), cond);
  EXPECT_NEAR(hfunc_inverse(cl, 1, h, cond), 0.3, 1e-8);
  for (const auto& c : zoo()) {
    for (int dir : { 1, 2 }) {
      for (const auto& cnd : { PseudoObs::continuous(0.8), PseudoObs::mixed(0.5, 0.2, true) }) {
        for (double v : { 0.05, 0.5, 0.93 }) {
          const double u = hfunc_inverse(c, dir, v, cnd);
          EXPECT_NEAR(hfunc(c, dir, PseudoObs::continuous(u), cnd), v, 1e-8) << c.str();
        }
      }
    }
  }
}

TEST(KendallTau, PairsOfReals)
{
  std::vector<std::pair<double, double>> up, down, flat;
  for (int i = 0; i < 50; ++i) {
    up.emplace_back(i, std::exp(0.1 * i));
    down.emplace_back(i, -i * 3.0);
    flat.emplace_back(2.0, i);
  }
  EXPECT_DOUBLE_EQ(kendall_tau(up).tau, 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(down).tau, -1.0);
  const auto f = kendall_tau(flat);
  EXPECT_TRUE(f.degenerate);
  EXPECT_EQ(f.tau, 0.0);

  const auto [u, v] = sample_gaussian(0.5, 10000, 21);
  std::vector<std::pair<double, double>> g;
  for (std::size_t i = 0; i < u.size(); ++i) {
    g.emplace_back(u[i], v[i]);
  }
  EXPECT_NEAR(kendall_tau(g).tau, 2.0 / stats::pi * std::asin(0.5), 0.02);
}

TEST(FitPair, IndependentUniformsSelectIndependence)
{
  int rejected = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    Rng rng(100 + s);
    std::vector<double> u(2000), v(2000);
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = rng.uniform_open();
      v[i] = rng.uniform_open();
    }
    rejected += fit_pair_continuous(u, v).family() != CopulaFamily::independence;
  }
  // rejection rate near the 5% level
  EXPECT_LE(rejected, 6);
}

TEST(FitPair, ComonotoneCapsCorrelation)
{
  Rng rng(3);
  std::vector<double> u(500);
  for (auto& x : u) {
    x = rng.uniform_open();
  }
  PairFitOptions opts;
  opts.family_set = { CopulaFamily::gaussian };
  const auto c = fit_pair_continuous(u, u, opts);
  EXPECT_EQ(c.family(), CopulaFamily::gaussian);
  EXPECT_DOUBLE_EQ(c.parameter(), 0.999);
}

TEST(FitPair, ClaytonTauInversion)
{
  const auto [u, v] = sample_copula(BivariateCopula::clayton(2.0), 5000, 17);
  PairFitOptions opts;
  opts.family_set = { CopulaFamily::clayton };
  const auto c = fit_pair_continuous(u, v, opts);
  EXPECT_EQ(c.family(), CopulaFamily::clayton);
  EXPECT_EQ(c.rotation(), 0);
  EXPECT_NEAR(c.parameter(), 2.0, 0.2);
}

TEST(FitPair, SelectsGeneratingFamily)
{
  const auto [u, v] = sample_copula(BivariateCopula::gumbel(2.0, 180), 3000, 4);
  const auto c = fit_pair_continuous(u, v);
  EXPECT_EQ(c.family(), CopulaFamily::gumbel);
  EXPECT_EQ(c.rotation(), 180);

  const auto [a, b] = sample_copula(BivariateCopula::frank(-5.0), 3000, 5);
  const auto f = fit_pair_continuous(a, b);
  EXPECT_EQ(f.family(), CopulaFamily::frank);
  EXPECT_NEAR(f.tau(), BivariateCopula::frank(-5.0).tau(), 0.03);
}

TEST(FitPair, PermutationInvariant)
{
  auto [u, v] = sample_gaussian(0.4, 400, 8);
  const auto c1 = fit_pair_continuous(u, v);
  Rng rng(1);
  const auto perm = rng.sample_without_replacement(u.size(), u.size());
  std::vector<double> pu, pv;
  for (auto i : perm) {
    pu.push_back(u[i]);
    pv.push_back(v[i]);
  }
  const auto c2 = fit_pair_continuous(pu, pv);
  EXPECT_EQ(c1.family(), c2.family());
  EXPECT_EQ(c1.rotation(), c2.rotation());
  EXPECT_EQ(c1.parameter(), c2.parameter());
}

TEST(FitPair, CheckerboardIsDoublyStochastic)
{
  const auto [u, v] = sample_gaussian(0.6, 20000, 12);
  PairFitOptions opts;
  opts.family_set = { CopulaFamily::checkerboard };
  const auto c = fit_pair_continuous(u, v, opts);
  ASSERT_EQ(c.family(), CopulaFamily::checkerboard);
  const std::size_t m = c.resolution();
  EXPECT_EQ(m, 32u);
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < m; ++j) {
      row += c.grid()[i * m + j];
      col += c.grid()[j * m + i];
    }
    EXPECT_NEAR(row, 1.0 / 32, 1e-9);
    EXPECT_NEAR(col, 1.0 / 32, 1e-9);
  }
  EXPECT_NEAR(c.tau(), 2.0 / stats::pi * std::asin(0.6), 0.05);
}

TEST(FitPair, TooFewObservations)
{
  std::vector<double> u(29, 0.5);
  EXPECT_THROW(fit_pair_continuous(u, u), EstimationError);
}

TEST(BivariateCopula, JsonRoundTrip)
{
  for (const auto& c : zoo()) {
    const auto r = BivariateCopula::from_json(nlohmann::json::parse(c.to_json().dump()));
    EXPECT_EQ(r.family(), c.family());
    EXPECT_EQ(r.rotation(), c.rotation());
    EXPECT_EQ(r.cdf(0.3, 0.6), c.cdf(0.3, 0.6));
  }
}
