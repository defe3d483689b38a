#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

namespace vbc::stats {

inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double inf = std::numeric_limits<double>::infinity();

inline double
dnorm(double x)
{
  return 0.3989422804014326779399461 * std::exp(-0.5 * x * x);
}

inline double
pnorm(double x)
{
  return 0.5 * std::erfc(-x * 0.7071067811865475244008444);
}

inline double
qnorm(double p)
{
  if (p <= 0.0) {
    return -inf;
  }
  if (p >= 1.0) {
    return inf;
  }
  return -1.4142135623730950488016887 * boost::math::erfc_inv(2.0 * p);
}

//! Bivariate standard normal upper orthant probability
//! P(X > h, Y > k) with correlation r. Drezner-Wesolowsky / Genz
//! algorithm with Gauss-Legendre rules of order 6, 12 or 20 depending
//! on |r|; accurate to about 1e-15.
inline double
bvn_upper(double h, double k, double r)
{
  if (h == inf || k == inf) {
    return 0.0;
  }
  if (h == -inf) {
    return k == -inf ? 1.0 : pnorm(-k);
  }
  if (k == -inf) {
    return pnorm(-h);
  }
  if (r == 0.0) {
    return pnorm(-h) * pnorm(-k);
  }

  static constexpr std::array<double, 3> w6{ 0.1713244923791705,
                                             0.3607615730481384,
                                             0.4679139345726904 };
  static constexpr std::array<double, 3> x6{ 0.9324695142031522,
                                             0.6612093864662647,
                                             0.2386191860831970 };
  static constexpr std::array<double, 6> w12{ 0.04717533638651177,
                                              0.1069393259953183,
                                              0.1600783285433464,
                                              0.2031674267230659,
                                              0.2334925365383547,
                                              0.2491470458134029 };
  static constexpr std::array<double, 6> x12{ 0.9815606342467191,
                                              0.9041172563704750,
                                              0.7699026741943050,
                                              0.5873179542866171,
                                              0.3678314989981802,
                                              0.1252334085114692 };
  static constexpr std::array<double, 10> w20{
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
    0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
    0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
    0.1527533871307259
  };
  static constexpr std::array<double, 10> x20{
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
    0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
    0.07652652113349733
  };

  std::span<const double> w, x;
  const double ar = std::fabs(r);
  if (ar < 0.3) {
    w = w6;
    x = x6;
  } else if (ar < 0.75) {
    w = w12;
    x = x12;
  } else {
    w = w20;
    x = x20;
  }

  const double tp = 2.0 * pi;
  double hk = h * k;
  double bvn = 0.0;

  if (ar < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (double sign : { -1.0, 1.0 }) {
        const double sn = std::sin(asr * (1.0 + sign * x[i]));
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return std::clamp(bvn * asr / tp + pnorm(-h) * pnorm(-k), 0.0, 1.0);
  }

  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (ar < 1.0) {
    const double as = 1.0 - r * r;
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 80.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0) {
      bvn = a * std::exp(asr) *
            (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
    }
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(tp) * pnorm(-b / a);
      bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a /= 2.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (double sign : { -1.0, 1.0 }) {
        const double xs = std::pow(a * (1.0 + sign * x[i]), 2);
        const double asr_i = -(bs / xs + hk) / 2.0;
        if (asr_i > -100.0) {
          const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
          const double rs = std::sqrt(1.0 - xs);
          const double ep =
            std::exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
          acc += w[i] * std::exp(asr_i) * (sp - ep);
        }
      }
    }
    bvn = (a * acc - bvn) / tp;
  }
  if (r > 0.0) {
    bvn += pnorm(-std::max(h, k));
  } else if (h >= k) {
    bvn = -bvn;
  } else {
    const double l = h < 0.0 ? pnorm(k) - pnorm(h) : pnorm(-h) - pnorm(-k);
    bvn = l - bvn;
  }
  return std::clamp(bvn, 0.0, 1.0);
}

//! Bivariate standard normal CDF P(X <= h, Y <= k) with correlation r.
inline double
pbvnorm(double h, double k, double r)
{
  return bvn_upper(-h, -k, r);
}

namespace detail {

// Merge sort counting exchanges (Knight's algorithm). Sorts `y` in place
// within [lo, hi) and returns the number of swaps.
inline long long
merge_count(std::vector<double>& y, std::vector<double>& buf, std::size_t lo,
            std::size_t hi)
{
  if (hi - lo < 2) {
    return 0;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  long long swaps = merge_count(y, buf, lo, mid) + merge_count(y, buf, mid, hi);
  std::size_t i = lo, j = mid, out = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      swaps += static_cast<long long>(mid - i);
      buf[out++] = y[j++];
    } else {
      buf[out++] = y[i++];
    }
  }
  while (i < mid) {
    buf[out++] = y[i++];
  }
  while (j < hi) {
    buf[out++] = y[j++];
  }
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi),
            y.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

// number of tied pairs in a sorted sequence
inline long long
tied_pairs(std::span<const double> sorted)
{
  long long ties = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      ties += static_cast<long long>(run) * static_cast<long long>(run - 1) / 2;
      run = 1;
    }
  }
  return ties;
}

} // namespace detail

//! Kendall's tau-b in O(n log n). Returns 0 when either margin is constant.
inline double
kendall_tau_b(std::span<const double> x, std::span<const double> y)
{
  const std::size_t n = x.size();
  if (y.size() != n) {
    throw std::invalid_argument("kendall_tau_b: size mismatch");
  }
  if (n < 2) {
    return 0.0;
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[perm[i]];
    ys[i] = y[perm[i]];
  }

  const long long n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  const long long n1 = detail::tied_pairs(xs);

  // pairs tied in both x and y
  long long n3 = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && xs[i] == xs[i - 1] && ys[i] == ys[i - 1]) {
      ++run;
    } else {
      n3 += static_cast<long long>(run) * static_cast<long long>(run - 1) / 2;
      run = 1;
    }
  }

  std::vector<double> buf(n);
  const long long swaps = detail::merge_count(ys, buf, 0, n);
  const long long n2 = detail::tied_pairs(ys);

  const double denom = std::sqrt(static_cast<double>(n0 - n1)) *
                       std::sqrt(static_cast<double>(n0 - n2));
  if (denom == 0.0) {
    return 0.0;
  }
  const double num =
    static_cast<double>(n0 - n1 - n2 + n3) - 2.0 * static_cast<double>(swaps);
  return std::clamp(num / denom, -1.0, 1.0);
}

//! One-sample Kolmogorov-Smirnov statistic against Uniform[0, 1].
inline double
ks_uniform(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = std::clamp(v[i], 0.0, 1.0);
    d = std::max({ d, (static_cast<double>(i) + 1.0) / n - f,
                   f - static_cast<double>(i) / n });
  }
  return d;
}

//! Two-sample Kolmogorov-Smirnov statistic.
inline double
ks_two_sample(std::vector<double> a, std::vector<double> b)
{
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) {
      ++i;
    }
    while (j < b.size() && b[j] <= t) {
      ++j;
    }
    d = std::max(d, std::fabs(static_cast<double>(i) / na -
                              static_cast<double>(j) / nb));
  }
  return d;
}

//! Empirical quantile with linear interpolation (type 7).
inline double
quantile(std::vector<double> v, double p)
{
  if (v.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline double
mean(std::span<const double> v)
{
  if (v.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

//! Sample standard deviation (n - 1 denominator).
inline double
stddev(std::span<const double> v)
{
  if (v.size() < 2) {
    return 0.0;
  }
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) {
    ss += (x - m) * (x - m);
  }
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

//! Average ranks (1-based), ties receive the mean rank.
inline std::vector<double>
ranks(std::span<const double> v)
{
  const std::size_t n = v.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && v[perm[j]] == v[perm[i]]) {
      ++j;
    }
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      r[perm[k]] = avg;
    }
    i = j;
  }
  return r;
}

inline double
spearman(std::span<const double> x, std::span<const double> y)
{
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

} // namespace vbc::stats
