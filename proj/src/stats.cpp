// SPDX-License-Identifier: Apache-2.0
#include "caps/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace caps::stats {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double log_binom(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

double log_sum_exp(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

namespace {

// regularized incomplete beta I_x(a,b) by Lentz's continued fraction
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-15, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double incbeta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta);
  if (x < (a + 1) / (a + b + 2)) return front * betacf(a, b, x) / a;
  return 1 - std::exp(b * std::log1p(-x) + a * std::log(x) - lbeta) *
                 betacf(b, a, 1 - x) / b;
}

}  // namespace

double student_t_cdf(double t, double dof) {
  if (dof <= 0) throw std::invalid_argument("student_t_cdf: dof must be > 0");
  const double x = dof / (dof + t * t);
  const double p = 0.5 * incbeta(dof / 2.0, 0.5, x);
  return t >= 0 ? 1 - p : p;
}

double t_quantile(double p, double dof) {
  if (p <= 0 || p >= 1) throw std::invalid_argument("t_quantile: p in (0,1)");
  double lo = -1000, hi = 1000;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, dof) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double chi_square_statistic(const std::vector<std::vector<double>>& table) {
  if (table.empty()) throw std::invalid_argument("chi_square: empty table");
  const size_t cols = table[0].size();
  std::vector<double> row_tot(table.size(), 0), col_tot(cols, 0);
  double total = 0;
  for (size_t r = 0; r < table.size(); ++r) {
    if (table[r].size() != cols)
      throw std::invalid_argument("chi_square: ragged table");
    for (size_t c = 0; c < cols; ++c) {
      row_tot[r] += table[r][c];
      col_tot[c] += table[r][c];
      total += table[r][c];
    }
  }
  double stat = 0;
  for (size_t r = 0; r < table.size(); ++r)
    for (size_t c = 0; c < cols; ++c) {
      const double expected = row_tot[r] * col_tot[c] / total;
      if (expected > 0) {
        const double d = table[r][c] - expected;
        stat += d * d / expected;
      }
    }
  return stat;
}

MeanCi mean_ci95(const std::vector<double>& xs) {
  MeanCi out;
  out.n = static_cast<int>(xs.size());
  if (xs.empty()) throw std::invalid_argument("mean_ci95: empty sample");
  double s = 0;
  for (double x : xs) s += x;
  out.mean = s / out.n;
  if (out.n < 2) {
    out.ci_low = out.ci_high = out.mean;
    out.degenerate = true;
    return out;
  }
  double ss = 0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  const double se = std::sqrt(ss / (out.n - 1)) / std::sqrt(out.n);
  const double tq = t_quantile(0.975, out.n - 1);
  out.ci_low = out.mean - tq * se;
  out.ci_high = out.mean + tq * se;
  return out;
}

}  // namespace caps::stats
