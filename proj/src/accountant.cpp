// SPDX-License-Identifier: Apache-2.0
#include "caps/accountant.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "caps/errors.hpp"
#include "caps/stats.hpp"

namespace caps::privacy {

void MechanismSpec::validate() const {
  if (!(sigma > 0)) throw config_error("mechanism: sigma must be > 0");
  if (!(q > 0 && q <= 1)) throw config_error("mechanism: q must be in (0,1]");
  if (steps < 1) throw config_error("mechanism: steps must be >= 1");
}

void PrivacySpec::validate() const {
  if (!non_private() && !(epsilon_target > 0))
    throw config_error("privacy: epsilon target must be > 0");
  if (!(delta > 0 && delta < 1))
    throw config_error("privacy: delta must be in (0,1)");
  if (!(clipping_norm > 0))
    throw config_error("privacy: clipping norm must be > 0");
}

bool PrivacySpec::non_private() const {
  return std::isinf(epsilon_target);
}

const std::vector<double>& default_orders() {
  static const std::vector<double> orders = [] {
    std::vector<double> o{1.25, 1.5, 1.75};
    for (int a = 2; a <= 64; ++a) o.push_back(a);
    return o;
  }();
  return orders;
}

double rdp_gaussian(double sigma, double alpha) {
  if (!(sigma > 0)) throw std::invalid_argument("rdp_gaussian: sigma must be > 0");
  if (!(alpha > 1)) throw std::invalid_argument("rdp_gaussian: alpha must be > 1");
  return alpha / (2 * sigma * sigma);
}

namespace {

// log A(alpha) = log E_{x~N(0,s^2)}[(((1-q)N(0,s^2)+qN(1,s^2))/N(0,s^2))^a]
// for integer alpha via the binomial expansion; each term in log domain.
double log_a_int(double sigma, double q, int alpha) {
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(alpha) + 1);
  for (int j = 0; j <= alpha; ++j) {
    double lt = stats::log_binom(alpha, j);
    if (j > 0) lt += j * std::log(q);
    if (j < alpha) lt += (alpha - j) * std::log1p(-q);
    lt += (static_cast<double>(j) * j - j) / (2 * sigma * sigma);
    terms.push_back(lt);
  }
  return stats::log_sum_exp(terms);
}

}  // namespace

RdpCurve rdp_subsampled_gaussian(const MechanismSpec& mech,
                                 const std::vector<double>& orders) {
  mech.validate();
  if (orders.empty())
    throw std::invalid_argument("rdp_subsampled_gaussian: no orders");
  for (double a : orders)
    if (!(a > 1))
      throw std::invalid_argument("rdp_subsampled_gaussian: order " +
                                  std::to_string(a) + " must be > 1");

  RdpCurve curve;
  curve.reserve(orders.size());
  const double k = static_cast<double>(mech.steps);
  for (double a : orders) {
    double per_step;
    if (mech.q == 1.0) {
      per_step = a / (2 * mech.sigma * mech.sigma);
    } else if (a == std::floor(a)) {
      per_step = log_a_int(mech.sigma, mech.q, static_cast<int>(a)) / (a - 1);
    } else {
      // convexity upper bound: log A is convex in alpha with log A(1) = 0
      const int lo = static_cast<int>(std::floor(a));
      const int hi = lo + 1;
      const double la_lo = lo == 1 ? 0.0 : log_a_int(mech.sigma, mech.q, lo);
      const double la_hi = log_a_int(mech.sigma, mech.q, hi);
      const double la = (hi - a) * la_lo + (a - lo) * la_hi;
      per_step = la / (a - 1);
    }
    curve.push_back({a, k * per_step});
  }
  return curve;
}

double rdp_to_epsilon(const RdpCurve& curve, double delta) {
  if (curve.empty()) throw std::invalid_argument("rdp_to_epsilon: empty curve");
  if (!(delta > 0 && delta < 1))
    throw std::invalid_argument("rdp_to_epsilon: delta must be in (0,1)");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [a, r] : curve) {
    const double eps = r + std::log((a - 1) / a) -
                       (std::log(delta) + std::log(a)) / (a - 1);
    best = std::min(best, eps);
  }
  return std::max(best, 0.0);
}

namespace {
double accounted_epsilon(double sigma, double q, long steps, double delta) {
  MechanismSpec m{sigma, q, steps};
  return rdp_to_epsilon(rdp_subsampled_gaussian(m, default_orders()), delta);
}
}  // namespace

double calibrate_noise(double target_epsilon, double delta, double q,
                       long steps) {
  if (!(target_epsilon > 0))
    throw std::invalid_argument("calibrate_noise: target epsilon must be > 0");
  constexpr double kSigmaLo = 0.3, kSigmaHi = 100.0, kTol = 1e-3;
  if (accounted_epsilon(kSigmaHi, q, steps, delta) > target_epsilon)
    throw privacy_error(
        "calibrate_noise: target epsilon " + std::to_string(target_epsilon) +
        " unreachable with sigma <= " + std::to_string(kSigmaHi) +
        " (q=" + std::to_string(q) + ", steps=" + std::to_string(steps) +
        ", delta=" + std::to_string(delta) + ")");
  if (accounted_epsilon(kSigmaLo, q, steps, delta) <= target_epsilon)
    return kSigmaLo;
  double lo = kSigmaLo, hi = kSigmaHi;
  while (hi - lo > kTol) {
    const double mid = 0.5 * (lo + hi);
    if (accounted_epsilon(mid, q, steps, delta) <= target_epsilon)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

double gdp_profile(const MechanismSpec& mech) {
  mech.validate();
  return mech.q * std::sqrt(static_cast<double>(mech.steps)) *
         std::sqrt(std::expm1(1.0 / (mech.sigma * mech.sigma)));
}

namespace {
double gdp_delta(double eps, double mu) {
  return stats::normal_cdf(-eps / mu + mu / 2) -
         std::exp(eps) * stats::normal_cdf(-eps / mu - mu / 2);
}
}  // namespace

double gdp_epsilon(double mu, double delta) {
  if (!(mu > 0)) throw std::invalid_argument("gdp_epsilon: mu must be > 0");
  if (!(delta > 0 && delta < 1))
    throw std::invalid_argument("gdp_epsilon: delta must be in (0,1)");
  constexpr double kEpsHi = 100.0, kTol = 1e-6;
  if (gdp_delta(0.0, mu) <= delta) return 0.0;
  if (gdp_delta(kEpsHi, mu) > delta)
    throw privacy_error("gdp_epsilon: no root in [0, 100] for mu=" +
                        std::to_string(mu));
  double lo = 0.0, hi = kEpsHi;
  while (hi - lo > kTol) {
    const double mid = 0.5 * (lo + hi);
    if (gdp_delta(mid, mu) > delta)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> default_delta_grid() {
  std::vector<double> grid;
  const int n = 50;
  const double lo = std::log(1e-6), hi = std::log(1e-1);
  for (int i = 0; i < n; ++i)
    grid.push_back(std::exp(lo + (hi - lo) * i / (n - 1)));
  return grid;
}

RegretResult regret(const MechanismSpec& mech,
                    const std::vector<double>& delta_grid) {
  mech.validate();
  if (delta_grid.empty()) throw std::invalid_argument("regret: empty grid");
  for (double d : delta_grid)
    if (!(d > 0 && d < 1))
      throw std::invalid_argument("regret: delta must be in (0,1)");
  const RdpCurve curve = rdp_subsampled_gaussian(mech, default_orders());
  const double mu = gdp_profile(mech);
  RegretResult out;
  out.grid = delta_grid;
  for (double d : delta_grid) {
    const double er = rdp_to_epsilon(curve, d);
    const double eg = gdp_epsilon(mu, d);
    out.value = std::max(out.value, std::fabs(eg - er) / std::max(1.0, er));
  }
  return out;
}

AccountingReport account(const MechanismSpec& mech, double delta) {
  AccountingReport r;
  const RdpCurve curve = rdp_subsampled_gaussian(mech, default_orders());
  r.epsilon_rdp = rdp_to_epsilon(curve, delta);
  r.mu = gdp_profile(mech);
  r.epsilon_gdp = gdp_epsilon(r.mu, delta);
  r.regret = regret(mech, default_delta_grid()).value;
  return r;
}

}  // namespace caps::privacy
