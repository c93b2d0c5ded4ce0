// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace caps::privacy {

// Poisson-subsampled Gaussian mechanism composed over `steps` iterations.
struct MechanismSpec {
  double sigma = 1.0;  // noise multiplier
  double q = 1.0;      // Poisson sampling rate in (0,1]
  long steps = 1;

  void validate() const;
};

struct PrivacySpec {
  double epsilon_target = 1.0;  // +inf selects the non-private path
  double delta = 1e-3;
  MechanismSpec mechanism;
  double clipping_norm = 1.0;

  void validate() const;
  bool non_private() const;
};

struct AccountingReport {
  double epsilon_rdp = 0;
  double epsilon_gdp = 0;
  double mu = 0;
  double regret = 0;
};

// RDP curve: (order alpha, composed RDP value) pairs.
struct RdpPoint {
  double alpha;
  double value;
};
using RdpCurve = std::vector<RdpPoint>;

// Orders the accountant evaluates: integers 2..64 plus {1.25, 1.5, 1.75}.
const std::vector<double>& default_orders();

// RDP of the unsubsampled Gaussian mechanism: alpha / (2 sigma^2).
double rdp_gaussian(double sigma, double alpha);

// Per-order RDP of the Poisson-subsampled Gaussian, composed additively over
// the mechanism's steps. Integer orders use the exact binomial expansion of
// E[(mix/base)^alpha]; fractional orders use the convexity upper bound
// (linear interpolation of log A(alpha) between adjacent integers).
RdpCurve rdp_subsampled_gaussian(const MechanismSpec& mech,
                                 const std::vector<double>& orders);

// (eps, delta) from an RDP curve:
// eps = min over orders of rdp + log((a-1)/a) - (log delta + log a)/(a-1),
// clamped at zero.
double rdp_to_epsilon(const RdpCurve& curve, double delta);

// Smallest sigma on a bisection grid (tolerance 1e-3) within [0.3, 100] such
// that the accounted epsilon meets the target. Throws privacy_error when the
// target is unreachable.
double calibrate_noise(double target_epsilon, double delta, double q,
                       long steps);

// CLT approximation of the GDP parameter: mu = q sqrt(K) sqrt(exp(1/s^2)-1).
double gdp_profile(const MechanismSpec& mech);

// The epsilon solving delta = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)
// by bisection on [0, 100] (tolerance 1e-6).
double gdp_epsilon(double mu, double delta);

struct RegretResult {
  double value = 0;
  std::vector<double> grid;
};

// Operational GDP-fit measure:
// max over the grid of |eps_gdp(d) - eps_rdp(d)| / max(1, eps_rdp(d)).
RegretResult regret(const MechanismSpec& mech,
                    const std::vector<double>& delta_grid);

// 50 log-spaced points in [1e-6, 1e-1], the default regret grid.
std::vector<double> default_delta_grid();

// Full report for a mechanism at a given delta.
AccountingReport account(const MechanismSpec& mech, double delta);

}  // namespace caps::privacy
