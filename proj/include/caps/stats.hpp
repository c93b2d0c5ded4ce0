// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace caps::stats {

// standard normal CDF
double normal_cdf(double x);

// log of the binomial coefficient C(n, k) via lgamma
double log_binom(double n, double k);

// numerically stable log(sum(exp(xs)))
double log_sum_exp(const std::vector<double>& xs);

// Student-t CDF (via the regularized incomplete beta function)
double student_t_cdf(double t, double dof);

// two-sided (1-alpha) critical value of the Student-t distribution,
// e.g. t_quantile(0.975, dof) for a 95% confidence interval
double t_quantile(double p, double dof);

// Pearson chi-square statistic for an r x c contingency table (row-major);
// rows/columns with zero totals contribute nothing
double chi_square_statistic(const std::vector<std::vector<double>>& table);

struct MeanCi {
  int n = 0;
  double mean = 0;
  double ci_low = 0;
  double ci_high = 0;
  bool degenerate = false;  // n < 2: CI collapses to the point estimate
};

// mean with a 95% t-distribution confidence interval
MeanCi mean_ci95(const std::vector<double>& xs);

}  // namespace caps::stats
