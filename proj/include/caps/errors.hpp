// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace caps {

// Malformed or inconsistent run configuration / input files. CLI exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Privacy target cannot be met (calibration failed, etc.). CLI exit code 3.
struct privacy_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss or gradient). Carries the loss trace
// accumulated up to the abort so the failure point is visible. Exit code 4.
struct numerical_error : std::runtime_error {
  numerical_error(const std::string& what, std::vector<double> trace_so_far)
      : std::runtime_error(what), trace(std::move(trace_so_far)) {}
  explicit numerical_error(const std::string& what)
      : std::runtime_error(what) {}
  std::vector<double> trace;
};

}  // namespace caps
