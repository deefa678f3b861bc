#pragma once

// Log-log regression and power-law quadrature for rate fits.

#include <string>
#include <vector>

namespace latscat {

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;  // log y at x = 1
  double r_squared = 0.0;
  int points = 0;
  bool sufficient = false;
  std::string note;  // "insufficient range" etc. when !sufficient
};

/// Least-squares fit of log y = slope * log x + intercept over samples with
/// x in [x_min, x_max]. Fewer than `min_points` usable samples, a span
/// x_max/x_min below `min_ratio` or non-positive values give sufficient = false.
LogLogFit log_log_fit(const std::vector<double>& x, const std::vector<double>& y,
                      double x_min = 0.0, double x_max = 1e300, int min_points = 3,
                      double min_ratio = 2.0);

/// Ordinary least squares y = slope * x + intercept.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

/// int_{t_a}^{t_b} g dt with g interpolated as a power law between samples
/// (linear where a sample vanishes). t must be increasing.
double power_law_integral(const std::vector<double>& t, const std::vector<double>& g,
                          double t_a, double t_b);

}  // namespace latscat
