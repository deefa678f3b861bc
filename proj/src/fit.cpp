#include "latscat/fit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace latscat {

LogLogFit log_log_fit(const std::vector<double>& x, const std::vector<double>& y, double x_min,
                      double x_max, int min_points, double min_ratio) {
  if (x.size() != y.size()) throw std::invalid_argument("fit inputs differ in length");
  std::vector<double> lx, ly;
  bool nonpositive = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < x_min || x[i] > x_max || !(x[i] > 0)) continue;
    if (!(y[i] > 0) || !std::isfinite(y[i])) {
      nonpositive = true;
      continue;
    }
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  LogLogFit fit;
  fit.points = static_cast<int>(lx.size());
  if (nonpositive) {
    fit.note = "non-positive samples";
    return fit;
  }
  if (fit.points < min_points) {
    fit.note = "insufficient range";
    return fit;
  }
  const auto [lo, hi] = std::minmax_element(lx.begin(), lx.end());
  if (*hi - *lo < std::log(min_ratio)) {
    fit.note = "insufficient range";
    return fit;
  }
  const LinearFit lin = linear_fit(lx, ly);
  fit.slope = lin.slope;
  fit.intercept = lin.intercept;
  double mean = 0.0;
  for (double v : ly) mean += v;
  mean /= ly.size();
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - (lin.slope * lx[i] + lin.intercept);
    ss_res += r * r;
    ss_tot += (ly[i] - mean) * (ly[i] - mean);
  }
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.sufficient = true;
  return fit;
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear fit needs >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) throw std::invalid_argument("linear fit with degenerate abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

namespace {

double segment_integral(double t1, double g1, double t2, double g2, double a, double b) {
  // integral over [a, b] within [t1, t2]
  if (g1 > 0 && g2 > 0 && t1 > 0) {
    const double p = std::log(g2 / g1) / std::log(t2 / t1);
    const double amp = g1 / std::pow(t1, p);
    if (std::abs(p + 1.0) < 1e-12) return amp * std::log(b / a);
    return amp / (p + 1.0) * (std::pow(b, p + 1.0) - std::pow(a, p + 1.0));
  }
  const double slope = (g2 - g1) / (t2 - t1);
  const double ga = g1 + slope * (a - t1);
  const double gb = g1 + slope * (b - t1);
  return 0.5 * (ga + gb) * (b - a);
}

}  // namespace

double power_law_integral(const std::vector<double>& t, const std::vector<double>& g, double t_a,
                          double t_b) {
  if (t.size() != g.size() || t.size() < 2) throw std::invalid_argument("integral needs >= 2 samples");
  if (t_a < t.front() || t_b > t.back() || t_a > t_b)
    throw std::invalid_argument("integration range outside the samples");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    const double a = std::max(t_a, t[i]);
    const double b = std::min(t_b, t[i + 1]);
    if (b <= a) continue;
    total += segment_integral(t[i], g[i], t[i + 1], g[i + 1], a, b);
  }
  return total;
}

}  // namespace latscat
