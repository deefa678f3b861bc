#include "latscat/extension.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace latscat {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSupport = 1.5 * kPi;

// Trapezoid nodes and weights on [0, 3pi/2] with psi and 1/pi folded in.
struct Quadrature {
  std::vector<double> xi;
  std::vector<double> weight;
};

Quadrature make_quadrature(const WindowFunction& w, int intervals) {
  Quadrature q;
  const double h = kSupport / intervals;
  q.xi.resize(intervals + 1);
  q.weight.resize(intervals + 1);
  for (int i = 0; i <= intervals; ++i) {
    q.xi[i] = i * h;
    const double end = (i == 0 || i == intervals) ? 0.5 : 1.0;
    q.weight[i] = end * h * w.profile(q.xi[i]) / kPi;
  }
  return q;
}

// d^m/ds^m cos(s xi) = xi^m cos(s xi + m pi/2)
double cos_derivative(double s, double xi, int m) {
  const double c = std::cos(s * xi), sn = std::sin(s * xi);
  const double p = std::pow(xi, m);
  switch (m % 4) {
    case 0:
      return p * c;
    case 1:
      return -p * sn;
    case 2:
      return -p * c;
    default:
      return p * sn;
  }
}

}  // namespace

void WindowParameters::validate() const {
  if (!(sharpness > 0)) throw std::invalid_argument("window sharpness must be positive");
  if (radius < 2) throw std::invalid_argument("window radius must be >= 2");
  if (quadrature_points < 768) throw std::invalid_argument("window quadrature needs >= 768 points");
  if (!(table_step > 0 && table_step <= 1.0 / 16))
    throw std::invalid_argument("window table step must lie in (0, 1/16]");
}

WindowFunction::WindowFunction(const WindowParameters& params) : params_(params) {
  params_.validate();
  const Quadrature q = make_quadrature(*this, params_.quadrature_points);
  nodes_ = q.xi;
  weights_ = q.weight;
  const double h = params_.table_step;
  const auto nodes = static_cast<std::size_t>(std::ceil((params_.radius + 2) / h)) + 1;
  table_.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    const double s = i * h;
    std::array<double, 5> acc{};
    for (std::size_t k = 0; k < q.xi.size(); ++k) {
      if (q.weight[k] == 0.0) continue;
      const double x = q.xi[k];
      const double c = std::cos(s * x) * q.weight[k];
      const double sn = std::sin(s * x) * q.weight[k];
      acc[0] += c;
      acc[1] -= x * sn;
      acc[2] -= x * x * c;
      acc[3] += x * x * x * sn;
      acc[4] += x * x * x * x * c;
    }
    table_[i] = acc;
  }
}

double WindowFunction::profile(double xi) const {
  const double a = std::abs(xi);
  if (a <= 0.5 * kPi) return 1.0;
  if (a >= kSupport) return 0.0;
  return smooth_step((kSupport - a) / kPi, params_.sharpness);
}

double WindowFunction::profile(const Vec& xi) const {
  double p = 1.0;
  for (Eigen::Index j = 0; j < xi.size(); ++j) p *= profile(xi[j]);
  return p;
}

double WindowFunction::kernel(double s, int m) const {
  if (m < 0 || m > 3) throw std::invalid_argument("tabulated kernel derivatives are orders 0..3");
  // k is even: k^(m)(-s) = (-1)^m k^(m)(s)
  const double sign = (s < 0 && (m % 2 == 1)) ? -1.0 : 1.0;
  const double a = std::abs(s);
  const double h = params_.table_step;
  const double pos = a / h;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= table_.size()) throw OutOfRangeError("kernel argument beyond the table");
  const double t = pos - static_cast<double>(i);
  // cubic Hermite on [s_i, s_i+1] using k^(m) and k^(m+1)
  const double y0 = table_[i][m], y1 = table_[i + 1][m];
  const double d0 = table_[i][m + 1] * h, d1 = table_[i + 1][m + 1] * h;
  const double t2 = t * t, t3 = t2 * t;
  const double v = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * d0 + (-2 * t3 + 3 * t2) * y1 +
                   (t3 - t2) * d1;
  return sign * v;
}

double WindowFunction::kernel_quadrature(double s, int m, int points) const {
  Quadrature local;
  if (points > 0) local = make_quadrature(*this, points);
  const auto& xs = points > 0 ? local.xi : nodes_;
  const auto& ws = points > 0 ? local.weight : weights_;
  double acc = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k)
    if (ws[k] != 0.0) acc += ws[k] * cos_derivative(s, xs[k], m);
  return acc;
}

double WindowFunction::transferred_kernel(double s, int points) const {
  Quadrature local;
  if (points > 0) local = make_quadrature(*this, points);
  const auto& xs = points > 0 ? local.xi : nodes_;
  const auto& ws = points > 0 ? local.weight : weights_;
  double acc = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (ws[k] == 0.0) continue;
    const double x = xs[k];
    const double ratio = x == 0.0 ? 1.0 : x / (2.0 * std::sin(0.5 * x));
    acc += ws[k] * std::cos((s + 0.5) * x) * ratio;
  }
  return acc;
}

double WindowFunction::chi0(double x) const { return std::sqrt(2.0 * kPi) * kernel(x); }

double WindowFunction::partition_residual(int samples) const {
  double worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double xi = -kPi + 2.0 * kPi * i / (samples - 1);
    double sum = 0.0;
    for (int n = -2; n <= 2; ++n) sum += profile(xi + 2.0 * kPi * n);
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

WindowFunction build_window(const WindowParameters& params) {
  WindowFunction w(params);
  const double residual = w.partition_residual();
  if (residual > 1e-10)
    throw std::runtime_error("window partition-of-unity residual " + std::to_string(residual));
  return w;
}

ExtendedPotential::ExtendedPotential(LatticeFunction source, WindowFunction window)
    : source_(std::move(source)), window_(std::move(window)) {
  const int d = source_.box().dim();
  if (source_.box().half_width() <= window_.parameters().radius + 2)
    throw std::invalid_argument("source box too small for the window radius");
  for (int j = 0; j < d; ++j) {
    std::array<int, kMaxDim> alpha{};
    alpha[j] = 1;
    backward_[j] = discrete_derivative(source_, std::span<const int>(alpha.data(), d));
  }
}

double ExtendedPotential::reliable_radius() const {
  return source_.box().half_width() - window_.parameters().radius - 2;
}

void ExtendedPotential::check_range(const Vec& x) const {
  if (x.size() != dim()) throw std::invalid_argument("evaluation point dimension mismatch");
  if (x.cwiseAbs().maxCoeff() > reliable_radius())
    throw OutOfRangeError("extension evaluated outside its reliable radius");
}

template <typename WeightFn>
double ExtendedPotential::kernel_sum(const Vec& x, const LatticeFunction& data,
                                     WeightFn&& weight) const {
  const int d = dim();
  const int rho = window_.parameters().radius;
  std::array<int, kMaxDim> first{};
  std::array<std::vector<double>, kMaxDim> w;
  for (int j = 0; j < d; ++j) {
    first[j] = static_cast<int>(std::ceil(x[j] - rho));
    const int last = static_cast<int>(std::floor(x[j] + rho));
    w[j].resize(last - first[j] + 1);
    for (int n = first[j]; n <= last; ++n) w[j][n - first[j]] = weight(j, x[j] - n);
  }
  const LatticeBox& box = data.box();
  Site site(d);
  double total = 0.0;
  if (d == 1) {
    for (std::size_t a = 0; a < w[0].size(); ++a) {
      site[0] = first[0] + static_cast<int>(a);
      total += w[0][a] * data[site];
    }
    return total;
  }
  // iterate the cube with an odometer over axes 0..d-1
  std::array<std::size_t, kMaxDim> idx{};
  while (true) {
    double prod = 1.0;
    for (int j = 0; j < d; ++j) {
      prod *= w[j][idx[j]];
      site[j] = first[j] + static_cast<int>(idx[j]);
    }
    total += prod * data.values()[box.index(site)];
    int j = d - 1;
    while (j >= 0 && ++idx[j] == w[j].size()) idx[j--] = 0;
    if (j < 0) break;
  }
  return total;
}

double ExtendedPotential::value(const Vec& x) const {
  check_range(x);
  return kernel_sum(x, source_, [this](int, double s) { return window_.kernel(s); });
}

Vec ExtendedPotential::gradient(const Vec& x, double step) const {
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    g[j] = (value(xp) - value(xm)) / (2.0 * step);
  }
  return g;
}

double ExtendedPotential::derivative(const Vec& x, std::span<const int> alpha,
                                     bool quadrature) const {
  check_range(x);
  if (static_cast<int>(alpha.size()) != dim()) throw std::invalid_argument("multi-index length mismatch");
  return kernel_sum(x, source_, [&](int axis, double s) {
    const int m = alpha[axis];
    if (quadrature || m > 3) return window_.kernel_quadrature(s, m);
    return window_.kernel(s, m);
  });
}

double ExtendedPotential::transferred_derivative(const Vec& x, int axis) const {
  check_range(x);
  if (axis < 0 || axis >= dim()) throw std::invalid_argument("axis out of range");
  return kernel_sum(x, backward_[axis], [&](int j, double s) {
    return j == axis ? window_.transferred_kernel(s) : window_.kernel(s);
  });
}

namespace {

std::vector<Vec> sphere_directions(int dim, int count) {
  std::vector<Vec> dirs;
  if (dim == 1) {
    dirs.push_back(Vec::Constant(1, 1.0));
    dirs.push_back(Vec::Constant(1, -1.0));
    return dirs;
  }
  if (dim == 2) {
    for (int i = 0; i < count; ++i) {
      const double th = 2.0 * kPi * i / count;
      Vec v(2);
      v << std::cos(th), std::sin(th);
      dirs.push_back(v);
    }
    return dirs;
  }
  // Fibonacci lattice on S^2
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(1.0 - z * z);
    Vec v(3);
    v << r * std::cos(golden * i), r * std::sin(golden * i), z;
    dirs.push_back(v);
  }
  return dirs;
}

}  // namespace

DecayProbe symbol_decay_probe(const ExtendedPotential& ext, std::span<const int> alpha,
                              const std::vector<double>& radii, int directions) {
  if (radii.size() < 3) throw std::invalid_argument("decay probe needs at least 3 radii");
  DecayProbe probe;
  probe.radii = radii;
  const auto dirs = sphere_directions(ext.dim(), directions);
  for (double r : radii) {
    double sup = 0.0;
    for (const Vec& u : dirs) sup = std::max(sup, std::abs(ext.derivative(r * u, alpha, true)));
    probe.sup_values.push_back(sup);
  }
  probe.fit = log_log_fit(probe.radii, probe.sup_values);
  if (!probe.fit.sufficient) throw std::invalid_argument("decay probe: " + probe.fit.note);
  return probe;
}

}  // namespace latscat
