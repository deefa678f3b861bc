#pragma once

// Smooth interpolation of lattice potentials by a tensor window kernel.
//
// psi is a 1-D momentum profile, equal to 1 on [-pi/2, pi/2], vanishing
// outside [-3pi/2, 3pi/2], with psi(xi) + psi(xi - 2pi) = 1 on the overlap.
// The position kernel used everywhere is normalized so that
//   k(s) = (1/2pi) int e^{i s xi} psi(xi) dxi,   k(m) = delta_{m0} for m in Z,
// and the extension is V~(x) = sum_n prod_j k(x_j - n_j) V[n]. The
// (2pi)^{d/2}-normalized chi0 = (2pi)^{d/2} prod_j k is exposed for reference.

#include "latscat/fit.hpp"
#include "latscat/lattice.hpp"

#include <array>
#include <vector>

namespace latscat {

struct WindowParameters {
  double sharpness = 2.0;    // a in the transition f(s) = exp(-a/s)
  int radius = 40;           // rho, kernel truncation radius per axis
  int quadrature_points = 4096;  // trapezoid intervals on [0, 3pi/2], at least 768
  double table_step = 1.0 / 256.0;

  void validate() const;
};

class WindowFunction {
 public:
  WindowFunction() = default;
  explicit WindowFunction(const WindowParameters& params);

  const WindowParameters& parameters() const { return params_; }

  /// psi(xi); even, supported in [-3pi/2, 3pi/2].
  double profile(double xi) const;
  /// prod_j psi(xi_j)
  double profile(const Vec& xi) const;

  /// d^m/ds^m k(s), m = 0..3, from the cached table.
  double kernel(double s, int m = 0) const;
  /// d^m/ds^m k(s) by direct quadrature (any m >= 0; slower).
  double kernel_quadrature(double s, int m = 0, int points = 0) const;
  /// Kernel for backward differences: k1(s) - k1(s-1) = k'(s).
  double transferred_kernel(double s, int points = 0) const;

  /// (2pi)^{-1/2} int e^{i x xi} psi dxi = sqrt(2pi) k(x), in one dimension.
  double chi0(double x) const;

  /// Largest |sum_{|n|<=2} psi(xi + 2pi n) - 1| over a uniform sweep.
  double partition_residual(int samples = 20001) const;

 private:
  WindowParameters params_;
  // trapezoid nodes on [0, 3pi/2] and weights with psi/pi folded in
  std::vector<double> nodes_, weights_;
  // Hermite table on s in [0, radius + 2]: derivatives of orders 0..4.
  std::vector<std::array<double, 5>> table_;
};

/// Throws std::runtime_error if the partition-of-unity residual exceeds 1e-10.
WindowFunction build_window(const WindowParameters& params = {});

struct OutOfRangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

class ExtendedPotential {
 public:
  ExtendedPotential(LatticeFunction source, WindowFunction window);

  const LatticeFunction& source() const { return source_; }
  const WindowFunction& window() const { return window_; }
  int dim() const { return source_.box().dim(); }
  /// Largest |x_j| where the full rho-neighbourhood lies in the source box.
  double reliable_radius() const;

  double value(const Vec& x) const;
  /// Centred differences of value() with step h (default gradient).
  Vec gradient(const Vec& x, double step = 1e-4) const;
  /// d^alpha V~(x) by differentiating the kernel sum. Kernel derivatives come
  /// from the table (orders <= 3) or, with `quadrature`, from direct
  /// integration.
  double derivative(const Vec& x, std::span<const int> alpha, bool quadrature = false) const;
  /// d_j V~(x) through backward differences of V and the transferred kernel.
  double transferred_derivative(const Vec& x, int axis) const;

 private:
  void check_range(const Vec& x) const;
  // sum_n prod_j w_j(n_j) data[n] over the per-axis cube |n_j - x_j| <= rho;
  // weight(axis, s) supplies the 1-D factor.
  template <typename WeightFn>
  double kernel_sum(const Vec& x, const LatticeFunction& data, WeightFn&& weight) const;

  LatticeFunction source_;
  WindowFunction window_;
  std::array<LatticeFunction, kMaxDim> backward_;  // d~_j V for the transferred route
};

struct DecayProbe {
  std::vector<double> radii;
  std::vector<double> sup_values;
  LogLogFit fit;
};

/// Sup of |d^alpha V~| over spheres |x| = r for a dyadic sweep of radii,
/// then a log-log fit. Throws std::invalid_argument for fewer than 3 radii.
DecayProbe symbol_decay_probe(const ExtendedPotential& ext, std::span<const int> alpha,
                              const std::vector<double>& radii, int directions = 64);

}  // namespace latscat
