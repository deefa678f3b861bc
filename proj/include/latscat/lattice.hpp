#pragma once

// Truncated lattice boxes, position/momentum fields, the discrete Fourier
// transform and Fourier multipliers.
//
// Conventions (fixed, relied on everywhere else):
//   * sites n in {-L..L}^d; flat index = sum_j (n_j + L) * N^(d-1-j), N = 2L+1
//     (last axis fastest).
//   * momenta xi_k = 2*pi*k/N with k in {-L..L}^d, same flat layout.
//   * forward transform  u^(xi_k) = (2 pi)^(-d/2) sum_n exp(-i n.xi_k) u[n];
//     momentum norms carry the cell volume (2 pi / N)^d so that ||Fu|| = ||u||.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

namespace latscat {

using Complex = std::complex<double>;
using RealVector = Eigen::VectorXd;
using ComplexVector = Eigen::VectorXcd;

inline constexpr int kMaxDim = 3;

/// Small point in R^d or T^d (d <= 3); no heap allocation.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Site = Eigen::Matrix<int, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using SmallMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

class LatticeBox {
 public:
  LatticeBox() = default;
  LatticeBox(int dim, int half_width);

  int dim() const { return dim_; }
  int half_width() const { return half_width_; }
  int side() const { return 2 * half_width_ + 1; }
  Eigen::Index size() const { return size_; }

  Eigen::Index index(const Site& site) const;
  Site site(Eigen::Index flat) const;
  /// Lattice site as a continuum point.
  Vec position(Eigen::Index flat) const { return site(flat).cast<double>(); }

  bool operator==(const LatticeBox& other) const = default;

 private:
  int dim_ = 0;
  int half_width_ = 0;
  Eigen::Index size_ = 0;
};

/// Momentum grid dual to a box: N^d points xi_k in [-pi, pi)^d (periodic).
class MomentumGrid {
 public:
  MomentumGrid() = default;
  explicit MomentumGrid(LatticeBox box) : box_(box) {}

  const LatticeBox& box() const { return box_; }
  int dim() const { return box_.dim(); }
  Eigen::Index size() const { return box_.size(); }
  double spacing() const { return 2.0 * std::numbers::pi / box_.side(); }
  double cell_volume() const;
  Vec point(Eigen::Index flat) const { return box_.site(flat).cast<double>() * spacing(); }

  bool operator==(const MomentumGrid& other) const = default;

 private:
  LatticeBox box_;
};

/// A function on the lattice box; Scalar is double for potentials and
/// Complex for states.
template <typename Scalar>
class BasicLatticeField {
 public:
  using Values = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicLatticeField() = default;
  explicit BasicLatticeField(const LatticeBox& box) : box_(box), values_(Values::Zero(box.size())) {}
  BasicLatticeField(const LatticeBox& box, Values values);

  const LatticeBox& box() const { return box_; }
  const Values& values() const { return values_; }
  Values& values() { return values_; }
  Scalar operator[](const Site& n) const { return values_[box_.index(n)]; }
  Scalar& operator[](const Site& n) { return values_[box_.index(n)]; }

  double norm() const { return values_.norm(); }

 private:
  LatticeBox box_;
  Values values_;
};

using LatticeField = BasicLatticeField<Complex>;
using LatticeFunction = BasicLatticeField<double>;

class MomentumField {
 public:
  MomentumField() = default;
  MomentumField(const MomentumGrid& grid, ComplexVector values);

  const MomentumGrid& grid() const { return grid_; }
  const ComplexVector& values() const { return values_; }
  ComplexVector& values() { return values_; }

  /// L^2(T^d) norm with the grid cell volume as quadrature weight.
  double norm() const;

 private:
  MomentumGrid grid_;
  ComplexVector values_;
};

MomentumField fourier(const LatticeField& u);
LatticeField inverse_fourier(const MomentumField& u_hat);

/// Samples f on every grid point.
template <typename Fn>
auto sample_on_grid(const MomentumGrid& grid, Fn&& f)
    -> Eigen::Matrix<std::invoke_result_t<Fn, const Vec&>, Eigen::Dynamic, 1> {
  using Scalar = std::invoke_result_t<Fn, const Vec&>;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(grid.size());
  for (Eigen::Index k = 0; k < grid.size(); ++k) out[k] = f(grid.point(k));
  return out;
}

/// f(D) u = F^*(f . F u). Throws std::invalid_argument on size mismatch or
/// non-finite multiplier values.
LatticeField apply_multiplier(const ComplexVector& multiplier, const LatticeField& u);
LatticeField apply_multiplier(const RealVector& multiplier, const LatticeField& u);

/// Iterated backward differences d~^alpha V; the output box shrinks by |alpha|.
LatticeFunction discrete_derivative(const LatticeFunction& v, std::span<const int> alpha);

// ---------------------------------------------------------------------------
// Free symbol. p0 = sum cos xi_j, v = grad p0, k = |v|^2.

template <typename Derived>
double free_symbol(const Eigen::MatrixBase<Derived>& xi) {
  return xi.array().cos().sum();
}

template <typename Derived>
Vec velocity(const Eigen::MatrixBase<Derived>& xi) {
  return -xi.array().sin().matrix();
}

template <typename Derived>
double speed_squared(const Eigen::MatrixBase<Derived>& xi) {
  return xi.array().sin().square().sum();
}

/// det of the Hessian of p0, i.e. prod_j (-cos xi_j).
template <typename Derived>
double free_hessian_determinant(const Eigen::MatrixBase<Derived>& xi) {
  return (-xi.array().cos()).prod();
}

struct Symbols {
  double p0 = 0.0;
  Vec v;
  double k = 0.0;
};

Symbols evaluate_symbols(const Vec& xi);

/// Threshold energies {-d, -d+2, ..., d}.
std::vector<double> threshold_energies(int dim);

/// Reduces each component to [-pi, pi).
Vec reduce_to_torus(const Vec& xi);

// ---------------------------------------------------------------------------

struct EnergyWindow {
  double lower = 0.0;
  double upper = 0.0;
  double margin = 0.0;     // delta: I + [-delta, delta] avoids the thresholds
  double smoothing = 0.0;  // transition width of the smoothed cutoff (<= margin)
  double hessian_margin = 0.2;

  /// Throws std::invalid_argument if the window is empty, the margin is not
  /// positive or I + [-delta, delta] meets the threshold set.
  void validate(int dim) const;
  double distance_to_thresholds(int dim) const;
  bool contains(double energy) const { return energy >= lower && energy <= upper; }
  bool contains_enlarged(double energy) const {
    return energy >= lower - margin && energy <= upper + margin;
  }
};

/// Membership in D(I) with the configured Hessian margin: p0 in I and
/// |cos xi_j| >= hessian_margin for all j.
bool in_nondegenerate_shell(const EnergyWindow& window, const Vec& xi);

/// Smooth step: 0 for s <= 0, 1 for s >= 1, C-infinity in between.
double smooth_step(double s, double sharpness = 1.0);

/// E_I(H0) as a multiplier on the grid (sharp indicator or smoothed cutoff).
RealVector spectral_window(const EnergyWindow& window, const MomentumGrid& grid, bool sharp);

// ---------------------------------------------------------------------------

struct PacketSpec {
  Vec center;          // xi0
  double width = 0.0;  // momentum radius of the bump
  /// Position-space scale of the packet, used by the horizon rule.
  double position_width() const { return 1.0 / width; }
};

/// Bump exp(1 - 1/(1 - r^2)), r = |xi - xi0| / width, in momentum space,
/// normalized to unit l^2 norm and centred at the origin in position space.
LatticeField build_wavepacket(const LatticeBox& box, const PacketSpec& packet,
                              const EnergyWindow& window);

/// Momentum-space support of the packet bump (grid indices with r < 1).
std::vector<Eigen::Index> packet_support(const MomentumGrid& grid, const PacketSpec& packet);

}  // namespace latscat
