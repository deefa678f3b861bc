#pragma once

// Modified wave-operator approximants W(T) phi = e^{iTH} e^{-i Phi(T, D)} E_I phi
// and the diagnostics built on them.

#include "latscat/fit.hpp"
#include "latscat/propagation.hpp"

#include <vector>

namespace latscat {

class WaveOperatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WaveOpConfig {
  int sign = +1;
  EnergyWindow window;
  bool sharp_window = false;
  std::vector<double> times;  // |T| values to cache, increasing
  PropagatorConfig propagator;
  int boundary_margin = 0;  // cells; 0 picks L / 8
  int jobs = 1;
};

struct WaveOpApproximant {
  int sign = +1;
  ModifierKind kind = ModifierKind::none;
  LatticeField windowed;             // E_I phi
  std::vector<double> times;         // signed
  std::vector<LatticeField> states;  // W(T_m) phi
  std::vector<double> norm_defect;   // | ||W phi|| - ||E_I phi|| |
  std::vector<double> boundary;      // max boundary mass along the way
  int boundary_margin = 0;

  /// State at a cached time (signed). Throws std::out_of_range otherwise.
  const LatticeField& at(double t) const;
  double isometry_sup() const;
  double boundary_sup() const;
};

/// Default boundary margin for a packet: 8 position widths, capped at L / 4.
int default_boundary_margin(const LatticeBox& box, const PacketSpec& packet);

/// Caches W(T) phi for every |T| in cfg.times. Throws WaveOperatorError when a
/// boundary-mass certificate exceeds cfg.propagator.boundary_threshold.
WaveOpApproximant approximant(const LatticeField& phi, const Hamiltonian& h, const Modifier& modifier,
                              const WaveOpConfig& cfg);

struct CauchyIncrement {
  double t = 0.0;  // |T|; the increment is ||W(2T) phi - W(T) phi||
  double value = 0.0;
  double cook_integral = 0.0;  // int_T^2T g, NaN when g does not cover it
  bool consistent = true;      // value <= cook_integral + slack
};

/// ||W(2T) - W(T)|| for every cached pair (T, 2T).
std::vector<CauchyIncrement> cauchy_increments(const WaveOpApproximant& app);

struct CookDiagnostics {
  std::vector<double> times;  // |t|
  std::vector<double> g;
  LogLogFit fit;
  double tail = 0.0;  // int_{fit range start}^{last time} g
  std::vector<CauchyIncrement> increments;
};

/// g(t) = ||(V(x) - (d_t Phi - p0)(D)) e^{-i Phi(t, D)} E_I phi|| on `times`
/// (|t| values; signs follow the modifier's table). For Phi solving the HJ
/// equation the multiplier is V(d_xi Phi); for "none" it vanishes.
CookDiagnostics cook_series(const LatticeField& windowed, const Hamiltonian& h, const Modifier& modifier,
                            int sign, const std::vector<double>& times, double fit_min = 25.0,
                            double fit_max = 1e300);

/// Adds Cauchy increments of `app` with their Cook-integral bounds to `cook`.
/// The slack covers the Chebyshev budget and the quadrature of g.
void attach_increments(CookDiagnostics& cook, const WaveOpApproximant& app, double slack);

/// ||e^{-isH} W(T) phi - W(T) e^{-isH0} phi|| at every shared time; `shifted`
/// must be the run on e^{-isH0} phi. Throws WaveOperatorError on schedule
/// mismatch.
std::vector<double> intertwining_defect(const WaveOpApproximant& app, const WaveOpApproximant& shifted,
                                        const Hamiltonian& h, double s, const PropagatorConfig& cfg = {});

struct DispersiveProfile {
  std::vector<double> times;
  std::vector<double> outside_mass;  // fraction of ||phi(t)||^2 outside G_t
  std::vector<double> sup_norm;
  std::vector<double> region_size;   // lattice cells in G_t
  LogLogFit sup_fit;
  double c1 = 0.0;                   // |G_t| / t^d at the reference time
  double reference_time = 0.0;
  std::vector<double> size_ratio;    // |G_t| / (c1 t^d)
};

/// Profile of phi(t) = e^{-i Phi(t, D)} phi. G_t is the image of the packet's
/// momentum support under d_xi Phi(t, .), dilated by `margin` cells
/// (Chebyshev distance, boundary inclusive).
DispersiveProfile dispersive_profile(const LatticeField& phi, const std::vector<Eigen::Index>& support,
                                     const Modifier& modifier, int sign, const std::vector<double>& times,
                                     int margin = 4, double reference_time = 50.0, double fit_min = 50.0,
                                     double fit_max = 1e300);

struct GaugeReport {
  std::vector<double> times;             // |T|
  std::vector<double> phase_increment;   // sup_supp |D(2T) - D(T)|, D = Psi - Phi; at T
  std::vector<double> increment_times;
  std::vector<double> gauge_increment;   // ||G(2T) phi - G(T) phi||
  std::vector<double> residual;          // ||W^Phi(T) phi - W^Psi(T) G(T_max) phi||
  RealVector stabilized;                 // D(T_max) on the support
  bool phase_decreasing = false;
};

/// Compares two modifiers on the same packet. Both runs must have converged:
/// their last Cauchy increments must be at most `threshold`, else
/// WaveOperatorError. The residual uses unitarity of e^{iTH}, so it is
/// computed from the multipliers alone.
GaugeReport modifier_gauge(const Modifier& phi_mod, const Modifier& psi_mod, const LatticeField& windowed,
                           const std::vector<Eigen::Index>& support, int sign, const std::vector<double>& times,
                           double last_increment_phi, double last_increment_psi, double threshold);

}  // namespace latscat
