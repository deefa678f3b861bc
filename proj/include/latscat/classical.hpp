#pragma once

// Hamilton flow of p(x, xi) = p0(xi) + V(x) on R^d x T^d.
//
//   x' = grad p0(xi) = v(xi),   xi' = -grad V(x)
//
// integrated by kick-drift-kick leapfrog (x plays the position, xi the
// momentum). The optional action u' = p - x . grad V is carried along by the
// trapezoid rule; it is the characteristic equation of the modifier phase.

#include "latscat/fit.hpp"
#include "latscat/lattice.hpp"
#include "latscat/potential.hpp"

#include <iosfwd>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

namespace latscat {

struct PhasePoint {
  Vec x;
  Vec xi;  // reduced to [-pi, pi)

  PhasePoint() = default;
  PhasePoint(Vec x_, const Vec& xi_) : x(std::move(x_)), xi(reduce_to_torus(xi_)) {}
};

double classical_energy(const ContinuumPotential& v, const Vec& x, const Vec& xi);

struct FlowParams {
  std::shared_ptr<const ContinuumPotential> potential;
  double step = 1e-2;
  int order = 2;  // 2: leapfrog, 4: Yoshida composition of leapfrog
  double final_time = 0.0;  // negative integrates backwards
  double drift_tolerance = 1e-8;
  int max_halvings = 4;
  bool track_action = false;

  void validate() const;
};

class FlowError : public std::runtime_error {
 public:
  enum class Kind { drift, domain };
  FlowError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<PhasePoint> points;
  std::vector<Vec> unwrapped_xi;
  std::vector<double> energy;
  std::vector<double> action;  // empty unless tracked
  double step = 0.0;           // step actually used
  double max_drift = 0.0;

  std::size_t size() const { return times.size(); }
};

/// Integrates to params.final_time. Samples are taken at `sample_times` (hit
/// exactly) or, when empty, after every step. The drift check runs on every
/// step; on violation the step is halved up to max_halvings times, then
/// FlowError(drift) is thrown. Leaving the evaluator's domain throws
/// FlowError(domain).
Trajectory integrate_flow(const PhasePoint& start, const FlowParams& params,
                          const std::vector<double>& sample_times = {}, double initial_action = 0.0);

/// Many starts at once (columns). Samples only at `sample_times` (same sign
/// as the integration direction, increasing in |t|).
struct FlowBatch {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> x;        // d x S per sample
  std::vector<Eigen::MatrixXd> xi;       // unwrapped
  std::vector<Eigen::RowVectorXd> action;
  double step = 0.0;
  double max_drift = 0.0;
};

FlowBatch integrate_batch(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xi0,
                          const Eigen::RowVectorXd& action0, const FlowParams& params,
                          const std::vector<double>& sample_times);

void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

// ---------------------------------------------------------------------------
// Escape regions.

struct Region {
  EnergyWindow window;
  double radius = 1.0;
  int sign = +1;

  bool contains(const ContinuumPotential& v, const PhasePoint& p) const;
};

struct EscapeConstants {
  double delta = 0.0;
  double r0 = 0.0;
};

/// delta = min(inf{k : p0 in I + [-m, m]} / 2, dist(I, thresholds) / 2) with
/// m the window margin, from a grid sweep; R0 by bisection on
/// sup_{|x| >= R} max(|V|, |x . grad V|) <= delta, at least 1.
EscapeConstants escape_constants(const EnergyWindow& window, const ContinuumPotential& v, int dim);

/// Uniformly drawn starts in Omega_sign(I, R) with R <= |x| <= 2R.
std::vector<PhasePoint> sample_region_starts(const Region& region, const ContinuumPotential& v,
                                             int dim, int count, std::mt19937_64& rng);

class RegionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EscapeReport {
  bool bound_holds = false;
  double min_margin = 0.0;  // min_t |x(t)|^2 - |x0|^2 - delta t^2
  bool monotone = false;    // sign * d|x|^2/dt >= 0 on every sample
  /// max |D2 |x|^2 - (2k + 2 sum x_j cos(xi_j) d_j V)| with central second
  /// differences at the integration step
  double identity_residual = 0.0;
  double max_drift = 0.0;
};

/// Throws RegionError when the start is not in the region.
EscapeReport region_escape_probe(const PhasePoint& start, const Region& region,
                                 const FlowParams& params, double delta);

// ---------------------------------------------------------------------------

struct AsymptoticMomentum {
  Vec xi_limit;  // unwrapped representative
  LogLogFit momentum_fit;  // |xi(t) - xi_limit|, target -mu
  LogLogFit position_fit;  // |x(t) - t v(xi_limit)|, target 1 - mu
  bool converged = false;
};

/// Richardson limit xi_limit = (2^mu xi(T) - xi(T/2)) / (2^mu - 1) from the
/// tail, then log-log fits over t in [fit_min, fit_max] (defaults T/256 and
/// T/4). A tail whose two Richardson estimates (from T and T/2) disagree by
/// more than the last increment is flagged as not converged.
AsymptoticMomentum asymptotic_momentum(const Trajectory& traj, double mu, double fit_min = 0.0,
                                       double fit_max = 0.0);

struct VariationalEstimate {
  SmallMatrix dxi_dy;   // sup over time of each entry magnitude
  double sup_dxi_dy = 0.0;   // sup_t ||d xi / d y||
  double sup_dxi_deta_dev = 0.0;  // sup_t ||d xi / d eta - I||
  double sup_dxi_deta = 0.0;      // sup_t ||d xi / d eta||
  double sup_linear_growth = 0.0;  // sup_t |x(t) - y| / (1 + |t|)
};

/// Central differences over perturbed launches (relative step `rel_step`)
/// evaluated on `sample_times`. Throws RegionError if the start is outside
/// the region.
VariationalEstimate variational_probe(const PhasePoint& start, const Region& region,
                                      const FlowParams& params,
                                      const std::vector<double>& sample_times,
                                      double rel_step = 1e-5);

}  // namespace latscat
