#pragma once

// Modifier phases on the energy shell.
//
// Characteristics: launch (x, xi, u)(0) = (+-R1 v(eta), eta, +-R1 p0(eta)) and
// flow with u' = p - x . grad V. Then Phi(t, xi) = u(t, Lambda_t^-1 xi) with
// Lambda_t : eta -> xi(t), and d_xi Phi(t, xi) = x(t, Lambda_t^-1 xi).
// The Dollard phase t p0(xi) + int_0^t V(s v(xi)) ds is the closed-form
// alternative; both are stored as PhaseTable.

#include "latscat/classical.hpp"
#include "latscat/fit.hpp"
#include "latscat/lattice.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace latscat {

/// Sample times 0 = t_0 < ... with a linear prefix on [0, t0) and the
/// geometric part t0 2^(m / per_doubling) up to T (T hit exactly).
struct TimeSchedule {
  std::vector<double> times;

  static TimeSchedule geometric(double t0, double final_time, int per_doubling = 16,
                                int prefix = 8);
  std::size_t size() const { return times.size(); }
  double back() const { return times.back(); }
  /// Index of a time on the schedule, or -1 (tolerance 1e-12 relative).
  int index_of(double t) const;
};

struct FanParams {
  int sign = +1;
  EnergyWindow window;
  double r1 = 0.0;  // 0 picks R0 / inf |v| and doubles until the smallness check passes
  int refine = 4;   // seed density relative to the momentum grid, per axis
  double smallness = 0.1;  // cap on sup |d xi / d eta - I|
  int max_doublings = 8;
  int jobs = 1;
  FlowParams flow;  // potential, step, order, drift tolerance (final time is ignored)
};

class HamiltonJacobiError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeds live on the lattice eta = j * 2 pi / M, M = N * refine, so every
/// momentum grid point is a seed node. Core seeds satisfy p0(eta) in
/// I + [-delta, delta]; a halo of two nodes per axis supports the cubic
/// stencils at the edge.
class CharacteristicFan {
 public:
  struct Sample {
    Vec xi;  // Lambda_t(eta), unwrapped
    Vec x;
    double u = 0.0;
    SmallMatrix dxi_deta;
  };

  int sign() const { return sign_; }
  int dim() const { return dim_; }
  double r1() const { return r1_; }
  double delta() const { return delta_; }
  double decay() const { return decay_; }
  const ContinuumPotential& potential() const { return *potential_; }
  double seed_spacing() const { return 2.0 * std::numbers::pi / modulus_; }
  int modulus() const { return modulus_; }
  const std::vector<double>& times() const { return times_; }  // signed
  std::size_t seed_count() const { return seeds_.size(); }
  std::size_t core_count() const;
  const Site& seed(std::size_t s) const { return seeds_[s]; }
  bool is_core(std::size_t s) const { return core_[s]; }
  Vec eta(std::size_t s) const { return seeds_[s].cast<double>() * seed_spacing(); }

  double max_drift() const { return max_drift_; }
  /// sup over times and core seeds of ||d xi / d eta - I|| (adjacent-seed differences)
  double smallness() const { return smallness_; }
  /// sup over times and core seeds of the condition number of d xi / d eta
  double max_condition() const { return max_condition_; }
  /// Seeds that violate the escape-region membership (should be zero).
  int region_violations() const { return region_violations_; }

  /// Tensor cubic Lagrange interpolation at time index m. Throws
  /// HamiltonJacobiError when no complete stencil exists around eta.
  Sample evaluate(std::size_t m, const Vec& eta) const;

  /// Raw fan values at time index m for seed s.
  Vec xi_at(std::size_t m, std::size_t s) const { return eta(s) + disp_[m].col(s); }
  Vec x_at(std::size_t m, std::size_t s) const { return x_[m].col(s); }
  double u_at(std::size_t m, std::size_t s) const { return u_[m][s]; }

 private:
  friend CharacteristicFan build_fan(const FanParams&, const MomentumGrid&, const TimeSchedule&);
  std::int64_t key(const Site& j) const;
  void measure();

  int sign_ = +1;
  int dim_ = 0;
  int modulus_ = 0;
  double r1_ = 0.0;
  double delta_ = 0.0;
  double decay_ = 0.0;
  std::shared_ptr<const ContinuumPotential> potential_;
  std::vector<double> times_;
  std::vector<Site> seeds_;
  std::vector<bool> core_;
  std::unordered_map<std::int64_t, std::size_t> lookup_;
  std::vector<Eigen::MatrixXd> x_;     // d x S per time
  std::vector<Eigen::MatrixXd> disp_;  // xi - eta, d x S per time
  std::vector<Eigen::RowVectorXd> u_;
  double max_drift_ = 0.0;
  double smallness_ = 0.0;
  double max_condition_ = 0.0;
  int region_violations_ = 0;
};

/// Integrates the fan on the schedule (times taken with the fan's sign).
/// With params.r1 == 0 the radius doubles until the smallness check passes;
/// an explicit r1 that fails the check throws HamiltonJacobiError.
CharacteristicFan build_fan(const FanParams& params, const MomentumGrid& grid,
                            const TimeSchedule& schedule);

enum class ModifierKind { none, dollard, hj };
ModifierKind parse_modifier(const std::string& name);
std::string to_string(ModifierKind kind);

/// Phi and d_xi Phi on the shell p0(xi) in I plus a two-point halo along each
/// axis. Off the table the phase is t p0(xi) with gradient t v(xi).
struct PhaseTable {
  ModifierKind kind = ModifierKind::hj;
  int sign = +1;
  MomentumGrid grid;
  EnergyWindow window;
  std::vector<double> times;  // signed
  double r1 = 0.0;
  double decay = 0.0;  // mu, recorded for reports

  std::vector<Eigen::Index> indices;  // flat momentum indices
  std::vector<bool> core;             // p0 in I
  std::vector<int> position;          // flat index -> table slot, -1 off table
  std::vector<Eigen::RowVectorXd> phase;     // per time
  std::vector<Eigen::RowVectorXd> rate;      // d Phi / dt = p(d_xi Phi, xi) (hj), p0 + V(t v) (Dollard)
  std::vector<Eigen::MatrixXd> gradient;     // d x K per time
  std::vector<Eigen::MatrixXd> eta;          // d x K per time (hj only)

  double newton_residual = 0.0;  // sup over all points
  int newton_iterations = 0;     // max
  bool containment = true;       // every core eta* in I + [-delta, delta]
  int duplicates = 0;

  std::size_t size() const { return indices.size(); }
  int slot(Eigen::Index flat) const { return position[static_cast<std::size_t>(flat)]; }

  /// Phi(t, .) on the whole grid; t must lie in the schedule range. Between
  /// schedule times: cubic Hermite with the stored rates as slopes, limited
  /// to stay monotone (Fritsch-Carlson).
  RealVector phase_on_grid(double t) const;
  /// d_xi Phi(t, .) on the whole grid (d x N^d); monotone cubic in t.
  Eigen::MatrixXd gradient_on_grid(double t) const;
  /// d Phi / dt (t, .) on the whole grid; p0 off the table.
  RealVector rate_on_grid(double t) const;
};

/// Assembles the table from a fan by damped Newton inversion of Lambda_t.
PhaseTable invert_and_assemble(const CharacteristicFan& fan, const MomentumGrid& grid,
                               const EnergyWindow& window, double tolerance = 1e-10,
                               int max_iterations = 50);

/// Dollard phase t p0 + int_0^t V(s v(xi)) ds on the same index set as an hj
/// table, by adaptive Gauss-Kronrod with the given tolerance.
PhaseTable dollard_phase(const ContinuumPotential& v, const MomentumGrid& grid,
                         const EnergyWindow& window, const TimeSchedule& schedule, int sign = +1,
                         double tolerance = 1e-10);

/// The table index set: shell points plus the differencing halo.
void assign_table_indices(PhaseTable& table);

struct PhaseDiagnostics {
  std::vector<double> times;  // |t| for each reported interior time
  std::vector<double> hj_residual;
  std::vector<double> construction_gap;   // |D_xi Phi - x|, differenced vs fan
  std::vector<double> phase_growth;       // sup |Phi - t p0 - Phi(0)|
  std::vector<double> gradient_growth;    // sup |d Phi - t v - d Phi(0)|
  std::vector<double> hessian_deviation;  // sup |det Hess(Phi / t) - prod(-cos)|
  double hj_residual_sup = 0.0;
  double construction_gap_sup = 0.0;
  LogLogFit phase_fit, gradient_fit, hessian_fit;
};

/// HJ residual with three-point time differences and fourth-order centred
/// xi differences on the shell; rate fits over |t| in [fit_min, fit_max].
PhaseDiagnostics phase_diagnostics(const PhaseTable& table, const ContinuumPotential& v,
                                   double fit_min = 25.0, double fit_max = 1e300);

/// JSON header (stem.json) and CSV body (stem.csv) in %.17e; reload is exact.
void save_phase_table(const PhaseTable& table, const std::filesystem::path& stem);
PhaseTable load_phase_table(const std::filesystem::path& stem);

}  // namespace latscat
