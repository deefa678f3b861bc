#pragma once

// Unitary evolution on the periodic box: exact free evolution, Chebyshev
// expansion of e^{-itH} and modifier multipliers e^{-i Phi(t, D)}.

#include "latscat/hamilton_jacobi.hpp"
#include "latscat/lattice.hpp"
#include "latscat/potential.hpp"

#include <memory>
#include <stdexcept>

namespace latscat {

class PropagationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PropagatorConfig {
  double tolerance = 1e-12;  // Bessel tail cut-off
  double step = 50.0;        // longest single expansion
  double half_width = 0.0;   // spectral scaling; 0 picks d + sup|V|
  double boundary_threshold = 1e-8;
  int max_terms = 8192;

  void validate() const;
};

/// H = H0 + V on a periodic box. H0 acts as the nearest-neighbour average
/// (1/2) sum_j (u[n + e_j] + u[n - e_j]), which is exactly the multiplier p0
/// on the dual grid.
class Hamiltonian {
 public:
  Hamiltonian(const LatticeBox& box, const PotentialSpec& spec);
  Hamiltonian(const LatticeBox& box, RealVector potential);

  const LatticeBox& box() const { return box_; }
  const RealVector& potential() const { return v_; }
  double potential_sup() const { return v_sup_; }
  /// d + sup|V| >= ||H||.
  double spectral_bound() const { return box_.dim() + v_sup_; }

  /// out = H in (out must not alias in).
  void apply(const ComplexVector& in, ComplexVector& out) const;

 private:
  LatticeBox box_;
  RealVector v_;
  double v_sup_ = 0.0;
};

LatticeField free_propagate(const LatticeField& u, double t);

/// e^{-itH} u. Throws PropagationError when the expansion would need more
/// than cfg.max_terms terms or cfg.half_width is below d + sup|V|.
LatticeField full_propagate(const LatticeField& u, double t, const Hamiltonian& h,
                            const PropagatorConfig& cfg = {});
LatticeField full_propagate(const LatticeField& u, double t, const PotentialSpec& spec,
                            const PropagatorConfig& cfg = {});

/// Number of expansion terms used for one step of length |t| at half-width a.
int chebyshev_terms(double a, double t, double tolerance, int max_terms);

/// A modifier phase Phi(t, xi): t p0 ("none") or a tabulated hj/Dollard phase.
class Modifier {
 public:
  static Modifier none(const MomentumGrid& grid);
  explicit Modifier(std::shared_ptr<const PhaseTable> table);

  ModifierKind kind() const { return kind_; }
  const MomentumGrid& grid() const { return grid_; }
  const PhaseTable* table() const { return table_.get(); }
  /// Phi(t, .) on the grid. Throws std::out_of_range off the schedule.
  RealVector phase(double t) const;
  /// d_xi Phi(t, .), d x N^d.
  Eigen::MatrixXd gradient(double t) const;
  /// d_t Phi - p0, the potential part of the phase rate (0 for "none").
  RealVector potential_term(double t) const;

 private:
  Modifier() = default;
  ModifierKind kind_ = ModifierKind::none;
  MomentumGrid grid_;
  std::shared_ptr<const PhaseTable> table_;
};

/// F^* e^{-i Phi(t, xi)} F u.
LatticeField apply_modifier(const LatticeField& u, const Modifier& modifier, double t);
LatticeField apply_modifier(const LatticeField& u, const PhaseTable& table, double t);

/// Sum of |u[n]|^2 over sites with L - max_j |n_j| < margin.
double boundary_mass(const LatticeField& u, int margin);

}  // namespace latscat
