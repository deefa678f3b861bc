#pragma once

// Lattice potentials V[n] and their continuum evaluators.

#include "latscat/lattice.hpp"

#include <memory>
#include <string>

namespace latscat {

class ExtendedPotential;

enum class PotentialFamily { zero, power, tabulated };
enum class ExtensionPolicy { analytic, window };

struct PotentialSpec {
  PotentialFamily family = PotentialFamily::zero;
  double amplitude = 0.0;  // c
  double decay = 1.0;      // mu
  LatticeFunction table;   // tabulated values on their own box
  ExtensionPolicy extension = ExtensionPolicy::analytic;

  static PotentialSpec zero() { return {}; }
  static PotentialSpec power(double c, double mu,
                             ExtensionPolicy policy = ExtensionPolicy::analytic);
  static PotentialSpec tabulated(LatticeFunction values);

  void validate() const;
  bool is_zero() const;
  /// Decay order of the symbol class (0 for tabulated data).
  double order() const;
};

PotentialFamily parse_family(const std::string& name);
ExtensionPolicy parse_policy(const std::string& name);
std::string to_string(PotentialFamily family);
std::string to_string(ExtensionPolicy policy);

/// <x> = sqrt(1 + |x|^2).
template <typename Derived>
double japanese_bracket(const Eigen::MatrixBase<Derived>& x) {
  return std::sqrt(1.0 + x.squaredNorm());
}

/// V[n] at one site. Tabulated values vanish outside their box.
double lattice_value(const PotentialSpec& spec, const Site& n);

/// V sampled on every site of the box.
LatticeFunction sample_potential(const PotentialSpec& spec, const LatticeBox& box);

/// Continuum evaluator V(x), grad V(x) on R^d.
class ContinuumPotential {
 public:
  ContinuumPotential() = default;
  /// For the window policy the evaluator is unusable until attach() is called.
  explicit ContinuumPotential(PotentialSpec spec);
  ContinuumPotential(PotentialSpec spec, std::shared_ptr<const ExtendedPotential> extension);

  const PotentialSpec& spec() const { return spec_; }
  bool ready() const;
  bool is_zero() const { return zero_; }

  double value(const Vec& x) const;
  Vec gradient(const Vec& x) const;
  /// x . grad V(x)
  double radial_derivative(const Vec& x) const { return x.dot(gradient(x)); }

  /// Column-wise V and grad V for points stored as columns of x (d x S).
  void evaluate_batch(const Eigen::MatrixXd& x, Eigen::RowVectorXd& value,
                      Eigen::MatrixXd& gradient) const;

 private:
  void require_ready() const;

  PotentialSpec spec_;
  bool zero_ = true;
  std::shared_ptr<const ExtendedPotential> extension_;
};

}  // namespace latscat
