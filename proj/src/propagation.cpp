#include "latscat/propagation.hpp"

#include <cmath>
#include <string>

namespace latscat {

namespace {

Eigen::Index ipow(Eigen::Index base, int exp) {
  Eigen::Index r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

// (-i sgn t)^k J_k(a|t|) for k = 0..K-1, cut where the tail drops below tol.
std::vector<Complex> chebyshev_coefficients(double a, double t, double tolerance, int max_terms) {
  const double tau = a * std::abs(t);
  const Complex unit(0.0, t >= 0 ? -1.0 : 1.0);
  std::vector<Complex> c;
  Complex power(1.0, 0.0);
  // Past k > tau the Bessel values fall faster than geometrically; two
  // consecutive terms under tol/4 bound the remaining tail.
  int quiet = 0;
  for (int k = 0;; ++k) {
    if (k >= max_terms)
      throw PropagationError("Chebyshev expansion needs more than " + std::to_string(max_terms) +
                             " terms; reduce the step");
    const double j = tau == 0 ? (k == 0 ? 1.0 : 0.0) : std::cyl_bessel_j(double(k), tau);
    c.push_back((k == 0 ? 1.0 : 2.0) * j * power);
    power *= unit;
    if (k > tau && std::abs(j) < 0.25 * tolerance) {
      if (++quiet == 2) break;
    } else {
      quiet = 0;
    }
  }
  return c;
}

}  // namespace

void PropagatorConfig::validate() const {
  if (!(tolerance > 0)) throw std::invalid_argument("Chebyshev tolerance must be positive");
  if (!(step > 0)) throw std::invalid_argument("propagation step must be positive");
  if (half_width < 0) throw std::invalid_argument("spectral half-width must be >= 0");
  if (!(boundary_threshold > 0)) throw std::invalid_argument("boundary-mass threshold must be positive");
  if (max_terms < 2) throw std::invalid_argument("term cap must be >= 2");
}

Hamiltonian::Hamiltonian(const LatticeBox& box, const PotentialSpec& spec)
    : Hamiltonian(box, sample_potential(spec, box).values()) {}

Hamiltonian::Hamiltonian(const LatticeBox& box, RealVector potential)
    : box_(box), v_(std::move(potential)) {
  if (v_.size() != box.size()) throw std::invalid_argument("potential size does not match box");
  if (!v_.allFinite()) throw std::invalid_argument("potential has non-finite values");
  v_sup_ = v_.size() ? v_.cwiseAbs().maxCoeff() : 0.0;
}

void Hamiltonian::apply(const ComplexVector& in, ComplexVector& out) const {
  const int n = box_.side();
  out.noalias() = v_.cwiseProduct(in);
  for (int axis = 0; axis < box_.dim(); ++axis) {
    const Eigen::Index stride = ipow(n, box_.dim() - 1 - axis);
    const Eigen::Index block = stride * n;
    for (Eigen::Index base = 0; base < box_.size(); base += block) {
      for (int c = 0; c < n; ++c) {
        const Eigen::Index up = base + ((c + 1) % n) * stride;
        const Eigen::Index dn = base + ((c + n - 1) % n) * stride;
        const Eigen::Index at = base + c * stride;
        out.segment(at, stride) += 0.5 * (in.segment(up, stride) + in.segment(dn, stride));
      }
    }
  }
}

LatticeField free_propagate(const LatticeField& u, double t) {
  const MomentumGrid grid(u.box());
  const ComplexVector m =
      sample_on_grid(grid, [t](const Vec& xi) { return std::polar(1.0, -t * free_symbol(xi)); });
  return apply_multiplier(m, u);
}

int chebyshev_terms(double a, double t, double tolerance, int max_terms) {
  return static_cast<int>(chebyshev_coefficients(a, t, tolerance, max_terms).size());
}

LatticeField full_propagate(const LatticeField& u, double t, const Hamiltonian& h,
                            const PropagatorConfig& cfg) {
  cfg.validate();
  if (!(u.box() == h.box())) throw std::invalid_argument("field and Hamiltonian boxes differ");
  if (!std::isfinite(t)) throw std::invalid_argument("propagation time must be finite");
  const double bound = h.spectral_bound();
  double a = bound;
  if (cfg.half_width > 0) {
    if (cfg.half_width < bound * (1 - 1e-14))
      throw PropagationError("spectral half-width below d + sup|V|");
    a = cfg.half_width;
  }
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t) / cfg.step)));
  const double dt = t / steps;
  const std::vector<Complex> c = chebyshev_coefficients(a, dt, cfg.tolerance, cfg.max_terms);

  ComplexVector psi = u.values();
  ComplexVector prev(psi.size()), cur(psi.size()), next(psi.size()), acc(psi.size());
  const double inv_a = 1.0 / a;
  for (int s = 0; s < steps; ++s) {
    // T_0 psi = psi, T_1 psi = X psi, T_{k+1} = 2 X T_k - T_{k-1}, X = H / a
    prev = psi;
    acc = c[0] * prev;
    if (c.size() > 1) {
      h.apply(prev, cur);
      cur *= inv_a;
      acc += c[1] * cur;
    }
    for (std::size_t k = 2; k < c.size(); ++k) {
      h.apply(cur, next);
      next = (2 * inv_a) * next - prev;
      acc += c[k] * next;
      prev.swap(cur);
      cur.swap(next);
    }
    psi.swap(acc);
  }
  return LatticeField(u.box(), std::move(psi));
}

LatticeField full_propagate(const LatticeField& u, double t, const PotentialSpec& spec,
                            const PropagatorConfig& cfg) {
  return full_propagate(u, t, Hamiltonian(u.box(), spec), cfg);
}

Modifier Modifier::none(const MomentumGrid& grid) {
  Modifier m;
  m.grid_ = grid;
  return m;
}

Modifier::Modifier(std::shared_ptr<const PhaseTable> table)
    : kind_(table->kind), grid_(table->grid), table_(std::move(table)) {
  if (kind_ == ModifierKind::none) throw std::invalid_argument("a phase table cannot be of kind none");
}

RealVector Modifier::phase(double t) const {
  if (table_) return table_->phase_on_grid(t);
  return sample_on_grid(grid_, [t](const Vec& xi) { return t * free_symbol(xi); });
}

Eigen::MatrixXd Modifier::gradient(double t) const {
  if (table_) return table_->gradient_on_grid(t);
  Eigen::MatrixXd g(grid_.dim(), grid_.size());
  for (Eigen::Index f = 0; f < grid_.size(); ++f) g.col(f) = t * velocity(grid_.point(f));
  return g;
}

RealVector Modifier::potential_term(double t) const {
  if (!table_) return RealVector::Zero(grid_.size());
  RealVector r = table_->rate_on_grid(t);
  for (Eigen::Index f = 0; f < grid_.size(); ++f) r[f] -= free_symbol(grid_.point(f));
  return r;
}

namespace {

LatticeField apply_phase(const LatticeField& u, const MomentumGrid& grid, const RealVector& phi) {
  if (!(MomentumGrid(u.box()) == grid)) throw std::invalid_argument("modifier grid does not match field");
  ComplexVector m(phi.size());
  for (Eigen::Index f = 0; f < phi.size(); ++f) m[f] = std::polar(1.0, -phi[f]);
  return apply_multiplier(m, u);
}

}  // namespace

LatticeField apply_modifier(const LatticeField& u, const Modifier& modifier, double t) {
  return apply_phase(u, modifier.grid(), modifier.phase(t));
}

LatticeField apply_modifier(const LatticeField& u, const PhaseTable& table, double t) {
  return apply_phase(u, table.grid, table.phase_on_grid(t));
}

double boundary_mass(const LatticeField& u, int margin) {
  const LatticeBox& box = u.box();
  const int L = box.half_width();
  if (margin < 0 || margin >= L) throw std::invalid_argument("boundary margin must lie in [0, L)");
  double mass = 0.0;
  for (Eigen::Index f = 0; f < box.size(); ++f) {
    const Site n = box.site(f);
    if (L - n.cwiseAbs().maxCoeff() < margin) mass += std::norm(u.values()[f]);
  }
  return mass;
}

}  // namespace latscat
