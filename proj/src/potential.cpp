#include "latscat/potential.hpp"

#include "latscat/extension.hpp"

#include <cmath>
#include <stdexcept>

namespace latscat {

PotentialSpec PotentialSpec::power(double c, double mu, ExtensionPolicy policy) {
  PotentialSpec s;
  s.family = PotentialFamily::power;
  s.amplitude = c;
  s.decay = mu;
  s.extension = policy;
  s.validate();
  return s;
}

PotentialSpec PotentialSpec::tabulated(LatticeFunction values) {
  PotentialSpec s;
  s.family = PotentialFamily::tabulated;
  s.table = std::move(values);
  s.extension = ExtensionPolicy::window;
  s.validate();
  return s;
}

void PotentialSpec::validate() const {
  switch (family) {
    case PotentialFamily::zero:
      return;
    case PotentialFamily::power:
      if (!(decay > 0)) throw std::invalid_argument("power potential needs mu > 0");
      if (!std::isfinite(amplitude)) throw std::invalid_argument("power potential amplitude not finite");
      return;
    case PotentialFamily::tabulated:
      if (table.box().size() == 0) throw std::invalid_argument("tabulated potential has no values");
      if (!table.values().allFinite()) throw std::invalid_argument("tabulated potential not finite");
      if (extension == ExtensionPolicy::analytic)
        throw std::invalid_argument("tabulated potential has no closed form; use the window policy");
      return;
  }
}

bool PotentialSpec::is_zero() const {
  switch (family) {
    case PotentialFamily::zero:
      return true;
    case PotentialFamily::power:
      return amplitude == 0.0;
    case PotentialFamily::tabulated:
      return table.values().isZero(0.0);
  }
  return false;
}

double PotentialSpec::order() const { return family == PotentialFamily::power ? -decay : 0.0; }

PotentialFamily parse_family(const std::string& name) {
  if (name == "zero") return PotentialFamily::zero;
  if (name == "power") return PotentialFamily::power;
  if (name == "tabulated") return PotentialFamily::tabulated;
  throw std::invalid_argument("unknown potential family '" + name + "'");
}

ExtensionPolicy parse_policy(const std::string& name) {
  if (name == "analytic") return ExtensionPolicy::analytic;
  if (name == "window") return ExtensionPolicy::window;
  throw std::invalid_argument("unknown extension policy '" + name + "'");
}

std::string to_string(PotentialFamily family) {
  switch (family) {
    case PotentialFamily::zero:
      return "zero";
    case PotentialFamily::power:
      return "power";
    case PotentialFamily::tabulated:
      return "tabulated";
  }
  return "?";
}

std::string to_string(ExtensionPolicy policy) {
  return policy == ExtensionPolicy::analytic ? "analytic" : "window";
}

double lattice_value(const PotentialSpec& spec, const Site& n) {
  switch (spec.family) {
    case PotentialFamily::zero:
      return 0.0;
    case PotentialFamily::power:
      return spec.amplitude * std::pow(japanese_bracket(n.cast<double>()), -spec.decay);
    case PotentialFamily::tabulated: {
      const LatticeBox& b = spec.table.box();
      if (n.size() != b.dim()) throw std::invalid_argument("site dimension mismatch");
      if ((n.array().abs() > b.half_width()).any()) return 0.0;
      return spec.table[n];
    }
  }
  return 0.0;
}

LatticeFunction sample_potential(const PotentialSpec& spec, const LatticeBox& box) {
  LatticeFunction v(box);
  if (spec.family == PotentialFamily::zero) return v;
  for (Eigen::Index f = 0; f < box.size(); ++f) v.values()[f] = lattice_value(spec, box.site(f));
  return v;
}

ContinuumPotential::ContinuumPotential(PotentialSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  zero_ = spec_.is_zero();
}

ContinuumPotential::ContinuumPotential(PotentialSpec spec,
                                       std::shared_ptr<const ExtendedPotential> extension)
    : spec_(std::move(spec)), extension_(std::move(extension)) {
  spec_.validate();
  zero_ = spec_.is_zero();
}

bool ContinuumPotential::ready() const {
  return zero_ || spec_.extension == ExtensionPolicy::analytic || extension_ != nullptr;
}

void ContinuumPotential::require_ready() const {
  if (!ready())
    throw std::logic_error("continuum evaluation with the window policy needs a built extension");
}

double ContinuumPotential::value(const Vec& x) const {
  require_ready();
  if (zero_) return 0.0;
  if (spec_.extension == ExtensionPolicy::window) return extension_->value(x);
  return spec_.amplitude * std::pow(japanese_bracket(x), -spec_.decay);
}

Vec ContinuumPotential::gradient(const Vec& x) const {
  require_ready();
  if (zero_) return Vec::Zero(x.size());
  if (spec_.extension == ExtensionPolicy::window) return extension_->gradient(x);
  const double b2 = 1.0 + x.squaredNorm();
  return (-spec_.amplitude * spec_.decay * std::pow(b2, -0.5 * spec_.decay - 1.0)) * x;
}

void ContinuumPotential::evaluate_batch(const Eigen::MatrixXd& x, Eigen::RowVectorXd& value,
                                        Eigen::MatrixXd& gradient) const {
  require_ready();
  value.resize(x.cols());
  gradient.resize(x.rows(), x.cols());
  if (zero_) {
    value.setZero();
    gradient.setZero();
    return;
  }
  if (spec_.extension == ExtensionPolicy::window) {
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      const Vec p = x.col(s);
      value[s] = extension_->value(p);
      gradient.col(s) = extension_->gradient(p);
    }
    return;
  }
  // c <x>^-mu and -c mu <x>^(-mu-2) x with a single pow per column
  using Row = Eigen::Array<double, 1, Eigen::Dynamic>;
  const Row b2 = 1.0 + x.colwise().squaredNorm().array();
  const Row bm = b2.pow(-0.5 * spec_.decay);
  value = (spec_.amplitude * bm).matrix();
  const Row scale = -spec_.amplitude * spec_.decay * bm / b2;
  gradient = (x.array().rowwise() * scale).matrix();
}

}  // namespace latscat
