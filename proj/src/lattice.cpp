#include "latscat/lattice.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace latscat {

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::Index ipow(Eigen::Index base, int exp) {
  Eigen::Index r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

// Applies a 1-D transform to every line along every axis. `forward` selects
// the sign; the per-line scaling is applied by the caller.
void transform_lines(const LatticeBox& box, ComplexVector& data, bool forward) {
  thread_local Eigen::FFT<double> fft;
  const int n = box.side();
  const int half = box.half_width();
  std::vector<Complex> line(n), out(n);
  for (int axis = 0; axis < box.dim(); ++axis) {
    const Eigen::Index stride = ipow(n, box.dim() - 1 - axis);
    const Eigen::Index lines = box.size() / n;
    for (Eigen::Index l = 0; l < lines; ++l) {
      // decompose l into (outer, inner) around the axis
      const Eigen::Index inner = l % stride;
      const Eigen::Index outer = l / stride;
      const Eigen::Index base = outer * stride * n + inner;
      // site n_j = j - L goes to slot (n_j mod N)
      for (int j = 0; j < n; ++j) line[(j - half + n) % n] = data[base + j * stride];
      if (forward)
        fft.fwd(out, line);
      else
        fft.inv(out, line);
      for (int j = 0; j < n; ++j) data[base + j * stride] = out[(j - half + n) % n];
    }
  }
}

}  // namespace

LatticeBox::LatticeBox(int dim, int half_width) : dim_(dim), half_width_(half_width) {
  if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("lattice dimension must be 1..3");
  if (half_width < 1) throw std::invalid_argument("lattice half-width must be >= 1");
  size_ = ipow(side(), dim);
}

Eigen::Index LatticeBox::index(const Site& site) const {
  Eigen::Index flat = 0;
  for (int j = 0; j < dim_; ++j) {
    const int shifted = site[j] + half_width_;
    if (shifted < 0 || shifted >= side()) throw std::out_of_range("site outside lattice box");
    flat = flat * side() + shifted;
  }
  return flat;
}

Site LatticeBox::site(Eigen::Index flat) const {
  Site s(dim_);
  for (int j = dim_ - 1; j >= 0; --j) {
    s[j] = static_cast<int>(flat % side()) - half_width_;
    flat /= side();
  }
  return s;
}

double MomentumGrid::cell_volume() const { return std::pow(spacing(), dim()); }

template <typename Scalar>
BasicLatticeField<Scalar>::BasicLatticeField(const LatticeBox& box, Values values)
    : box_(box), values_(std::move(values)) {
  if (values_.size() != box_.size()) throw std::invalid_argument("field size does not match box");
}

template class BasicLatticeField<Complex>;
template class BasicLatticeField<double>;

MomentumField::MomentumField(const MomentumGrid& grid, ComplexVector values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) throw std::invalid_argument("field size does not match grid");
}

double MomentumField::norm() const { return values_.norm() * std::sqrt(grid_.cell_volume()); }

MomentumField fourier(const LatticeField& u) {
  const LatticeBox& box = u.box();
  ComplexVector data = u.values();
  if (data.size() != box.size()) throw std::invalid_argument("field size does not match box");
  transform_lines(box, data, true);
  data *= std::pow(2.0 * kPi, -0.5 * box.dim());
  return MomentumField(MomentumGrid(box), std::move(data));
}

LatticeField inverse_fourier(const MomentumField& u_hat) {
  const LatticeBox& box = u_hat.grid().box();
  ComplexVector data = u_hat.values();
  if (data.size() != box.size()) throw std::invalid_argument("field size does not match grid");
  // fft.inv already divides by N per axis
  transform_lines(box, data, false);
  data *= std::pow(2.0 * kPi, 0.5 * box.dim());
  return LatticeField(box, std::move(data));
}

LatticeField apply_multiplier(const ComplexVector& multiplier, const LatticeField& u) {
  if (multiplier.size() != u.box().size())
    throw std::invalid_argument("multiplier size does not match field");
  if (!multiplier.allFinite()) throw std::invalid_argument("multiplier has non-finite values");
  MomentumField u_hat = fourier(u);
  u_hat.values().array() *= multiplier.array();
  return inverse_fourier(u_hat);
}

LatticeField apply_multiplier(const RealVector& multiplier, const LatticeField& u) {
  return apply_multiplier(ComplexVector(multiplier.cast<Complex>()), u);
}

LatticeFunction discrete_derivative(const LatticeFunction& v, std::span<const int> alpha) {
  const LatticeBox& box = v.box();
  if (static_cast<int>(alpha.size()) != box.dim())
    throw std::invalid_argument("multi-index length does not match dimension");
  int order = 0;
  for (int a : alpha) {
    if (a < 0) throw std::invalid_argument("negative multi-index entry");
    order += a;
  }
  if (box.half_width() - order < 1)
    throw std::invalid_argument("box too small for derivative order " + std::to_string(order));

  RealVector work = v.values();
  const int n = box.side();
  for (int axis = 0; axis < box.dim(); ++axis) {
    const Eigen::Index stride = ipow(n, box.dim() - 1 - axis);
    for (int rep = 0; rep < alpha[axis]; ++rep) {
      // descending flat order keeps u[n - e_j] unmodified when it is read
      for (Eigen::Index f = box.size() - 1; f >= 0; --f) {
        if ((f / stride) % n == 0) continue;
        work[f] -= work[f - stride];
      }
    }
  }
  LatticeBox out_box(box.dim(), box.half_width() - order);
  LatticeFunction out(out_box);
  for (Eigen::Index f = 0; f < out_box.size(); ++f)
    out.values()[f] = work[box.index(out_box.site(f))];
  return out;
}

Symbols evaluate_symbols(const Vec& xi) {
  return {free_symbol(xi), velocity(xi), speed_squared(xi)};
}

std::vector<double> threshold_energies(int dim) {
  std::vector<double> t;
  for (int k = -dim; k <= dim; k += 2) t.push_back(k);
  return t;
}

Vec reduce_to_torus(const Vec& xi) {
  Vec r(xi.size());
  for (Eigen::Index j = 0; j < xi.size(); ++j) {
    double y = std::fmod(xi[j] + kPi, 2.0 * kPi);
    if (y < 0) y += 2.0 * kPi;
    r[j] = y - kPi;
    if (r[j] >= kPi) r[j] -= 2.0 * kPi;
  }
  return r;
}

double EnergyWindow::distance_to_thresholds(int dim) const {
  double dist = std::numeric_limits<double>::infinity();
  for (double e : threshold_energies(dim)) {
    if (e >= lower && e <= upper) return 0.0;
    dist = std::min(dist, std::min(std::abs(e - lower), std::abs(e - upper)));
  }
  return dist;
}

void EnergyWindow::validate(int dim) const {
  if (!(lower < upper)) throw std::invalid_argument("energy window needs a < b");
  if (!(margin > 0)) throw std::invalid_argument("energy window margin must be positive");
  if (smoothing < 0 || smoothing > margin)
    throw std::invalid_argument("window smoothing must lie in [0, margin]");
  if (!(hessian_margin > 0 && hessian_margin < 1))
    throw std::invalid_argument("hessian margin must lie in (0, 1)");
  if (distance_to_thresholds(dim) <= margin)
    throw std::invalid_argument("energy window plus margin overlaps the threshold set");
}

bool in_nondegenerate_shell(const EnergyWindow& window, const Vec& xi) {
  if (!window.contains(free_symbol(xi))) return false;
  return (xi.array().cos().abs() >= window.hessian_margin).all();
}

double smooth_step(double s, double sharpness) {
  if (s <= 0) return 0.0;
  if (s >= 1) return 1.0;
  const double f0 = std::exp(-sharpness / s);
  const double f1 = std::exp(-sharpness / (1.0 - s));
  return f0 / (f0 + f1);
}

RealVector spectral_window(const EnergyWindow& window, const MomentumGrid& grid, bool sharp) {
  window.validate(grid.dim());
  const double eta = window.hessian_margin;
  const double w = window.smoothing;
  return sample_on_grid(grid, [&](const Vec& xi) {
    const double p = free_symbol(xi);
    if (sharp) return window.contains(p) ? 1.0 : 0.0;
    double energy;
    if (window.contains(p))
      energy = 1.0;
    else if (w <= 0)
      energy = 0.0;
    else if (p < window.lower)
      energy = smooth_step((p - (window.lower - w)) / w);
    else
      energy = smooth_step(((window.upper + w) - p) / w);
    double hess = 1.0;
    for (Eigen::Index j = 0; j < xi.size(); ++j)
      hess *= smooth_step((std::abs(std::cos(xi[j])) - 0.5 * eta) / (0.5 * eta));
    return energy * hess;
  });
}

namespace {

double torus_distance(const Vec& a, const Vec& b) {
  return reduce_to_torus(a - b).norm();
}

double bump(double r) { return r < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - r * r)) : 0.0; }

}  // namespace

std::vector<Eigen::Index> packet_support(const MomentumGrid& grid, const PacketSpec& packet) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index k = 0; k < grid.size(); ++k)
    if (torus_distance(grid.point(k), packet.center) < packet.width) idx.push_back(k);
  return idx;
}

LatticeField build_wavepacket(const LatticeBox& box, const PacketSpec& packet,
                              const EnergyWindow& window) {
  window.validate(box.dim());
  if (packet.center.size() != box.dim())
    throw std::invalid_argument("packet centre dimension does not match box");
  if (!(packet.width > 0)) throw std::invalid_argument("packet width must be positive");
  if (!in_nondegenerate_shell(window, packet.center))
    throw std::invalid_argument("packet centre is not in the nondegenerate energy shell");

  MomentumGrid grid(box);
  const auto support = packet_support(grid, packet);
  if (support.size() < 3) throw std::invalid_argument("packet width below grid resolution");
  // every point of the bump must stay inside D(I)
  for (Eigen::Index k : support)
    if (!in_nondegenerate_shell(window, grid.point(k)))
      throw std::invalid_argument("packet width too large: support leaves the energy shell");

  ComplexVector values = ComplexVector::Zero(grid.size());
  for (Eigen::Index k : support)
    values[k] = bump(torus_distance(grid.point(k), packet.center) / packet.width);
  LatticeField u = inverse_fourier(MomentumField(grid, std::move(values)));
  u.values() /= u.norm();
  return u;
}

}  // namespace latscat
