#include "latscat/hamilton_jacobi.hpp"

#include "json.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numbers>
#include <sstream>

namespace latscat {

namespace {

constexpr double kPi = std::numbers::pi;

// Cubic Lagrange weights on nodes 0..3 at tau, and their tau-derivatives.
void lagrange4(double tau, double w[4], double dw[4]) {
  const double a = tau, b = tau - 1, c = tau - 2, e = tau - 3;
  w[0] = -b * c * e / 6;
  w[1] = a * c * e / 2;
  w[2] = -a * b * e / 2;
  w[3] = a * b * c / 6;
  dw[0] = -(c * e + b * e + b * c) / 6;
  dw[1] = (c * e + a * e + a * c) / 2;
  dw[2] = -(b * e + a * e + a * b) / 2;
  dw[3] = (b * c + a * c + a * b) / 6;
}

// Periodic neighbour of a grid point along one axis.
Eigen::Index grid_neighbor(const LatticeBox& box, Eigen::Index flat, int axis, int offset) {
  Site s = box.site(flat);
  const int n = box.side(), l = box.half_width();
  s[axis] = ((s[axis] + offset + l) % n + n) % n - l;
  return box.index(s);
}

// Fourth-order centred first derivative from values at -2..2.
double d1_5pt(double m2, double m1, double p1, double p2, double h) {
  return (m2 - 8 * m1 + 8 * p1 - p2) / (12 * h);
}

double condition_number(const SmallMatrix& m) {
  const Eigen::MatrixXd dense = m;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
  const auto& s = svd.singularValues();
  return s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
}

double spectral_norm(const SmallMatrix& m) {
  const Eigen::MatrixXd dense = m;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(dense).singularValues()(0);
}

// Fritsch-Carlson slope at an interior node.
double pchip_slope(double h0, double h1, double s0, double s1) {
  if (s0 * s1 <= 0) return 0.0;
  const double w1 = 2 * h1 + h0, w2 = h1 + 2 * h0;
  return (w1 + w2) / (w1 / s0 + w2 / s1);
}

// Monotone cubic through (t_k, y_k) at t, bracketing interval [m, m+1].
template <typename Get>
double pchip_eval(const std::vector<double>& ts, std::size_t m, double t, Get&& y) {
  const std::size_t n = ts.size();
  const double h = ts[m + 1] - ts[m];
  const double s = (y(m + 1) - y(m)) / h;
  double d0 = s, d1 = s;
  if (m > 0) {
    const double hp = ts[m] - ts[m - 1];
    d0 = pchip_slope(hp, h, (y(m) - y(m - 1)) / hp, s);
  }
  if (m + 2 < n) {
    const double hn = ts[m + 2] - ts[m + 1];
    d1 = pchip_slope(h, hn, s, (y(m + 2) - y(m + 1)) / hn);
  }
  const double x = (t - ts[m]) / h;
  const double h00 = (1 + 2 * x) * (1 - x) * (1 - x), h10 = x * (1 - x) * (1 - x);
  const double h01 = x * x * (3 - 2 * x), h11 = x * x * (x - 1);
  return h00 * y(m) + h10 * h * d0 + h01 * y(m + 1) + h11 * h * d1;
}

// Cubic Hermite on [m, m+1] with given end slopes, limited so the piece is
// monotone whenever the data are.
template <typename Get, typename Slope>
double hermite_eval(const std::vector<double>& ts, std::size_t m, double t, Get&& y, Slope&& dy) {
  const double h = ts[m + 1] - ts[m];
  const double s = (y(m + 1) - y(m)) / h;
  double d0 = dy(m), d1 = dy(m + 1);
  if (s == 0) {
    d0 = d1 = 0;
  } else {
    double a = d0 / s, b = d1 / s;
    if (a < 0) a = 0;
    if (b < 0) b = 0;
    const double r = a * a + b * b;
    if (r > 9) {
      a *= 3 / std::sqrt(r);
      b *= 3 / std::sqrt(r);
    }
    d0 = a * s;
    d1 = b * s;
  }
  const double x = (t - ts[m]) / h;
  const double h00 = (1 + 2 * x) * (1 - x) * (1 - x), h10 = x * (1 - x) * (1 - x);
  const double h01 = x * x * (3 - 2 * x), h11 = x * x * (x - 1);
  return h00 * y(m) + h10 * h * d0 + h01 * y(m + 1) + h11 * h * d1;
}

// Bracketing interval for a signed time on a signed schedule (|t| increasing).
// Returns {m, exact}: exact means t == times[m].
std::pair<std::size_t, bool> locate(const std::vector<double>& times, double t) {
  if (times.empty()) throw std::out_of_range("empty phase table");
  const double span = std::abs(times.back());
  const double a = std::abs(t);
  const bool same_side = (t == 0) || (times.back() == 0) || ((t > 0) == (times.back() > 0));
  if (!same_side || a > span * (1 + 1e-12) + 1e-300)
    throw std::out_of_range("time outside the phase table schedule");
  for (std::size_t m = 0; m < times.size(); ++m)
    if (std::abs(std::abs(times[m]) - a) <= 1e-12 * std::max(1.0, a)) return {m, true};
  std::size_t m = 0;
  while (m + 1 < times.size() && std::abs(times[m + 1]) < a) ++m;
  return {m, false};
}

}  // namespace

// ---------------------------------------------------------------------------

TimeSchedule TimeSchedule::geometric(double t0, double final_time, int per_doubling, int prefix) {
  if (!(t0 > 0) || !(final_time >= t0)) throw std::invalid_argument("schedule needs 0 < t0 <= T");
  if (per_doubling < 1 || prefix < 1) throw std::invalid_argument("schedule densities must be positive");
  TimeSchedule s;
  for (int i = 0; i < prefix; ++i) s.times.push_back(t0 * i / prefix);
  for (int m = 0;; ++m) {
    const double t = t0 * std::exp2(static_cast<double>(m) / per_doubling);
    if (t >= final_time * (1 - 1e-12)) break;
    s.times.push_back(t);
  }
  s.times.push_back(final_time);
  return s;
}

int TimeSchedule::index_of(double t) const {
  for (std::size_t m = 0; m < times.size(); ++m)
    if (std::abs(times[m] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return static_cast<int>(m);
  return -1;
}

// ---------------------------------------------------------------------------

std::size_t CharacteristicFan::core_count() const {
  return static_cast<std::size_t>(std::count(core_.begin(), core_.end(), true));
}

std::int64_t CharacteristicFan::key(const Site& j) const {
  std::int64_t k = 0;
  for (int i = dim_ - 1; i >= 0; --i) k = k * modulus_ + ((j[i] % modulus_) + modulus_) % modulus_;
  return k;
}

void CharacteristicFan::measure() {
  const double hs = seed_spacing();
  smallness_ = 0.0;
  max_condition_ = 0.0;
  for (std::size_t m = 0; m < times_.size(); ++m)
    for (std::size_t s = 0; s < seeds_.size(); ++s) {
      if (!core_[s]) continue;
      SmallMatrix dd(dim_, dim_);
      for (int j = 0; j < dim_; ++j) {
        Site a = seeds_[s], b = seeds_[s];
        a[j] += 1;
        b[j] -= 1;
        const std::size_t ia = lookup_.at(key(a)), ib = lookup_.at(key(b));
        dd.col(j) = (disp_[m].col(ia) - disp_[m].col(ib)) / (2 * hs);
      }
      smallness_ = std::max(smallness_, spectral_norm(dd));
      max_condition_ = std::max(max_condition_,
                                condition_number(SmallMatrix::Identity(dim_, dim_) + dd));
    }
}

CharacteristicFan::Sample CharacteristicFan::evaluate(std::size_t m, const Vec& eta) const {
  const double hs = seed_spacing();
  const Vec pos = eta / hs;
  Site base(dim_);
  for (int i = 0; i < dim_; ++i) base[i] = static_cast<int>(std::floor(pos[i])) - 1;

  // Prefer the centred stencil, then shifted ones near the edge of the seed set.
  int total = 1;
  for (int i = 0; i < dim_; ++i) total *= 3;
  static constexpr int kShift[3] = {0, -1, 1};
  int nodes = 1;
  for (int i = 0; i < dim_; ++i) nodes *= 4;
  std::vector<std::size_t> cols(nodes);
  Site start(dim_);
  bool found = false;
  for (int combo = 0; combo < total && !found; ++combo) {
    int c = combo;
    for (int i = 0; i < dim_; ++i, c /= 3) start[i] = base[i] + kShift[c % 3];
    found = true;
    for (int n = 0; n < nodes && found; ++n) {
      Site j = start;
      int r = n;
      for (int i = 0; i < dim_; ++i, r /= 4) j[i] += r % 4;
      const auto it = lookup_.find(key(j));
      if (it == lookup_.end())
        found = false;
      else
        cols[n] = it->second;
    }
  }
  if (!found) throw HamiltonJacobiError("no complete interpolation stencil in the seed set");

  double w[kMaxDim][4], dw[kMaxDim][4];
  for (int i = 0; i < dim_; ++i) lagrange4(pos[i] - start[i], w[i], dw[i]);

  Sample out;
  Vec disp = Vec::Zero(dim_);
  out.x = Vec::Zero(dim_);
  SmallMatrix ddisp = SmallMatrix::Zero(dim_, dim_);
  for (int n = 0; n < nodes; ++n) {
    double weight = 1.0;
    double grad[kMaxDim];
    int r = n;
    int digit[kMaxDim];
    for (int i = 0; i < dim_; ++i, r /= 4) digit[i] = r % 4;
    for (int i = 0; i < dim_; ++i) weight *= w[i][digit[i]];
    for (int j = 0; j < dim_; ++j) {
      double g = dw[j][digit[j]] / hs;
      for (int i = 0; i < dim_; ++i)
        if (i != j) g *= w[i][digit[i]];
      grad[j] = g;
    }
    const std::size_t col = cols[n];
    disp += weight * disp_[m].col(col);
    out.x += weight * x_[m].col(col);
    out.u += weight * u_[m][col];
    for (int j = 0; j < dim_; ++j) ddisp.col(j) += grad[j] * disp_[m].col(col);
  }
  out.xi = eta + disp;
  out.dxi_deta = SmallMatrix::Identity(dim_, dim_) + ddisp;
  return out;
}

CharacteristicFan build_fan(const FanParams& params, const MomentumGrid& grid,
                            const TimeSchedule& schedule) {
  const int d = grid.dim();
  params.window.validate(d);
  params.flow.validate();
  if (params.sign != 1 && params.sign != -1) throw std::invalid_argument("fan sign must be +1 or -1");
  if (params.refine < 1) throw std::invalid_argument("seed refinement must be at least 1");
  if (schedule.size() < 2 || schedule.times.front() != 0.0)
    throw std::invalid_argument("fan schedule must start at 0");
  const ContinuumPotential& v = *params.flow.potential;

  CharacteristicFan fan;
  fan.sign_ = params.sign;
  fan.dim_ = d;
  fan.modulus_ = grid.box().side() * params.refine;
  const EscapeConstants esc = escape_constants(params.window, v, d);
  fan.delta_ = esc.delta;
  fan.decay_ = v.spec().decay;
  fan.potential_ = params.flow.potential;
  for (double t : schedule.times) fan.times_.push_back(params.sign * t);

  // seed lattice: core nodes, then a Chebyshev-distance-2 halo
  const int M = fan.modulus_, lo = -(M / 2);
  const double hs = fan.seed_spacing();
  const double e_lo = params.window.lower - fan.delta_, e_hi = params.window.upper + fan.delta_;
  std::vector<Site> core;
  {
    Site j = Site::Constant(d, lo);
    for (;;) {
      const Vec eta = j.cast<double>() * hs;
      const double e = free_symbol(eta);
      if (e >= e_lo && e <= e_hi) core.push_back(j);
      int i = d - 1;
      while (i >= 0 && ++j[i] > lo + M - 1) j[i--] = lo;
      if (i < 0) break;
    }
  }
  if (core.empty()) throw HamiltonJacobiError("no seeds on the enlarged energy shell");
  double inf_speed = std::numeric_limits<double>::infinity();
  for (const Site& j : core) {
    fan.lookup_.emplace(fan.key(j), fan.seeds_.size());
    fan.seeds_.push_back(j);
    fan.core_.push_back(true);
    inf_speed = std::min(inf_speed, velocity(j.cast<double>() * hs).norm());
  }
  int offsets = 1;
  for (int i = 0; i < d; ++i) offsets *= 5;
  for (std::size_t c = 0; c < core.size(); ++c)
    for (int o = 0; o < offsets; ++o) {
      Site j = core[c];
      int r = o;
      for (int i = 0; i < d; ++i, r /= 5) j[i] += r % 5 - 2;
      for (int i = 0; i < d; ++i) j[i] = ((j[i] - lo) % M + M) % M + lo;
      if (fan.lookup_.emplace(fan.key(j), fan.seeds_.size()).second) {
        fan.seeds_.push_back(j);
        fan.core_.push_back(false);
      }
    }
  if (!(inf_speed > 0)) throw HamiltonJacobiError("enlarged shell touches a zero of the velocity");

  double r1 = params.r1 > 0 ? params.r1 : std::max(esc.r0, 1.0) / inf_speed;
  const std::size_t S = fan.seeds_.size();
  Eigen::MatrixXd eta0(d, S);
  for (std::size_t s = 0; s < S; ++s) eta0.col(s) = fan.eta(s);
  std::vector<double> signed_times(fan.times_.begin() + 1, fan.times_.end());

  for (int attempt = 0;; ++attempt) {
    fan.r1_ = r1;
    const Eigen::MatrixXd x0 = params.sign * r1 * (-eta0.array().sin()).matrix();
    const Eigen::RowVectorXd u0 = params.sign * r1 * eta0.array().cos().colwise().sum().matrix();

    // region check: |x0| >= R = r1 inf|v| >= R0, energy within I + [-2 delta, 2 delta]
    fan.region_violations_ = 0;
    const double R = r1 * inf_speed;
    const Region region{EnergyWindow{e_lo - fan.delta_, e_hi + fan.delta_, 0, 0}, R, params.sign};
    for (std::size_t s = 0; s < S; ++s)
      if (fan.core_[s] && (R < esc.r0 || !region.contains(v, PhasePoint(x0.col(s), eta0.col(s)))))
        ++fan.region_violations_;

    FlowParams fp = params.flow;
    fp.final_time = params.sign * schedule.back();
    fp.track_action = true;
    // fixed chunking keeps results independent of the job count
    constexpr Eigen::Index kChunk = 256;
    const Eigen::Index chunks = (static_cast<Eigen::Index>(S) + kChunk - 1) / kChunk;
    std::vector<FlowBatch> parts(chunks);
    auto work = [&](Eigen::Index c) {
      const Eigen::Index a = c * kChunk, n = std::min<Eigen::Index>(kChunk, S - a);
      parts[c] = integrate_batch(x0.middleCols(a, n), eta0.middleCols(a, n), u0.segment(a, n), fp,
                                 signed_times);
    };
    const int jobs = std::max(1, params.jobs);
    for (Eigen::Index c0 = 0; c0 < chunks; c0 += jobs) {
      std::vector<std::future<void>> pending;
      for (Eigen::Index c = c0; c < std::min<Eigen::Index>(chunks, c0 + jobs); ++c)
        pending.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, work, c));
      for (auto& f : pending) f.get();
    }

    const std::size_t T = fan.times_.size();
    fan.x_.assign(T, Eigen::MatrixXd(d, S));
    fan.disp_.assign(T, Eigen::MatrixXd(d, S));
    fan.u_.assign(T, Eigen::RowVectorXd(S));
    fan.max_drift_ = 0.0;
    for (Eigen::Index c = 0; c < chunks; ++c) {
      const Eigen::Index a = c * kChunk, n = std::min<Eigen::Index>(kChunk, S - a);
      fan.max_drift_ = std::max(fan.max_drift_, parts[c].max_drift);
      for (std::size_t m = 0; m < T; ++m) {
        fan.x_[m].middleCols(a, n) = parts[c].x[m];
        fan.disp_[m].middleCols(a, n) = parts[c].xi[m] - eta0.middleCols(a, n);
        fan.u_[m].segment(a, n) = parts[c].action[m];
      }
    }
    fan.measure();
    if (fan.smallness_ <= params.smallness) return fan;
    if (params.r1 > 0 || attempt >= params.max_doublings) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "fan smallness %.3g exceeds %.3g at R1 = %.6g", fan.smallness_,
                    params.smallness, r1);
      throw HamiltonJacobiError(msg);
    }
    r1 *= 2;
  }
}

// ---------------------------------------------------------------------------

ModifierKind parse_modifier(const std::string& name) {
  if (name == "none") return ModifierKind::none;
  if (name == "dollard") return ModifierKind::dollard;
  if (name == "hj" || name == "hj-table") return ModifierKind::hj;
  throw std::invalid_argument("unknown modifier '" + name + "'");
}

std::string to_string(ModifierKind kind) {
  switch (kind) {
    case ModifierKind::none:
      return "none";
    case ModifierKind::dollard:
      return "dollard";
    case ModifierKind::hj:
      return "hj";
  }
  return "?";
}

void assign_table_indices(PhaseTable& table) {
  const LatticeBox& box = table.grid.box();
  const int d = box.dim();
  table.position.assign(static_cast<std::size_t>(box.size()), -1);
  table.indices.clear();
  table.core.clear();
  std::vector<char> mark(static_cast<std::size_t>(box.size()), 0);  // 2 core, 1 halo
  for (Eigen::Index f = 0; f < box.size(); ++f) {
    if (!table.window.contains(free_symbol(table.grid.point(f)))) continue;
    mark[f] = 2;
    for (int j = 0; j < d; ++j)
      for (int o : {-2, -1, 1, 2}) {
        const Eigen::Index g = grid_neighbor(box, f, j, o);
        if (mark[g] == 0) mark[g] = 1;
      }
  }
  for (Eigen::Index f = 0; f < box.size(); ++f) {
    if (!mark[f]) continue;
    table.position[f] = static_cast<int>(table.indices.size());
    table.indices.push_back(f);
    table.core.push_back(mark[f] == 2);
  }
}

PhaseTable invert_and_assemble(const CharacteristicFan& fan, const MomentumGrid& grid,
                               const EnergyWindow& window, double tolerance, int max_iterations) {
  const int d = fan.dim();
  if (grid.dim() != d || grid.box().side() * (fan.modulus() / grid.box().side()) != fan.modulus())
    throw std::invalid_argument("fan and momentum grid disagree");
  PhaseTable table;
  table.kind = ModifierKind::hj;
  table.sign = fan.sign();
  table.grid = grid;
  table.window = window;
  table.times = fan.times();
  table.r1 = fan.r1();
  table.decay = fan.decay();
  assign_table_indices(table);
  const std::size_t K = table.size(), T = table.times.size();
  table.phase.assign(T, Eigen::RowVectorXd(K));
  table.rate.assign(T, Eigen::RowVectorXd(K));
  table.gradient.assign(T, Eigen::MatrixXd(d, K));
  table.eta.assign(T, Eigen::MatrixXd(d, K));
  const ContinuumPotential& pot = fan.potential();
  const double hs = fan.seed_spacing();
  const double e_lo = window.lower - fan.delta(), e_hi = window.upper + fan.delta();

  // seed positions for the nearest-node search
  std::unordered_map<std::int64_t, std::size_t> nodes;
  for (std::size_t s = 0; s < fan.seed_count(); ++s) {
    std::int64_t key = 0;
    for (int i = d - 1; i >= 0; --i)
      key = key * fan.modulus() + ((fan.seed(s)[i] % fan.modulus()) + fan.modulus()) % fan.modulus();
    nodes.emplace(key, s);
  }
  int search = 1;
  for (int i = 0; i < d; ++i) search *= 7;

  for (std::size_t m = 0; m < T; ++m)
    for (std::size_t k = 0; k < K; ++k) {
      const Vec target = grid.point(table.indices[k]);
      // nearest fan node in image space
      Vec eta = target;
      double best = std::numeric_limits<double>::infinity();
      for (int o = 0; o < search; ++o) {
        Site j(d);
        int r = o;
        for (int i = 0; i < d; ++i, r /= 7) j[i] = static_cast<int>(std::lround(target[i] / hs)) + r % 7 - 3;
        std::int64_t key = 0;
        for (int i = d - 1; i >= 0; --i)
          key = key * fan.modulus() + ((j[i] % fan.modulus()) + fan.modulus()) % fan.modulus();
        const auto it = nodes.find(key);
        if (it == nodes.end()) continue;
        const Vec node = j.cast<double>() * hs;
        const double dist = (node + (fan.xi_at(m, it->second) - fan.eta(it->second)) - target).norm();
        if (dist < best) {
          best = dist;
          eta = node;
        }
      }

      CharacteristicFan::Sample s = fan.evaluate(m, eta);
      Vec r = s.xi - target;
      double rn = r.lpNorm<Eigen::Infinity>();
      int it = 0;
      // polish past the tolerance: Phi inherits the residual times |x|, and
      // differencing in xi amplifies it by 1/h
      const double floor = 4 * std::numeric_limits<double>::epsilon() * (1 + target.lpNorm<Eigen::Infinity>());
      for (; it < max_iterations && rn > floor; ++it) {
        const Vec step = s.dxi_deta.partialPivLu().solve(r);
        double lambda = 1.0;
        bool moved = false;
        for (int b = 0; b < 30; ++b, lambda *= 0.5) {
          const Vec trial = eta - lambda * step;
          CharacteristicFan::Sample st = fan.evaluate(m, trial);
          const Vec rt = st.xi - target;
          const double rtn = rt.lpNorm<Eigen::Infinity>();
          if (rtn < rn) {
            eta = trial;
            s = std::move(st);
            r = rt;
            rn = rtn;
            moved = true;
            break;
          }
        }
        if (!moved) break;
      }
      if (rn > tolerance) {
        std::ostringstream msg;
        msg << "Newton inversion failed at t = " << table.times[m] << ", xi = " << target.transpose()
            << " (residual " << rn << ")";
        throw HamiltonJacobiError(msg.str());
      }
      table.newton_residual = std::max(table.newton_residual, rn);
      table.newton_iterations = std::max(table.newton_iterations, it);
      if (s.dxi_deta.determinant() <= 0) ++table.duplicates;
      table.phase[m][k] = s.u;
      table.rate[m][k] = free_symbol(target) + pot.value(s.x);
      table.gradient[m].col(k) = s.x;
      table.eta[m].col(k) = eta;
      if (table.core[k]) {
        const double e = free_symbol(eta);
        if (e < e_lo || e > e_hi) table.containment = false;
      }
    }
  return table;
}

PhaseTable dollard_phase(const ContinuumPotential& v, const MomentumGrid& grid,
                         const EnergyWindow& window, const TimeSchedule& schedule, int sign,
                         double tolerance) {
  using boost::math::quadrature::gauss_kronrod;
  if (sign != 1 && sign != -1) throw std::invalid_argument("sign must be +1 or -1");
  if (schedule.size() < 1 || schedule.times.front() != 0.0)
    throw std::invalid_argument("schedule must start at 0");
  const int d = grid.dim();
  PhaseTable table;
  table.kind = ModifierKind::dollard;
  table.sign = sign;
  table.grid = grid;
  table.window = window;
  table.decay = v.spec().decay;
  for (double t : schedule.times) table.times.push_back(sign * t);
  assign_table_indices(table);
  const std::size_t K = table.size(), T = table.times.size();
  table.phase.assign(T, Eigen::RowVectorXd::Zero(K));
  table.rate.assign(T, Eigen::RowVectorXd::Zero(K));
  table.gradient.assign(T, Eigen::MatrixXd::Zero(d, K));

  // int_0^t g(s) ds = sign int_0^|t| g(sign sigma) d sigma
  for (std::size_t k = 0; k < K; ++k) {
    const Vec xi = grid.point(table.indices[k]);
    const Vec vel = velocity(xi);
    const double p0 = free_symbol(xi);
    double acc_v = 0.0;
    Vec acc_g = Vec::Zero(d);
    table.rate[0][k] = p0 + v.value(Vec::Zero(d));
    auto integrate = [&](auto&& f, double a, double b) {
      double err = 0.0;
      const double val = gauss_kronrod<double, 15>::integrate(f, a, b, 15, tolerance, &err);
      if (!std::isfinite(val) || err > std::max(1e3 * tolerance, tolerance * std::abs(val) * 10))
        throw std::runtime_error("Dollard phase quadrature did not converge");
      return val;
    };
    for (std::size_t m = 1; m < T; ++m) {
      const double a = std::abs(table.times[m - 1]), b = std::abs(table.times[m]);
      acc_v += integrate([&](double s) { return v.value(Vec(sign * s * vel)); }, a, b);
      for (int j = 0; j < d; ++j)
        acc_g[j] += integrate([&](double s) { return s * v.gradient(Vec(sign * s * vel))[j]; }, a, b);
      const double t = table.times[m];
      table.phase[m][k] = t * p0 + sign * acc_v;
      table.rate[m][k] = p0 + v.value(Vec(t * vel));
      // d/dxi_j int_0^t V(s v(xi)) ds = -cos(xi_j) int_0^t s d_jV(s v) ds
      for (int j = 0; j < d; ++j) table.gradient[m](j, k) = t * vel[j] - std::cos(xi[j]) * acc_g[j];
    }
  }
  return table;
}

// ---------------------------------------------------------------------------

RealVector PhaseTable::phase_on_grid(double t) const {
  const auto [m, exact] = locate(times, t);
  RealVector out(grid.size());
  for (Eigen::Index f = 0; f < grid.size(); ++f) {
    const int k = slot(f);
    if (k < 0) {
      out[f] = t * free_symbol(grid.point(f));
    } else if (exact) {
      out[f] = phase[m][k];
    } else {
      out[f] = hermite_eval(
          times, m, t, [&](std::size_t i) { return phase[i][k]; },
          [&](std::size_t i) { return rate[i][k]; });
    }
  }
  return out;
}

Eigen::MatrixXd PhaseTable::gradient_on_grid(double t) const {
  const auto [m, exact] = locate(times, t);
  const int d = grid.dim();
  Eigen::MatrixXd out(d, grid.size());
  for (Eigen::Index f = 0; f < grid.size(); ++f) {
    const int k = slot(f);
    if (k < 0) {
      out.col(f) = t * velocity(grid.point(f));
    } else if (exact) {
      out.col(f) = gradient[m].col(k);
    } else {
      for (int j = 0; j < d; ++j)
        out(j, f) = pchip_eval(times, m, t, [&](std::size_t i) { return gradient[i](j, k); });
    }
  }
  return out;
}

RealVector PhaseTable::rate_on_grid(double t) const {
  const auto [m, exact] = locate(times, t);
  RealVector out(grid.size());
  for (Eigen::Index f = 0; f < grid.size(); ++f) {
    const int k = slot(f);
    if (k < 0)
      out[f] = free_symbol(grid.point(f));
    else if (exact)
      out[f] = rate[m][k];
    else
      out[f] = pchip_eval(times, m, t, [&](std::size_t i) { return rate[i][k]; });
  }
  return out;
}

PhaseDiagnostics phase_diagnostics(const PhaseTable& table, const ContinuumPotential& v,
                                   double fit_min, double fit_max) {
  const std::size_t T = table.times.size();
  if (T < 3) throw std::invalid_argument("schedule too coarse for time differencing");
  if (table.times.front() != 0.0) throw std::invalid_argument("phase table must start at t = 0");
  const LatticeBox& box = table.grid.box();
  const int d = box.dim();
  const double h = table.grid.spacing();

  PhaseDiagnostics out;
  for (std::size_t m = 1; m + 1 < T; ++m) {
    const double t0 = table.times[m - 1], t1 = table.times[m], t2 = table.times[m + 1];
    const double h1 = t1 - t0, h2 = t2 - t1;
    const double c0 = -h2 / (h1 * (h1 + h2)), c1 = (h2 - h1) / (h1 * h2), c2 = h1 / (h2 * (h1 + h2));
    double res = 0, gap = 0, grow = 0, ggrow = 0, hess = 0;
    for (std::size_t k = 0; k < table.size(); ++k) {
      if (!table.core[k]) continue;
      const Eigen::Index f = table.indices[k];
      const Vec xi = table.grid.point(f);
      const double dt = c0 * table.phase[m - 1][k] + c1 * table.phase[m][k] + c2 * table.phase[m + 1][k];
      Vec dphi(d);
      SmallMatrix hessian(d, d);
      for (int j = 0; j < d; ++j) {
        int nb[4];
        const int offs[4] = {-2, -1, 1, 2};
        for (int q = 0; q < 4; ++q) nb[q] = table.slot(grid_neighbor(box, f, j, offs[q]));
        const auto& ph = table.phase[m];
        dphi[j] = d1_5pt(ph[nb[0]], ph[nb[1]], ph[nb[2]], ph[nb[3]], h);
        // Hessian of (Phi - Phi(0)) / t from the stored gradient
        for (int i = 0; i < d; ++i) {
          auto g = [&](int q) { return table.gradient[m](i, nb[q]) - table.gradient[0](i, nb[q]); };
          hessian(i, j) = d1_5pt(g(0), g(1), g(2), g(3), h) / t1;
        }
      }
      const Vec grad = table.gradient[m].col(k);
      res = std::max(res, std::abs(dt - free_symbol(xi) - v.value(dphi)));
      gap = std::max(gap, (dphi - grad).lpNorm<Eigen::Infinity>());
      grow = std::max(grow, std::abs(table.phase[m][k] - t1 * free_symbol(xi) - table.phase[0][k]));
      ggrow = std::max(ggrow, (grad - t1 * velocity(xi) - table.gradient[0].col(k)).norm());
      hess = std::max(hess, std::abs(hessian.determinant() - free_hessian_determinant(xi)));
    }
    out.times.push_back(std::abs(t1));
    out.hj_residual.push_back(res);
    out.construction_gap.push_back(gap);
    out.phase_growth.push_back(grow);
    out.gradient_growth.push_back(ggrow);
    out.hessian_deviation.push_back(hess);
    out.hj_residual_sup = std::max(out.hj_residual_sup, res);
    out.construction_gap_sup = std::max(out.construction_gap_sup, gap);
  }
  out.phase_fit = log_log_fit(out.times, out.phase_growth, fit_min, fit_max);
  out.gradient_fit = log_log_fit(out.times, out.gradient_growth, fit_min, fit_max);
  out.hessian_fit = log_log_fit(out.times, out.hessian_deviation, fit_min, fit_max);
  return out;
}

// ---------------------------------------------------------------------------

void save_phase_table(const PhaseTable& table, const std::filesystem::path& stem) {
  using nlohmann::json;
  const int d = table.grid.dim();
  json head;
  head["kind"] = to_string(table.kind);
  head["sign"] = table.sign;
  head["dim"] = d;
  head["half_width"] = table.grid.box().half_width();
  head["window"] = {{"lower", table.window.lower},
                    {"upper", table.window.upper},
                    {"margin", table.window.margin},
                    {"smoothing", table.window.smoothing},
                    {"hessian_margin", table.window.hessian_margin}};
  head["mu"] = table.decay;
  head["r1"] = table.r1;
  head["schedule"] = table.times;
  head["points"] = table.size();
  head["newton_residual"] = table.newton_residual;
  head["newton_iterations"] = table.newton_iterations;
  head["containment"] = table.containment;
  head["duplicates"] = table.duplicates;
  std::ofstream hj(stem.string() + ".json");
  hj << head.dump(2) << '\n';

  std::ofstream csv(stem.string() + ".csv");
  csv << "t,xi_index,phi,dphi_dt";
  for (int j = 1; j <= d; ++j) csv << ",grad_" << j;
  csv << '\n';
  char buf[32];
  for (std::size_t m = 0; m < table.times.size(); ++m)
    for (std::size_t k = 0; k < table.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17e", table.times[m]);
      csv << buf << ',' << table.indices[k];
      std::snprintf(buf, sizeof buf, "%.17e", table.phase[m][k]);
      csv << ',' << buf;
      std::snprintf(buf, sizeof buf, "%.17e", table.rate[m][k]);
      csv << ',' << buf;
      for (int j = 0; j < d; ++j) {
        std::snprintf(buf, sizeof buf, "%.17e", table.gradient[m](j, k));
        csv << ',' << buf;
      }
      csv << '\n';
    }
  if (!hj || !csv) throw std::runtime_error("could not write phase table " + stem.string());
}

PhaseTable load_phase_table(const std::filesystem::path& stem) {
  using nlohmann::json;
  std::ifstream hj(stem.string() + ".json");
  if (!hj) throw std::runtime_error("missing phase table header " + stem.string() + ".json");
  const json head = json::parse(hj);
  PhaseTable table;
  table.kind = parse_modifier(head.at("kind").get<std::string>());
  table.sign = head.at("sign").get<int>();
  const int d = head.at("dim").get<int>();
  table.grid = MomentumGrid(LatticeBox(d, head.at("half_width").get<int>()));
  const json& w = head.at("window");
  table.window = EnergyWindow{w.at("lower").get<double>(), w.at("upper").get<double>(),
                              w.at("margin").get<double>(), w.at("smoothing").get<double>(),
                              w.at("hessian_margin").get<double>()};
  table.decay = head.at("mu").get<double>();
  table.r1 = head.at("r1").get<double>();
  table.times = head.at("schedule").get<std::vector<double>>();
  table.newton_residual = head.at("newton_residual").get<double>();
  table.newton_iterations = head.at("newton_iterations").get<int>();
  table.containment = head.at("containment").get<bool>();
  table.duplicates = head.at("duplicates").get<int>();
  assign_table_indices(table);
  if (table.size() != head.at("points").get<std::size_t>())
    throw std::runtime_error("phase table index set does not match its header");
  const std::size_t K = table.size(), T = table.times.size();
  table.phase.assign(T, Eigen::RowVectorXd(K));
  table.rate.assign(T, Eigen::RowVectorXd(K));
  table.gradient.assign(T, Eigen::MatrixXd(d, K));

  std::ifstream csv(stem.string() + ".csv");
  if (!csv) throw std::runtime_error("missing phase table body " + stem.string() + ".csv");
  std::string line;
  std::getline(csv, line);
  for (std::size_t m = 0; m < T; ++m)
    for (std::size_t k = 0; k < K; ++k) {
      if (!std::getline(csv, line)) throw std::runtime_error("phase table body is truncated");
      const char* p = line.c_str();
      char* end = nullptr;
      std::strtod(p, &end);  // t, implied by the order
      const long idx = std::strtol(end + 1, &end, 10);
      if (idx != table.indices[k]) throw std::runtime_error("phase table body out of order");
      table.phase[m][k] = std::strtod(end + 1, &end);
      table.rate[m][k] = std::strtod(end + 1, &end);
      for (int j = 0; j < d; ++j) table.gradient[m](j, k) = std::strtod(end + 1, &end);
    }
  return table;
}

}  // namespace latscat
