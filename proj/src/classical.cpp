#include "latscat/classical.hpp"

#include "latscat/extension.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

namespace latscat {

namespace {

constexpr double kPi = std::numbers::pi;

double operator_norm(const SmallMatrix& m) {
  if (m.size() == 0) return 0.0;
  const Eigen::MatrixXd dense = m;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
  return svd.singularValues()(0);
}

// Sample schedule in the integration direction, starting at 0.
std::vector<double> normalized_schedule(const std::vector<double>& requested, double final_time) {
  std::vector<double> out{0.0};
  const double dir = final_time < 0 ? -1.0 : 1.0;
  for (double t : requested) {
    if (t * dir < 0 || std::abs(t) > std::abs(final_time) + 1e-12)
      throw std::invalid_argument("sample time outside the integration interval");
    if (std::abs(t) <= std::abs(out.back()) + 1e-14) {
      if (std::abs(t - out.back()) <= 1e-14) continue;
      throw std::invalid_argument("sample times must increase in |t|");
    }
    out.push_back(t);
  }
  return out;
}

struct StepState {
  Vec x, xi;
  Vec grad;
  double value = 0.0;
};

void evaluate(const ContinuumPotential& v, StepState& s) {
  try {
    s.value = v.value(s.x);
    s.grad = v.gradient(s.x);
  } catch (const OutOfRangeError& e) {
    throw FlowError(FlowError::Kind::domain, e.what());
  }
}

// Substep weights: plain leapfrog, or the Yoshida triple jump for order 4.
std::vector<double> composition(int order) {
  if (order == 2) return {1.0};
  const double c = std::cbrt(2.0), w1 = 1.0 / (2.0 - c);
  return {w1, -c * w1, w1};
}

double action_rate(const StepState& s) {
  return free_symbol(s.xi) + s.value - s.x.dot(s.grad);
}

// One attempt at fixed step; returns false on a drift violation.
bool integrate_once(const PhasePoint& start, const FlowParams& p, double h,
                    const std::vector<double>& schedule, bool every_step, double u0,
                    Trajectory& traj) {
  const ContinuumPotential& v = *p.potential;
  const double dir = p.final_time < 0 ? -1.0 : 1.0;
  const double total = std::abs(p.final_time);
  const std::vector<double> weights = composition(p.order);
  traj = Trajectory{};
  traj.step = h;

  StepState s;
  s.x = start.x;
  s.xi = start.xi;
  evaluate(v, s);
  const double e0 = free_symbol(s.xi) + s.value;
  double u = u0;
  double elapsed = 0.0;

  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.points.emplace_back(s.x, s.xi);
    traj.unwrapped_xi.push_back(s.xi);
    traj.energy.push_back(free_symbol(s.xi) + s.value);
    if (p.track_action) traj.action.push_back(u);
  };
  record(0.0);
  if (!every_step && schedule.size() < 2) return true;

  std::size_t next = 1;
  while (elapsed < total) {
    double target = every_step ? total : std::abs(schedule[next]);
    if (every_step && elapsed + h < total) target = elapsed + h;
    double remaining = target - elapsed;
    // several full steps may fit before the next sample
    while (remaining > 0) {
      const double dt = std::min(h, remaining);
      const double hs = dir * dt;
      for (double w : weights) {
        const double hw = w * hs;
        const double g0 = p.track_action ? action_rate(s) : 0.0;
        s.xi -= 0.5 * hw * s.grad;
        s.x += hw * velocity(s.xi);
        evaluate(v, s);
        s.xi -= 0.5 * hw * s.grad;
        if (p.track_action) u += 0.5 * hw * (g0 + action_rate(s));
      }
      const double drift = std::abs(free_symbol(s.xi) + s.value - e0);
      traj.max_drift = std::max(traj.max_drift, drift);
      if (drift > p.drift_tolerance) return false;
      if (dt == remaining) {
        elapsed = target;
        remaining = 0;
      } else {
        elapsed += dt;
        remaining = target - elapsed;
        if (remaining < 1e-13 * std::max(1.0, target)) {
          elapsed = target;
          remaining = 0;
        }
      }
    }
    record(dir * elapsed);
    if (!every_step) {
      ++next;
      if (next >= schedule.size()) break;
    }
  }
  return true;
}

}  // namespace

double classical_energy(const ContinuumPotential& v, const Vec& x, const Vec& xi) {
  return free_symbol(xi) + v.value(x);
}

void FlowParams::validate() const {
  if (!potential) throw std::invalid_argument("flow needs a potential evaluator");
  if (!potential->ready()) throw std::invalid_argument("flow potential evaluator is not built");
  if (!(step > 0)) throw std::invalid_argument("flow step must be positive");
  if (!(drift_tolerance > 0)) throw std::invalid_argument("drift tolerance must be positive");
  if (!std::isfinite(final_time)) throw std::invalid_argument("final time must be finite");
  if (order != 2 && order != 4) throw std::invalid_argument("integrator order must be 2 or 4");
}

Trajectory integrate_flow(const PhasePoint& start, const FlowParams& params,
                          const std::vector<double>& sample_times, double initial_action) {
  params.validate();
  if (!start.x.allFinite() || !start.xi.allFinite())
    throw std::invalid_argument("flow start is not finite");
  const bool every_step = sample_times.empty();
  const std::vector<double> schedule =
      every_step ? std::vector<double>{0.0} : normalized_schedule(sample_times, params.final_time);
  double h = params.step;
  Trajectory traj;
  for (int attempt = 0; attempt <= params.max_halvings; ++attempt, h *= 0.5)
    if (integrate_once(start, params, h, schedule, every_step, initial_action, traj)) return traj;
  char msg[96];
  std::snprintf(msg, sizeof msg, "energy drift %.3g above tolerance at step %.3g", traj.max_drift, 2 * h);
  throw FlowError(FlowError::Kind::drift, msg);
}

FlowBatch integrate_batch(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xi0,
                          const Eigen::RowVectorXd& action0, const FlowParams& params,
                          const std::vector<double>& sample_times) {
  params.validate();
  if (x0.rows() != xi0.rows() || x0.cols() != xi0.cols() || action0.size() != x0.cols())
    throw std::invalid_argument("batch start arrays disagree in shape");
  const std::vector<double> schedule = normalized_schedule(sample_times, params.final_time);
  const ContinuumPotential& v = *params.potential;
  const double dir = params.final_time < 0 ? -1.0 : 1.0;
  const std::vector<double> weights = composition(params.order);

  auto run = [&](double h, FlowBatch& out) {
    out = FlowBatch{};
    out.step = h;
    Eigen::MatrixXd x = x0, xi = xi0, grad;
    Eigen::RowVectorXd value, u = action0;
    auto eval = [&] {
      try {
        v.evaluate_batch(x, value, grad);
      } catch (const OutOfRangeError& e) {
        throw FlowError(FlowError::Kind::domain, e.what());
      }
    };
    // p0 per column, refreshed after every kick; the action rate and the
    // energy check share it
    Eigen::RowVectorXd p0;
    auto refresh_p0 = [&] { p0 = xi.array().cos().colwise().sum().matrix(); };
    auto rate = [&] {
      return Eigen::RowVectorXd(p0 + value - (x.array() * grad.array()).colwise().sum().matrix());
    };
    eval();
    refresh_p0();
    const Eigen::RowVectorXd e0 = p0 + value;
    double elapsed = 0.0;
    auto record = [&] {
      out.times.push_back(dir * elapsed);
      out.x.push_back(x);
      out.xi.push_back(xi);
      if (params.track_action) out.action.push_back(u);
    };
    record();
    Eigen::RowVectorXd g0;
    for (std::size_t next = 1; next < schedule.size(); ++next) {
      const double target = std::abs(schedule[next]);
      while (elapsed < target) {
        double dt = std::min(h, target - elapsed);
        const double hs = dir * dt;
        for (double w : weights) {
          const double hw = w * hs;
          if (params.track_action) g0 = rate();
          xi -= 0.5 * hw * grad;
          x -= hw * xi.array().sin().matrix();
          eval();
          xi -= 0.5 * hw * grad;
          refresh_p0();
          if (params.track_action) u += 0.5 * hw * (g0 + rate());
        }
        const double drift = ((p0 + value) - e0).cwiseAbs().maxCoeff();
        out.max_drift = std::max(out.max_drift, drift);
        if (drift > params.drift_tolerance) return false;
        elapsed += dt;
        if (target - elapsed < 1e-13 * std::max(1.0, target)) elapsed = target;
      }
      record();
    }
    return true;
  };

  double h = params.step;
  FlowBatch out;
  for (int attempt = 0; attempt <= params.max_halvings; ++attempt, h *= 0.5)
    if (run(h, out)) return out;
  char msg[96];
  std::snprintf(msg, sizeof msg, "energy drift %.3g above tolerance in batch flow", out.max_drift);
  throw FlowError(FlowError::Kind::drift, msg);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  if (traj.size() == 0) return;
  const int d = static_cast<int>(traj.points.front().x.size());
  out << "t";
  for (int j = 1; j <= d; ++j) out << ",x_" << j;
  for (int j = 1; j <= d; ++j) out << ",xi_" << j;
  out << ",energy\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17e", v);
    out << buf;
  };
  for (std::size_t i = 0; i < traj.size(); ++i) {
    put(traj.times[i]);
    for (int j = 0; j < d; ++j) out << ',', put(traj.points[i].x[j]);
    for (int j = 0; j < d; ++j) out << ',', put(traj.points[i].xi[j]);
    out << ',';
    put(traj.energy[i]);
    out << '\n';
  }
}

bool Region::contains(const ContinuumPotential& v, const PhasePoint& p) const {
  if (p.x.norm() < radius) return false;
  if (!window.contains(classical_energy(v, p.x, p.xi))) return false;
  return sign * p.x.dot(velocity(p.xi)) >= 0.0;
}

namespace {

std::vector<Vec> probe_directions(int dim) {
  std::vector<Vec> dirs;
  if (dim == 1) {
    dirs.push_back(Vec::Constant(1, 1.0));
    dirs.push_back(Vec::Constant(1, -1.0));
  } else if (dim == 2) {
    for (int i = 0; i < 32; ++i) {
      Vec u(2);
      u << std::cos(2 * kPi * i / 32), std::sin(2 * kPi * i / 32);
      dirs.push_back(u);
    }
  } else {
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int c = -1; c <= 1; ++c) {
          if (a == 0 && b == 0 && c == 0) continue;
          Vec u(3);
          u << a, b, c;
          dirs.push_back(u.normalized());
        }
  }
  return dirs;
}

}  // namespace

EscapeConstants escape_constants(const EnergyWindow& window, const ContinuumPotential& v, int dim) {
  window.validate(dim);
  const int per_axis = dim == 1 ? 20001 : (dim == 2 ? 1001 : 101);
  const int half = per_axis / 2;
  MomentumGrid grid(LatticeBox(dim, half));
  double inf_k = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    const Vec xi = grid.point(k);
    if (window.contains_enlarged(free_symbol(xi))) inf_k = std::min(inf_k, speed_squared(xi));
  }
  EscapeConstants out;
  out.delta = std::min(0.5 * inf_k, 0.5 * window.distance_to_thresholds(dim));

  const auto dirs = probe_directions(dim);
  double limit = std::numeric_limits<double>::infinity();
  auto sup_beyond = [&](double r) {
    double sup = 0.0;
    for (double rr = r; rr <= 1e3 * r && rr <= limit; rr *= 1.05)
      for (const Vec& u : dirs) {
        const Vec x = rr * u;
        double val, rad;
        try {
          val = v.value(x);
          rad = v.radial_derivative(x);
        } catch (const OutOfRangeError&) {
          limit = rr;
          break;
        }
        sup = std::max({sup, std::abs(val), std::abs(rad)});
      }
    return sup;
  };
  if (v.is_zero() || sup_beyond(1.0) <= out.delta) {
    out.r0 = 1.0;
    return out;
  }
  double lo = 1.0, hi = 2.0;
  while (sup_beyond(hi) > out.delta) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e7 || hi > limit) throw std::runtime_error("escape radius search left the evaluator range");
  }
  for (int it = 0; it < 60 && hi - lo > 1e-9 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (sup_beyond(mid) <= out.delta ? hi : lo) = mid;
  }
  out.r0 = hi;
  return out;
}

std::vector<PhasePoint> sample_region_starts(const Region& region, const ContinuumPotential& v,
                                             int dim, int count, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PhasePoint> out;
  long attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 10'000'000L) throw std::runtime_error("region sampling did not converge");
    Vec dir(dim);
    for (int j = 0; j < dim; ++j) dir[j] = gauss(rng);
    if (dir.norm() == 0) continue;
    const double r = region.radius * (1.0 + unit(rng));
    Vec xi(dim);
    for (int j = 0; j < dim; ++j) xi[j] = -kPi + 2 * kPi * unit(rng);
    PhasePoint p(r * dir.normalized(), xi);
    if (region.contains(v, p)) out.push_back(std::move(p));
  }
  return out;
}

EscapeReport region_escape_probe(const PhasePoint& start, const Region& region,
                                 const FlowParams& params, double delta) {
  params.validate();
  if (!region.contains(*params.potential, start))
    throw RegionError("start point is not in the escape region");
  FlowParams p = params;
  p.final_time = region.sign * std::abs(params.final_time);
  const Trajectory traj = integrate_flow(start, p);
  const ContinuumPotential& v = *p.potential;

  EscapeReport rep;
  rep.max_drift = traj.max_drift;
  rep.min_margin = std::numeric_limits<double>::infinity();
  rep.monotone = true;
  const double r0sq = start.x.squaredNorm();
  std::vector<double> r2(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double t = traj.times[i];
    const Vec& x = traj.points[i].x;
    r2[i] = x.squaredNorm();
    rep.min_margin = std::min(rep.min_margin, r2[i] - r0sq - delta * t * t);
    if (region.sign * x.dot(velocity(traj.points[i].xi)) < 0) rep.monotone = false;
  }
  // slack for roundoff in |x|^2
  rep.bound_holds = rep.min_margin >= -1e-9 * (1.0 + r0sq);
  const double h = traj.step;
  for (std::size_t i = 1; i + 1 < traj.size(); ++i) {
    const double h1 = std::abs(traj.times[i] - traj.times[i - 1]);
    const double h2 = std::abs(traj.times[i + 1] - traj.times[i]);
    if (std::abs(h1 - h) > 1e-12 || std::abs(h2 - h) > 1e-12) continue;
    const double d2 = (r2[i + 1] - 2 * r2[i] + r2[i - 1]) / (h * h);
    const Vec& x = traj.points[i].x;
    const Vec& xi = traj.points[i].xi;
    const Vec g = v.gradient(x);
    const double rhs = 2 * speed_squared(xi) + 2 * (x.array() * xi.array().cos() * g.array()).sum();
    rep.identity_residual = std::max(rep.identity_residual, std::abs(d2 - rhs));
  }
  return rep;
}

namespace {

// Linear interpolation of a sampled vector quantity at time t.
template <typename Get>
Vec interpolate_at(const Trajectory& traj, double t, Get&& get) {
  const auto& ts = traj.times;
  const bool forward = ts.back() >= ts.front();
  auto it = forward ? std::lower_bound(ts.begin(), ts.end(), t)
                    : std::lower_bound(ts.begin(), ts.end(), t, std::greater<double>());
  if (it == ts.end()) return get(ts.size() - 1);
  const std::size_t i = static_cast<std::size_t>(it - ts.begin());
  if (i == 0 || ts[i] == t) return get(i);
  const double w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
  return (1 - w) * get(i - 1) + w * get(i);
}

}  // namespace

AsymptoticMomentum asymptotic_momentum(const Trajectory& traj, double mu, double fit_min,
                                       double fit_max) {
  if (traj.size() < 8) throw std::invalid_argument("trajectory too short for asymptotics");
  if (!(mu > 0)) throw std::invalid_argument("decay order must be positive");
  const double T = traj.times.back();
  const double sgn = T < 0 ? -1.0 : 1.0;
  auto xi_at = [&](double t) {
    return interpolate_at(traj, t, [&](std::size_t i) { return traj.unwrapped_xi[i]; });
  };
  auto x_at = [&](double t) {
    return interpolate_at(traj, t, [&](std::size_t i) { return traj.points[i].x; });
  };
  const double q = std::pow(2.0, mu);
  const Vec a = xi_at(T), b = xi_at(T / 2), c = xi_at(T / 4);
  AsymptoticMomentum out;
  // a frozen tail is its own limit
  out.xi_limit = a == b ? a : Vec((q * a - b) / (q - 1));
  const Vec previous = (q * b - c) / (q - 1);
  out.converged = (out.xi_limit - previous).norm() <= (a - b).norm() + 1e-15;

  const double t_lo = fit_min > 0 ? fit_min : std::abs(T) / 256;
  const double t_hi = fit_max > 0 ? fit_max : std::abs(T) / 4;
  if (!(t_hi > t_lo)) throw std::invalid_argument("empty fit range");
  std::vector<double> ts, dxi, dx;
  const Vec v_lim = velocity(out.xi_limit);
  const int samples = 48;
  for (int k = 0; k < samples; ++k) {
    const double t = t_lo * std::pow(t_hi / t_lo, static_cast<double>(k) / (samples - 1));
    ts.push_back(t);
    dxi.push_back((xi_at(sgn * t) - out.xi_limit).norm());
    dx.push_back((x_at(sgn * t) - sgn * t * v_lim).norm());
  }
  out.momentum_fit = log_log_fit(ts, dxi);
  out.position_fit = log_log_fit(ts, dx);
  return out;
}

VariationalEstimate variational_probe(const PhasePoint& start, const Region& region,
                                      const FlowParams& params,
                                      const std::vector<double>& sample_times, double rel_step) {
  params.validate();
  if (!region.contains(*params.potential, start))
    throw RegionError("start point is not in the escape region");
  const int d = static_cast<int>(start.x.size());
  const double hy = rel_step * std::max(1.0, start.x.norm());
  const double he = rel_step;
  if (!(hy > 0) || !(he > 0) || start.x.norm() + hy == start.x.norm())
    throw std::invalid_argument("perturbation step underflow");
  const int cols = 1 + 4 * d;
  Eigen::MatrixXd x0(d, cols), xi0(d, cols);
  for (int c = 0; c < cols; ++c) {
    x0.col(c) = start.x;
    xi0.col(c) = start.xi;
  }
  for (int j = 0; j < d; ++j) {
    x0(j, 1 + 2 * j) += hy;
    x0(j, 2 + 2 * j) -= hy;
    xi0(j, 1 + 2 * d + 2 * j) += he;
    xi0(j, 2 + 2 * d + 2 * j) -= he;
  }
  FlowParams p = params;
  const double tmax = sample_times.empty() ? 0.0 : std::abs(sample_times.back());
  p.final_time = region.sign * tmax;
  std::vector<double> signed_times;
  for (double t : sample_times) signed_times.push_back(region.sign * std::abs(t));
  const FlowBatch batch = integrate_batch(x0, xi0, Eigen::RowVectorXd::Zero(cols), p, signed_times);

  VariationalEstimate est;
  est.dxi_dy = SmallMatrix::Zero(d, d);
  for (std::size_t s = 0; s < batch.times.size(); ++s) {
    const Eigen::MatrixXd& xs = batch.x[s];
    const Eigen::MatrixXd& xis = batch.xi[s];
    SmallMatrix jy(d, d), je(d, d);
    for (int j = 0; j < d; ++j) {
      jy.col(j) = (xis.col(1 + 2 * j) - xis.col(2 + 2 * j)) / (2 * hy);
      je.col(j) = (xis.col(1 + 2 * d + 2 * j) - xis.col(2 + 2 * d + 2 * j)) / (2 * he);
    }
    est.dxi_dy = est.dxi_dy.cwiseMax(jy.cwiseAbs());
    est.sup_dxi_dy = std::max(est.sup_dxi_dy, operator_norm(jy));
    est.sup_dxi_deta = std::max(est.sup_dxi_deta, operator_norm(je));
    est.sup_dxi_deta_dev =
        std::max(est.sup_dxi_deta_dev, operator_norm(je - SmallMatrix::Identity(d, d)));
    est.sup_linear_growth = std::max(
        est.sup_linear_growth, (xs.col(0) - start.x).norm() / (1.0 + std::abs(batch.times[s])));
  }
  return est;
}

}  // namespace latscat
