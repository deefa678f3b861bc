#include "latscat/wave_operators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <thread>

namespace latscat {

namespace {

// Runs f(i) for i in [0, n) on up to `jobs` threads; results go to slots
// owned by i, so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& f) {
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_lock;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(error_lock);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

int find_time(const std::vector<double>& times, double t) {
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(times[i] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return static_cast<int>(i);
  return -1;
}

double momentum_norm(const MomentumGrid& grid, const ComplexVector& values) {
  return values.norm() * std::sqrt(grid.cell_volume());
}

}  // namespace

const LatticeField& WaveOpApproximant::at(double t) const {
  const int i = find_time(times, t);
  if (i < 0) throw std::out_of_range("time not cached in the approximant");
  return states[static_cast<std::size_t>(i)];
}

double WaveOpApproximant::isometry_sup() const {
  return norm_defect.empty() ? 0.0 : *std::max_element(norm_defect.begin(), norm_defect.end());
}

double WaveOpApproximant::boundary_sup() const {
  return boundary.empty() ? 0.0 : *std::max_element(boundary.begin(), boundary.end());
}

int default_boundary_margin(const LatticeBox& box, const PacketSpec& packet) {
  const int m = static_cast<int>(std::ceil(8 * packet.position_width()));
  return std::clamp(m, 1, std::max(1, box.half_width() / 4));
}

WaveOpApproximant approximant(const LatticeField& phi, const Hamiltonian& h, const Modifier& modifier,
                              const WaveOpConfig& cfg) {
  if (cfg.sign != 1 && cfg.sign != -1) throw std::invalid_argument("sign must be +1 or -1");
  cfg.propagator.validate();
  const LatticeBox& box = phi.box();
  if (!(box == h.box())) throw std::invalid_argument("packet and Hamiltonian boxes differ");
  for (std::size_t i = 0; i < cfg.times.size(); ++i)
    if (cfg.times[i] < 0 || (i && cfg.times[i] <= cfg.times[i - 1]))
      throw std::invalid_argument("approximant times must be non-negative and increasing");

  WaveOpApproximant app;
  app.sign = cfg.sign;
  app.kind = modifier.kind();
  app.boundary_margin = cfg.boundary_margin > 0 ? cfg.boundary_margin : std::max(1, box.half_width() / 8);
  app.windowed = apply_multiplier(spectral_window(cfg.window, MomentumGrid(box), cfg.sharp_window), phi);
  const double base = app.windowed.norm();
  const std::size_t n = cfg.times.size();
  for (double t : cfg.times) app.times.push_back(cfg.sign * t);
  app.states.resize(n);
  app.norm_defect.assign(n, 0.0);
  app.boundary.assign(n, 0.0);

  parallel_for(n, cfg.jobs, [&](std::size_t m) {
    const double t = app.times[m];
    const LatticeField w = apply_modifier(app.windowed, modifier, t);
    LatticeField out = full_propagate(w, -t, h, cfg.propagator);  // e^{itH}
    app.boundary[m] =
        std::max(boundary_mass(w, app.boundary_margin), boundary_mass(out, app.boundary_margin));
    app.norm_defect[m] = std::abs(out.norm() - base);
    app.states[m] = std::move(out);
  });
  for (std::size_t m = 0; m < n; ++m)
    if (app.boundary[m] > cfg.propagator.boundary_threshold)
    {
      char msg[128];
      std::snprintf(msg, sizeof msg, "boundary mass %.3e at T = %g exceeds the threshold %.1e",
                    app.boundary[m], app.times[m], cfg.propagator.boundary_threshold);
      throw WaveOperatorError(msg);
    }
  return app;
}

std::vector<CauchyIncrement> cauchy_increments(const WaveOpApproximant& app) {
  std::vector<CauchyIncrement> out;
  for (std::size_t m = 0; m < app.times.size(); ++m) {
    if (app.times[m] == 0) continue;
    const int k = find_time(app.times, 2 * app.times[m]);
    if (k < 0) continue;
    CauchyIncrement inc;
    inc.t = std::abs(app.times[m]);
    inc.value = (app.states[static_cast<std::size_t>(k)].values() - app.states[m].values()).norm();
    inc.cook_integral = std::numeric_limits<double>::quiet_NaN();
    out.push_back(inc);
  }
  return out;
}

CookDiagnostics cook_series(const LatticeField& windowed, const Hamiltonian& h, const Modifier& modifier,
                            int sign, const std::vector<double>& times, double fit_min, double fit_max) {
  if (!(windowed.box() == h.box())) throw std::invalid_argument("packet and Hamiltonian boxes differ");
  if (modifier.kind() != ModifierKind::none && !modifier.table())
    throw WaveOperatorError("derivative table missing");
  CookDiagnostics out;
  out.times = times;
  out.g.resize(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = sign * times[i];
    const LatticeField u = apply_modifier(windowed, modifier, t);
    ComplexVector r = h.potential().cwiseProduct(u.values());
    if (modifier.kind() != ModifierKind::none)
      r -= apply_multiplier(modifier.potential_term(t), u).values();
    out.g[i] = r.norm();
  }
  out.fit = log_log_fit(out.times, out.g, fit_min, fit_max);
  const auto first = std::lower_bound(times.begin(), times.end(), fit_min);
  if (first != times.end() && times.size() > 1 && *first < times.back())
    out.tail = power_law_integral(times, out.g, *first, times.back());
  return out;
}

void attach_increments(CookDiagnostics& cook, const WaveOpApproximant& app, double slack) {
  cook.increments = cauchy_increments(app);
  if (cook.times.empty()) return;
  for (auto& inc : cook.increments) {
    if (inc.t < cook.times.front() || 2 * inc.t > cook.times.back() * (1 + 1e-12)) continue;
    inc.cook_integral = power_law_integral(cook.times, cook.g, inc.t, std::min(2 * inc.t, cook.times.back()));
    inc.consistent = inc.value <= inc.cook_integral * (1 + 1e-3) + slack;
  }
}

std::vector<double> intertwining_defect(const WaveOpApproximant& app, const WaveOpApproximant& shifted,
                                        const Hamiltonian& h, double s, const PropagatorConfig& cfg) {
  if (app.times != shifted.times || app.sign != shifted.sign)
    throw WaveOperatorError("intertwining runs use different schedules");
  std::vector<double> out(app.times.size());
  for (std::size_t m = 0; m < app.times.size(); ++m) {
    const LatticeField a = s == 0 ? app.states[m] : full_propagate(app.states[m], s, h, cfg);
    out[m] = (a.values() - shifted.states[m].values()).norm();
  }
  return out;
}

DispersiveProfile dispersive_profile(const LatticeField& phi, const std::vector<Eigen::Index>& support,
                                     const Modifier& modifier, int sign, const std::vector<double>& times,
                                     int margin, double reference_time, double fit_min, double fit_max) {
  const LatticeBox& box = phi.box();
  const MomentumGrid grid(box);
  const int d = box.dim(), L = box.half_width();
  if (support.empty()) throw WaveOperatorError("empty packet support");
  if (margin < 0) throw std::invalid_argument("region margin must be >= 0");
  DispersiveProfile out;
  out.times = times;
  std::vector<char> inside(static_cast<std::size_t>(box.size()));
  for (double tm : times) {
    const double t = sign * tm;
    const LatticeField u = apply_modifier(phi, modifier, t);
    const Eigen::MatrixXd grad = modifier.gradient(t);
    std::fill(inside.begin(), inside.end(), 0);
    for (Eigen::Index k : support) {
      const Vec y = grad.col(k);
      if (!y.allFinite()) throw WaveOperatorError("region degenerate: non-finite phase gradient");
      Site lo(d), hi(d);
      for (int j = 0; j < d; ++j) {
        lo[j] = std::max(-L, static_cast<int>(std::ceil(y[j] - margin)));
        hi[j] = std::min(L, static_cast<int>(std::floor(y[j] + margin)));
        if (lo[j] > hi[j]) goto next_point;
      }
      {
        Site n = lo;
        for (;;) {
          inside[static_cast<std::size_t>(box.index(n))] = 1;
          int j = d - 1;
          while (j >= 0 && n[j] == hi[j]) n[j] = lo[j], --j;
          if (j < 0) break;
          ++n[j];
        }
      }
    next_point:;
    }
    double total = 0, outside = 0, sup = 0, count = 0;
    for (Eigen::Index f = 0; f < box.size(); ++f) {
      const double w = std::norm(u.values()[f]);
      total += w;
      sup = std::max(sup, w);
      if (inside[static_cast<std::size_t>(f)])
        ++count;
      else
        outside += w;
    }
    out.outside_mass.push_back(total > 0 ? outside / total : 0.0);
    out.sup_norm.push_back(std::sqrt(sup));
    out.region_size.push_back(count);
  }
  out.sup_fit = log_log_fit(out.times, out.sup_norm, fit_min, fit_max);
  // reference: the sampled time closest to the requested one
  std::size_t ref = 0;
  for (std::size_t i = 1; i < times.size(); ++i)
    if (std::abs(times[i] - reference_time) < std::abs(times[ref] - reference_time)) ref = i;
  if (!times.empty() && times[ref] > 0) {
    out.reference_time = times[ref];
    out.c1 = out.region_size[ref] / std::pow(times[ref], d);
    for (std::size_t i = 0; i < times.size(); ++i)
      out.size_ratio.push_back(times[i] > 0 ? out.region_size[i] / (out.c1 * std::pow(times[i], d))
                                            : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

GaugeReport modifier_gauge(const Modifier& phi_mod, const Modifier& psi_mod, const LatticeField& windowed,
                           const std::vector<Eigen::Index>& support, int sign, const std::vector<double>& times,
                           double last_increment_phi, double last_increment_psi, double threshold) {
  if (!(last_increment_phi <= threshold) || !(last_increment_psi <= threshold))
    throw WaveOperatorError("gauge comparison needs converged runs");
  if (!(phi_mod.grid() == psi_mod.grid())) throw std::invalid_argument("modifier grids differ");
  if (times.empty()) throw std::invalid_argument("empty gauge schedule");
  const MomentumGrid& grid = phi_mod.grid();
  const ComplexVector hat = fourier(windowed).values();

  GaugeReport out;
  out.times = times;
  std::vector<RealVector> phi(times.size()), diff(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = sign * times[i];
    phi[i] = phi_mod.phase(t);
    diff[i] = psi_mod.phase(t) - phi[i];
  }
  const RealVector& last = diff.back();
  out.stabilized.resize(static_cast<Eigen::Index>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) out.stabilized[static_cast<Eigen::Index>(k)] = last[support[k]];

  for (std::size_t i = 0; i < times.size(); ++i) {
    // W^Phi(T) phi - W^Psi(T) G phi = e^{iTH}(e^{-i Phi} - e^{-i Psi} e^{i D_last}) phi
    ComplexVector r(hat.size());
    for (Eigen::Index f = 0; f < hat.size(); ++f) {
      const double psi = phi[i][f] + diff[i][f];
      r[f] = (std::polar(1.0, -phi[i][f]) - std::polar(1.0, last[f] - psi)) * hat[f];
    }
    out.residual.push_back(momentum_norm(grid, r));

    const int k = times[i] > 0 ? find_time(times, 2 * times[i]) : -1;
    if (k < 0) continue;
    const RealVector& a = diff[i];
    const RealVector& b = diff[static_cast<std::size_t>(k)];
    double sup = 0;
    for (Eigen::Index f : support) sup = std::max(sup, std::abs(b[f] - a[f]));
    ComplexVector g(hat.size());
    for (Eigen::Index f = 0; f < hat.size(); ++f) g[f] = (std::polar(1.0, b[f]) - std::polar(1.0, a[f])) * hat[f];
    out.increment_times.push_back(times[i]);
    out.phase_increment.push_back(sup);
    out.gauge_increment.push_back(momentum_norm(grid, g));
  }
  out.phase_decreasing = out.phase_increment.size() >= 2;
  for (std::size_t i = 1; i < out.phase_increment.size(); ++i)
    if (!(out.phase_increment[i] < out.phase_increment[i - 1])) out.phase_decreasing = false;
  return out;
}

}  // namespace latscat
