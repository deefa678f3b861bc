#include "doctest.h"

#include "latscat/wave_operators.hpp"

#include <cmath>
#include <numbers>

using namespace latscat;

namespace {

const EnergyWindow kWindow{0.3, 0.7, 0.05, 0.02};

PacketSpec default_packet() {
  Vec c(1);
  c << std::numbers::pi / 3;
  return PacketSpec{c, 0.15};
}

WaveOpConfig config(std::vector<double> times, int margin) {
  WaveOpConfig cfg;
  cfg.window = kWindow;
  cfg.times = std::move(times);
  cfg.boundary_margin = margin;
  cfg.jobs = 2;
  return cfg;
}

std::vector<double> tail_of(const TimeSchedule& s, double from) {
  std::vector<double> out;
  for (double t : s.times)
    if (t >= from) out.push_back(t);
  return out;
}

// mu = 0.6 long-range setup shared by several cases
struct LongRange {
  LatticeBox box{1, 1024};
  MomentumGrid grid{box};
  PacketSpec packet = default_packet();
  LatticeField phi = build_wavepacket(box, packet, kWindow);
  TimeSchedule schedule = TimeSchedule::geometric(25.0 / 8, 200.0);
  PotentialSpec spec = PotentialSpec::power(0.02, 0.6);
  std::shared_ptr<const ContinuumPotential> pot = std::make_shared<const ContinuumPotential>(spec);
  Hamiltonian h{box, spec};
  Modifier hj = make_hj();
  Modifier dollard{std::make_shared<const PhaseTable>(dollard_phase(*pot, grid, kWindow, schedule))};
  int margin = default_boundary_margin(box, packet);

  Modifier make_hj() const {
    FanParams fp;
    fp.window = kWindow;
    fp.flow.potential = pot;
    fp.flow.order = 4;
    fp.flow.step = 0.05;
    const CharacteristicFan fan = build_fan(fp, grid, schedule);
    return Modifier(std::make_shared<const PhaseTable>(invert_and_assemble(fan, grid, kWindow)));
  }
};

const LongRange& long_range() {
  static const LongRange lr;
  return lr;
}

}  // namespace

TEST_CASE("free case: hj approximant does not depend on T") {
  const LatticeBox box(1, 1024);
  const MomentumGrid grid(box);
  const LatticeField phi = build_wavepacket(box, default_packet(), kWindow);
  const int margin = default_boundary_margin(box, default_packet());
  const auto zero = std::make_shared<const ContinuumPotential>(PotentialSpec::zero());
  FanParams fp;
  fp.window = kWindow;
  fp.flow.potential = zero;
  const TimeSchedule sched = TimeSchedule::geometric(25.0 / 8, 200.0);
  const CharacteristicFan fan = build_fan(fp, grid, sched);
  const Modifier hj(std::make_shared<const PhaseTable>(invert_and_assemble(fan, grid, kWindow)));
  const Hamiltonian h(box, PotentialSpec::zero());
  const WaveOpApproximant app = approximant(phi, h, hj, config({25, 50, 100, 200}, margin));

  // W(T) phi = e^{-i R1 p0(D)} E_I phi
  const LatticeField ref = free_propagate(app.windowed, fan.r1());
  for (const auto& s : app.states) CHECK((s.values() - ref.values()).norm() <= 1e-10);
  CHECK(app.isometry_sup() <= 1e-10);
  for (const auto& inc : cauchy_increments(app)) CHECK(inc.value <= 1e-10);

  const CookDiagnostics cook = cook_series(app.windowed, h, hj, +1, tail_of(sched, 1.0));
  for (double g : cook.g) CHECK(g == 0.0);

  // V = 0: the groups commute exactly
  for (double s : {0.0, 1.0, -3.5}) {
    const WaveOpApproximant shifted = approximant(free_propagate(phi, s), h, hj, config({25, 50, 100, 200}, margin));
    for (double d : intertwining_defect(app, shifted, h, s)) CHECK(d <= 1e-10);
  }
}

TEST_CASE("short range: unmodified increments fall") {
  const LatticeBox box(1, 1024);
  const PacketSpec packet = default_packet();
  const LatticeField phi = build_wavepacket(box, packet, kWindow);
  const Hamiltonian h(box, PotentialSpec::power(0.02, 2.0));
  const Modifier none = Modifier::none(MomentumGrid(box));
  const WaveOpApproximant app =
      approximant(phi, h, none, config({25, 50, 100, 200}, default_boundary_margin(box, packet)));
  const auto inc = cauchy_increments(app);
  REQUIRE(inc.size() == 3);
  CHECK(inc[1].value < inc[0].value);
  CHECK(inc[2].value < inc[1].value);
  CHECK(app.boundary_sup() <= 1e-8);
}

TEST_CASE("long range: hj modifier converges, none does not") {
  const LongRange& lr = long_range();
  const WaveOpApproximant app = approximant(lr.phi, lr.h, lr.hj, config({25, 50, 100, 200}, lr.margin));
  CHECK(app.isometry_sup() <= 1e-10);
  CHECK(app.boundary_sup() <= 1e-8);
  CHECK_THROWS_AS(app.at(30.0), std::out_of_range);

  CookDiagnostics cook = cook_series(app.windowed, lr.h, lr.hj, +1, tail_of(lr.schedule, 1.0));
  attach_increments(cook, app, 1e-8);
  CHECK(cook.fit.sufficient);
  CHECK(cook.fit.slope <= -1.45);
  REQUIRE(cook.increments.size() == 3);
  for (const auto& inc : cook.increments) {
    CHECK(inc.consistent);
    CHECK(inc.value <= inc.cook_integral);
  }
  CHECK(cook.increments.back().value <= 1e-2);
  CHECK(cook.increments.back().value < cook.increments.front().value);

  // the same potential with mu = 0.5 and no modifier: g ~ t^-mu
  const PotentialSpec spec = PotentialSpec::power(0.02, 0.5);
  const Hamiltonian h(lr.box, spec);
  const Modifier none = Modifier::none(lr.grid);
  const WaveOpApproximant plain = approximant(lr.phi, h, none, config({25, 50, 100, 200}, lr.margin));
  CookDiagnostics c2 = cook_series(plain.windowed, h, none, +1, tail_of(lr.schedule, 1.0));
  attach_increments(c2, plain, 1e-8);
  CHECK(std::abs(c2.fit.slope + 0.5) <= 0.15);
  CHECK(c2.increments[1].value > c2.increments[0].value);
  for (const auto& inc : c2.increments) CHECK(inc.consistent);
}

TEST_CASE("intertwining defect") {
  const LongRange& lr = long_range();
  const double s = 1.0;
  const WaveOpConfig cfg = config({25, 50, 100, 200}, lr.margin);
  const WaveOpApproximant app = approximant(lr.phi, lr.h, lr.hj, cfg);
  const WaveOpApproximant shifted = approximant(free_propagate(lr.phi, s), lr.h, lr.hj, cfg);
  const std::vector<double> d = intertwining_defect(app, shifted, lr.h, s);
  CHECK(d.back() <= 0.5 * d[1]);
  CHECK(d.back() <= 5e-2);
  for (double x : intertwining_defect(app, app, lr.h, 0.0)) CHECK(x == 0.0);

  const WaveOpApproximant other = approximant(lr.phi, lr.h, lr.hj, config({25, 50, 100}, lr.margin));
  CHECK_THROWS_AS(intertwining_defect(app, other, lr.h, s), WaveOperatorError);
}

TEST_CASE("dispersive profile of free evolution") {
  // a wide momentum bump reaches the stationary-phase regime by t ~ 50
  const LatticeBox box(1, 2048);
  const MomentumGrid grid(box);
  const EnergyWindow window{0.2, 0.95, 0.04, 0.02};
  Vec c(1);
  c << 0.85;
  const PacketSpec packet{c, 0.5};
  const LatticeField phi = build_wavepacket(box, packet, window);
  const auto support = packet_support(grid, packet);
  std::vector<double> times;
  for (double t = 50; t <= 200 * (1 + 1e-12); t *= std::pow(2.0, 0.25)) times.push_back(t);
  const DispersiveProfile dp = dispersive_profile(phi, support, Modifier::none(grid), +1, times);

  CHECK(std::abs(dp.sup_fit.slope + 0.5) <= 0.1);
  CHECK(dp.outside_mass.back() < 0.5 * dp.outside_mass.front());
  CHECK(dp.reference_time == doctest::Approx(50.0));
  for (double r : dp.size_ratio) CHECK((r >= 0.5 && r <= 2.0));

  // in d = 1 the image of the support is an interval; count it directly
  for (std::size_t i = 0; i < times.size(); ++i) {
    double lo = 1e300, hi = -1e300;
    for (Eigen::Index k : support) {
      const double y = times[i] * velocity(grid.point(k))[0];
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
    CHECK(dp.region_size[i] == std::floor(hi + 4) - std::ceil(lo - 4) + 1);
  }
}

TEST_CASE("modifier gauge") {
  const LongRange& lr = long_range();
  const auto support = packet_support(lr.grid, lr.packet);
  const LatticeField w = apply_multiplier(spectral_window(kWindow, lr.grid, false), lr.phi);
  const std::vector<double> times{12.5, 25, 50, 100, 200};

  SUBCASE("identity and constant gauges") {
    const GaugeReport same = modifier_gauge(lr.hj, lr.hj, w, support, +1, times, 0, 0, 1e-2);
    for (double x : same.gauge_increment) CHECK(x == 0.0);
    for (double x : same.residual) CHECK(x <= 1e-15);

    auto shifted = std::make_shared<PhaseTable>(*lr.hj.table());
    for (auto& row : shifted->phase) row.array() += 0.4;
    const GaugeReport constant = modifier_gauge(lr.hj, Modifier(shifted), w, support, +1, times, 0, 0, 1e-2);
    for (Eigen::Index k = 0; k < constant.stabilized.size(); ++k)
      CHECK(std::abs(constant.stabilized[k] - 0.4) <= 1e-12);
    for (double x : constant.phase_increment) CHECK(x <= 1e-12);
  }

  SUBCASE("Dollard against hj") {
    const GaugeReport g = modifier_gauge(lr.hj, lr.dollard, w, support, +1, times, 0, 0, 1e-2);
    CHECK(g.phase_decreasing);
    REQUIRE(g.increment_times.size() == 4);
    CHECK(g.residual.back() <= 1e-12);
    CHECK(g.residual.front() > g.residual[3]);
    CHECK_THROWS_AS(modifier_gauge(lr.hj, lr.dollard, w, support, +1, times, 0.1, 0, 1e-2), WaveOperatorError);
  }
}

TEST_CASE("boundary-mass breach") {
  const LatticeBox box(1, 128);
  const LatticeField phi = build_wavepacket(box, default_packet(), kWindow);
  const Hamiltonian h(box, PotentialSpec::power(0.02, 2.0));
  CHECK_THROWS_AS(approximant(phi, h, Modifier::none(MomentumGrid(box)), config({50, 100}, 16)),
                  WaveOperatorError);
}
