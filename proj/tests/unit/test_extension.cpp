#include "doctest.h"

#include "latscat/extension.hpp"
#include "latscat/potential.hpp"

#include <cmath>
#include <memory>
#include <numbers>

using namespace latscat;

namespace {

constexpr double kPi = std::numbers::pi;

const WindowFunction& shared_window() {
  static const WindowFunction w = build_window();
  return w;
}

Vec point(double a) { return Vec::Constant(1, a); }
Vec point(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// independent oracle: composite Simpson on the full symmetric interval
double kernel_simpson(const WindowFunction& w, double s, int intervals) {
  const double a = -1.5 * kPi, b = 1.5 * kPi, h = (b - a) / intervals;
  double acc = 0;
  for (int i = 0; i <= intervals; ++i) {
    const double x = a + i * h;
    const double c = (i == 0 || i == intervals) ? 1 : (i % 2 ? 4 : 2);
    acc += c * std::cos(s * x) * w.profile(x);
  }
  return acc * h / 3 / (2 * kPi);
}

}  // namespace

TEST_CASE("window profile") {
  const WindowFunction& w = shared_window();
  CHECK(w.partition_residual() <= 1e-10);
  for (double xi : {1.6 * kPi, -1.6 * kPi, 1.5 * kPi, 2.0 * kPi}) CHECK(w.profile(xi) == 0.0);
  Vec corner = point(1.6 * kPi, 0.1);
  CHECK(w.profile(corner) == 0.0);
  for (int i = 0; i <= 1000; ++i) {
    const double xi = -5.0 + 10.0 * i / 1000;
    CHECK(w.profile(xi) == w.profile(-xi));
    CHECK(w.profile(xi) >= 0.0);
  }
  CHECK(w.profile(0.5 * kPi) == 1.0);
}

TEST_CASE("kernel Kronecker property and table accuracy") {
  const WindowFunction& w = shared_window();
  const double norm = std::sqrt(2 * kPi);  // (2pi)^{d/2}, d = 1
  for (int k = -10; k <= 10; ++k) CHECK(std::abs(w.chi0(k) - (k == 0 ? norm : 0.0)) <= 1e-8);
  // d = 2 tensor kernel
  for (int a = -10; a <= 10; ++a)
    for (int b = -10; b <= 10; ++b) {
      const double chi = w.chi0(a) * w.chi0(b);
      CHECK(std::abs(chi - ((a == 0 && b == 0) ? 2 * kPi : 0.0)) <= 1e-8);
    }
  for (double s : {0.3, 1.7, 5.21, 12.03, 29.9}) {
    const double ref = kernel_simpson(w, s, 40000);
    CHECK(std::abs(w.kernel(s) - ref) < 1e-10);
    CHECK(std::abs(w.kernel_quadrature(s) - ref) < 1e-12);
    for (int m = 1; m <= 3; ++m)
      CHECK(std::abs(w.kernel(s, m) - w.kernel_quadrature(s, m)) < 1e-8);
  }
  CHECK_THROWS_AS(w.kernel(w.parameters().radius + 3.0), OutOfRangeError);
}

TEST_CASE("transferred kernel satisfies the difference identity") {
  const WindowFunction& w = shared_window();
  for (double s : {-3.3, -0.5, 0.0, 0.25, 2.7, 9.1})
    CHECK(std::abs(w.transferred_kernel(s) - w.transferred_kernel(s - 1) - w.kernel_quadrature(s, 1)) <
          1e-12);
}

TEST_CASE("extension interpolates and reproduces constants") {
  const WindowFunction& w = shared_window();

  SUBCASE("constants") {
    for (int d = 1; d <= 2; ++d) {
      LatticeFunction one(LatticeBox(d, 50));
      one.values().setOnes();
      ExtendedPotential ext(one, w);
      for (double a : {0.5, 0.3, 0.77, -3.14, 5.0001}) {
        const Vec x = d == 1 ? point(a) : point(a, 0.41 - a);
        CHECK(std::abs(ext.value(x) - 1.0) <= 1e-8);
        int alpha1[] = {1, 0};
        CHECK(std::abs(ext.derivative(x, std::span<const int>(alpha1, d))) <= 1e-8);
      }
    }
  }

  SUBCASE("interpolation at lattice sites") {
    for (double mu : {0.5, 1.0}) {
      for (int d = 1; d <= 2; ++d) {
        const PotentialSpec spec = PotentialSpec::power(1.0, mu, ExtensionPolicy::window);
        const LatticeBox box(d, 110);
        ExtendedPotential ext(sample_potential(spec, box), w);
        double worst = 0;
        if (d == 1) {
          for (int n = -64; n <= 64; ++n)
            worst = std::max(worst, std::abs(ext.value(point(n)) - lattice_value(spec, Site::Constant(1, n))));
        } else {
          for (int a = -64; a <= 64; a += 4)
            for (int b = -64; b <= 64; b += 4) {
              Site s(2);
              s << a, b;
              worst = std::max(worst, std::abs(ext.value(point(a, b)) - lattice_value(spec, s)));
            }
        }
        CHECK(worst <= 1e-8);
      }
    }
  }

  SUBCASE("alternating data against a refined quadrature oracle") {
    LatticeFunction alt(LatticeBox(1, 50));
    for (Eigen::Index f = 0; f < alt.box().size(); ++f) alt.values()[f] = (f % 2 == 0) ? 1.0 : -1.0;
    ExtendedPotential ext(alt, w);
    double ref = 0;
    const int rho = w.parameters().radius;
    for (int n = -rho; n <= rho + 1; ++n) {
      const double s = 0.5 - n;
      if (std::abs(s) > rho) continue;
      Site site(1);
      site << n;
      ref += kernel_simpson(w, s, 10 * w.parameters().quadrature_points) * alt[site];
    }
    CHECK(std::abs(ext.value(point(0.5)) - ref) <= 1e-6);
  }

  SUBCASE("range errors") {
    LatticeFunction one(LatticeBox(1, 50));
    ExtendedPotential ext(one, w);
    CHECK(ext.reliable_radius() == 8);
    CHECK_NOTHROW(ext.value(point(8.0)));
    CHECK_THROWS_AS(ext.value(point(8.5)), OutOfRangeError);
    CHECK_THROWS_AS(ExtendedPotential(LatticeFunction(LatticeBox(1, 30)), w), std::invalid_argument);
  }
}

TEST_CASE("derivatives: table, finite differences and transferred kernel agree") {
  const WindowFunction& w = shared_window();
  const PotentialSpec spec = PotentialSpec::power(1.0, 0.5, ExtensionPolicy::window);
  ExtendedPotential ext(sample_potential(spec, LatticeBox(2, 90)), w);
  for (const Vec& x : {point(3.3, -7.9), point(-12.25, 0.5), point(20.0, 11.0)}) {
    const Vec fd = ext.gradient(x);
    for (int j = 0; j < 2; ++j) {
      int alpha[2] = {0, 0};
      alpha[j] = 1;
      const double direct = ext.derivative(x, alpha);
      CHECK(std::abs(direct - ext.derivative(x, alpha, true)) < 1e-10);
      CHECK(std::abs(direct - fd[j]) < 1e-7);
      CHECK(std::abs(direct - ext.transferred_derivative(x, j)) < 1e-9);
    }
  }
}

TEST_CASE("continuum evaluators") {
  const PotentialSpec p = PotentialSpec::power(0.7, 1.3);
  CHECK(lattice_value(p, Site::Zero(2)) == doctest::Approx(0.7));
  CHECK(lattice_value(PotentialSpec::power(1, 1), Site::Constant(1, 1)) == doctest::Approx(1 / std::sqrt(2.0)));

  ContinuumPotential analytic(p);
  Vec x = point(2.0, -1.0);
  const Vec g = analytic.gradient(x);
  for (int j = 0; j < 2; ++j) {
    Vec e = Vec::Zero(2);
    e[j] = 1e-6;
    CHECK(g[j] == doctest::Approx((analytic.value(x + e) - analytic.value(x - e)) / 2e-6).epsilon(1e-7));
  }
  CHECK(analytic.value(point(3.0, 4.0)) == doctest::Approx(lattice_value(p, Site(Eigen::Vector2i(3, 4)))));

  const PotentialSpec win = PotentialSpec::power(0.7, 1.3, ExtensionPolicy::window);
  ContinuumPotential pending(win);
  CHECK_FALSE(pending.ready());
  CHECK_THROWS_AS(pending.value(x), std::logic_error);
  auto ext = std::make_shared<const ExtendedPotential>(sample_potential(win, LatticeBox(2, 58)), shared_window());
  ContinuumPotential built(win, ext);
  CHECK(built.ready());
  CHECK(std::abs(built.value(point(3.0, 4.0)) - lattice_value(win, Site(Eigen::Vector2i(3, 4)))) < 1e-8);

  CHECK_THROWS_AS(PotentialSpec::power(1.0, 0.0), std::invalid_argument);
  CHECK(ContinuumPotential(PotentialSpec::zero()).value(x) == 0.0);
}

TEST_CASE("symbol decay probe") {
  const WindowFunction& w = shared_window();
  const std::vector<double> radii{8, 16, 32, 64, 128, 256};
  for (double mu : {0.5, 1.0}) {
    ExtendedPotential ext(sample_potential(PotentialSpec::power(1.0, mu), LatticeBox(1, 330)), w);
    for (int order = 0; order <= 2; ++order) {
      const int alpha[] = {order};
      const DecayProbe probe = symbol_decay_probe(ext, alpha, radii);
      CHECK(std::abs(probe.fit.slope - (-mu - order)) <= 0.2);
    }
  }
  LatticeFunction one(LatticeBox(1, 330));
  one.values().setOnes();
  ExtendedPotential flat(one, w);
  const int a1[] = {1};
  const DecayProbe p = symbol_decay_probe(flat, a1, radii);
  for (double v : p.sup_values) CHECK(v <= 1e-8);
  ExtendedPotential ext(sample_potential(PotentialSpec::power(1.0, 1.0), LatticeBox(1, 330)), w);
  CHECK_THROWS_AS(symbol_decay_probe(ext, a1, {8, 16}), std::invalid_argument);
}
