#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gammaphase/construct.hpp"
#include "gammaphase/solver.hpp"

using namespace gammaphase;

namespace {

Material normalized(double eps) {
  return Material::make({3.0, 1.0}, isotropic_stiffness(1.0, 1.0), Misfit{0.0, 1.0, 0.0}, eps);
}

// Composite Simpson with n (even) panels.
template <typename F>
double simpson(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

}  // namespace

TEST(Profile, WidthBoundAndRoundTrip) {
  const Material base = normalized(0.1);
  for (double eps : {0.1, 0.01}) {
    const ProfileSpec p = build_profile(base.with_epsilon(eps));
    EXPECT_LE(p.width(), std::sqrt(eps));
    EXPECT_EQ(p.phi(p.mu0()), 0.0);
    for (int k = 0; k <= 1000; ++k) {
      const double s = p.mu0() + (p.mu1() - p.mu0()) * k / 1000.0;
      ASSERT_NEAR(p.inverse(p.phi(s)), s, 1e-8) << s;
    }
  }
}

TEST(Profile, WidthMatchesIndependentQuadrature) {
  const Material m = normalized(0.05);
  const ProfileSpec p = build_profile(m);
  // Substitute s = mu0 + (mu1 - mu0) (1 - cos θ)/2 to smooth the endpoints.
  const double a = m.wells.mu0, d = m.wells.gap(), eps = m.epsilon;
  const auto integrand = [&](double th) {
    const double s = a + 0.5 * d * (1.0 - std::cos(th));
    return eps / std::sqrt(eps + eval_f(m.chem, m.wells, s)) * 0.5 * d * std::sin(th);
  };
  EXPECT_NEAR(p.width(), simpson(integrand, 0.0, std::numbers::pi, 4000), 1e-10);
}

TEST(Profile, CentroidIsHalfWidthForSymmetricWell) {
  const ProfileSpec p = build_profile(normalized(0.05));
  EXPECT_NEAR(p.centroid(), 0.5 * p.width(), 1e-10);
}

TEST(Profile, MonotoneAndExtendedByConstants) {
  const ProfileSpec p = build_profile(normalized(0.05));
  double prev = -1.0;
  for (int k = 0; k <= 200; ++k) {
    const double t = -0.1 + (p.width() + 0.2) * k / 200.0;
    const double s = p.inverse(t);
    ASSERT_GE(s, prev);
    prev = s;
  }
  EXPECT_EQ(p.inverse(-1.0), p.mu0());
  EXPECT_EQ(p.inverse(p.width() + 1.0), p.mu1());
}

TEST(Profile, ShiftedWellNarrowsTheLayer) {
  const Material m = normalized(0.05);
  const ProfileSpec chem = build_profile(m, WellMode::ChemOnly);
  const ProfileSpec shifted = build_profile(m, WellMode::Shifted);
  EXPECT_EQ(shifted.mode(), WellMode::Shifted);
  EXPECT_LT(shifted.width(), chem.width());
  const double coeff = quad_form(m.stiffness, m.e0.matrix());
  const double s = 0.4;
  EXPECT_NEAR(shifted.well(s) - chem.well(s), coeff * (s - m.wells.mu0) * (s - m.wells.mu0), 1e-14);
}

TEST(Profile, RejectsBadInput) {
  const Material m = normalized(0.05);
  EXPECT_THROW(build_profile(m.wells, m.chem, 0.0), ParameterError);
  EXPECT_THROW(build_profile(analyze_wells({1.0, 1.0}), {1.0, 1.0}, 0.1), ParameterError);
}

TEST(ReferencePair, BranchesAgreeOnInterface) {
  const Material m = normalized(0.1);
  for (const auto& conn : compatibility(m.e0, m.wells)) {
    const Vec2 tangent(-conn.nu.y(), conn.nu.x());
    for (double s : {-0.7, 0.0, 0.3}) {
      const Vec2 z = s * tangent;
      const PointPair lower = reference_pair(conn, m.wells, m.e0, z);
      const Vec2 upper = (m.wells.mu1 * m.e0.matrix() + conn.skew()) * z;
      EXPECT_NEAR((lower.u - upper).norm(), 0.0, 1e-14);
      EXPECT_EQ(lower.c, m.wells.mu0);
    }
    const PointPair above = reference_pair(conn, m.wells, m.e0, 0.2 * conn.nu);
    EXPECT_EQ(above.c, m.wells.mu1);
  }
}

TEST(Laminate, ChordAndSharpEnergy) {
  const Rect r{0.0, 0.0, 2.0, 1.0};
  EXPECT_NEAR(chord_length(r, Vec2::UnitY(), 0.5), 2.0, 1e-14);
  EXPECT_NEAR(chord_length(r, Vec2::UnitX(), 0.5), 1.0, 1e-14);
  EXPECT_EQ(chord_length(r, Vec2::UnitY(), 1.5), 0.0);
  EXPECT_NEAR(chord_length(Rect{0, 0, 1, 1}, Vec2(1, 1).normalized(), std::sqrt(0.5)), std::sqrt(2.0), 1e-12);
  const Laminate lam{Vec2::UnitY(), {0.25, 0.75}, 0.0, r};
  EXPECT_NEAR(sharp_energy(lam, 0.4), 0.4 * 4.0, 1e-14);
}

TEST(Laminate, Validation) {
  const Material m = normalized(0.1);
  const auto conns = compatibility(m.e0, m.wells);
  const Rect r{0, 0, 1, 1};
  EXPECT_NO_THROW(validate_laminate({Vec2::UnitY(), {0.5}, m.wells.mu0, r}, m.wells, &conns));
  EXPECT_NO_THROW(validate_laminate({-Vec2::UnitX(), {0.5}, m.wells.mu1, r}, m.wells, &conns));
  EXPECT_THROW(validate_laminate({Vec2(1, 1).normalized(), {0.5}, m.wells.mu0, r}, m.wells, &conns), GeometryError);
  EXPECT_THROW(validate_laminate({Vec2::UnitY(), {0.5, 0.2}, m.wells.mu0, r}, m.wells), GeometryError);
  EXPECT_THROW(validate_laminate({Vec2::UnitY(), {0.5}, 0.5, r}, m.wells), GeometryError);
  EXPECT_THROW(validate_laminate({Vec2(2, 0), {0.5}, m.wells.mu0, r}, m.wells), GeometryError);
}

TEST(Laminate, SignedDistance) {
  const Material m = normalized(0.1);
  const Laminate lam{Vec2::UnitY(), {0.3, 0.7}, m.wells.mu0, Rect{0, 0, 1, 1}};
  EXPECT_NEAR(laminate_distance(lam, m.wells, 0.1), -0.2, 1e-15);
  EXPECT_NEAR(laminate_distance(lam, m.wells, 0.4), 0.1, 1e-15);
  EXPECT_NEAR(laminate_distance(lam, m.wells, 0.65), 0.05, 1e-15);
  EXPECT_NEAR(laminate_distance(lam, m.wells, 0.9), -0.2, 1e-15);
  const Laminate none{Vec2::UnitY(), {}, m.wells.mu1, Rect{0, 0, 1, 1}};
  EXPECT_EQ(laminate_distance(none, m.wells, 0.5), std::numeric_limits<double>::infinity());
}

TEST(Recovery, SpacingRule) {
  const Material m = normalized(0.01);
  const auto conns = compatibility(m.e0, m.wells);
  const ProfileSpec p = build_profile(m);
  const Grid g = Grid::make(41, 41, 1.0, 1.0);
  const Laminate tight{Vec2::UnitY(), {0.4, 0.6}, m.wells.mu0, g.bounds()};  // gap 0.2 < 4 sqrt(0.01)
  EXPECT_THROW(recovery_pair(tight, conns[1], p, g, m.wells, m.e0), GeometryError);
  const Laminate wrong{Vec2::UnitX(), {0.5}, m.wells.mu0, g.bounds()};
  EXPECT_THROW(recovery_pair(wrong, conns[1], p, g, m.wells, m.e0), GeometryError);
}

TEST(Recovery, WellsAwayFromInterfaceAndSmallMismatch) {
  const Material m = normalized(0.05);
  const auto conns = compatibility(m.e0, m.wells);
  const ProfileSpec p = build_profile(m);
  double prev = std::numeric_limits<double>::infinity();
  for (int n : {41, 81, 161}) {
    const Grid g = Grid::make(n, n, 1.0, 1.0);
    const Laminate lam{Vec2::UnitY(), {0.5}, m.wells.mu0, g.bounds()};
    const FieldPair fp = recovery_pair(lam, conns[1], p, g, m.wells, m.e0);
    for (int i = 0; i < g.nx; ++i) {
      EXPECT_EQ(fp.c[g.index(i, 0)], m.wells.mu0);
      EXPECT_EQ(fp.c[g.index(i, g.ny - 1)], m.wells.mu1);
    }
    const double mis = elastic_mismatch(fp, m.e0);
    EXPECT_LT(mis, 0.55 * prev);  // first order in h
    prev = mis;
  }
}

TEST(Recovery, EnergyApproachesSharpValue) {
  const Material m = normalized(0.1);
  const auto conns = compatibility(m.e0, m.wells);
  const double kappa = mm_constant(m.chem, m.wells);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {0.2, 0.1}) {
    const Material me = m.with_epsilon(eps);
    const Grid g = Grid::covering(Rect{-0.5, -0.5, 0.5, 0.5}, eps / 8);
    const Laminate lam{Vec2::UnitY(), {0.0}, me.wells.mu0, g.bounds()};
    const FieldPair fp = recovery_pair(lam, conns[1], build_profile(me), g, me.wells, me.e0);
    const EnergyBreakdown e = energy(fp, me);
    EXPECT_GT(e.total, kappa);
    EXPECT_LT(e.total, prev);
    EXPECT_LE(e.elastic, 0.01 * e.total);
    prev = e.total;
  }
}

TEST(Recovery, MassTuning) {
  const Material m = normalized(0.05);
  const auto conns = compatibility(m.e0, m.wells);
  const ProfileSpec p = build_profile(m);
  const Grid g = Grid::make(81, 81, 1.0, 1.0);
  const Laminate lam{Vec2::UnitY(), {0.5}, m.wells.mu0, g.bounds()};
  for (double target : {0.45, 0.5, 0.52}) {
    const TunedRecovery t = mass_tuned_recovery(lam, conns[1], p, g, m.wells, m.e0, target);
    EXPECT_NEAR(t.mean, target, 1e-12);
    EXPECT_NEAR(field_mean(t.pair.c, g), target, 1e-12);
    EXPECT_GE(t.shift, 0.0);
    EXPECT_LE(t.shift, p.width());
  }
  EXPECT_THROW(mass_tuned_recovery(lam, conns[1], p, g, m.wells, m.e0, 0.9), RangeError);
}

TEST(Recovery, BallConstruction) {
  const Material m = normalized(0.02);
  const ProfileSpec p = build_profile(m);
  const Grid g = Grid::make(101, 101, 1.0, 1.0);
  const double target = m.wells.mu0 + 0.05;
  const BallRecovery b = ball_recovery(p, g, m.wells, m.e0, target, Vec2(0.5, 0.5));
  EXPECT_NEAR(b.tuned.mean, target, 1e-12);
  EXPECT_NEAR(std::numbers::pi * b.eta * b.eta, 0.05 / m.wells.gap(), 1e-14);
  EXPECT_THROW(ball_recovery(p, g, m.wells, m.e0, m.wells.mu0, Vec2(0.5, 0.5)), RangeError);
  EXPECT_THROW(ball_recovery(p, g, m.wells, m.e0, target, Vec2(0.1, 0.5)), GeometryError);
}

TEST(Recovery, ReferenceFieldMatchesPointwise) {
  const Material m = normalized(0.05);
  const auto conns = compatibility(m.e0, m.wells);
  const Grid g = Grid::make(9, 7, 1.0, 1.0, -0.5, -0.5);
  const FieldPair f = reference_field(conns[0], m.wells, m.e0, g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const PointPair p = reference_pair(conns[0], m.wells, m.e0, g.node(i, j));
      EXPECT_EQ(f.c[g.index(i, j)], p.c);
      EXPECT_EQ(f.u.x[g.index(i, j)], p.u.x());
      EXPECT_EQ(f.u.y[g.index(i, j)], p.u.y());
    }
}
