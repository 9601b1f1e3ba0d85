#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gammaphase/construct.hpp"
#include "gammaphase/solver.hpp"
#include "gammaphase/spectral.hpp"

using namespace gammaphase;

namespace {

Material normalized(double eps) {
  return Material::make({3.0, 1.0}, isotropic_stiffness(1.0, 1.0), Misfit{0.0, 1.0, 0.0}, eps);
}

// (shift + ax Lx + ay Ly) x with the five-point Laplacian; Neumann sides reflect,
// Dirichlet sides hold zero and are skipped.
std::vector<double> apply_shifted_laplacian(const Grid& g, const std::vector<double>& x, double shift, double ax,
                                            double ay, SpectralBC bx, SpectralBC by) {
  std::vector<double> y(x.size(), 0.0);
  const auto val = [&](int i, int j, int di, int dj) {
    int ii = i + di, jj = j + dj;
    if (ii < 0 || ii >= g.nx) {
      if (bx == SpectralBC::Dirichlet) return 0.0;
      ii = i - di;
    }
    if (jj < 0 || jj >= g.ny) {
      if (by == SpectralBC::Dirichlet) return 0.0;
      jj = j - dj;
    }
    if (bx == SpectralBC::Dirichlet && (ii == 0 || ii == g.nx - 1)) return 0.0;
    if (by == SpectralBC::Dirichlet && (jj == 0 || jj == g.ny - 1)) return 0.0;
    return x[g.index(ii, jj)];
  };
  const double hx2 = g.hx() * g.hx(), hy2 = g.hy() * g.hy();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (bx == SpectralBC::Dirichlet && (i == 0 || i == g.nx - 1)) continue;
      if (by == SpectralBC::Dirichlet && (j == 0 || j == g.ny - 1)) continue;
      const double c = x[g.index(i, j)];
      y[g.index(i, j)] = shift * c + ax * (2 * c - val(i, j, -1, 0) - val(i, j, 1, 0)) / hx2 +
                         ay * (2 * c - val(i, j, 0, -1) - val(i, j, 0, 1)) / hy2;
    }
  return y;
}

FieldPair ground_state(const Grid& g, const Material& m, double level) {
  FieldPair fp(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.index(i, j);
      const Vec2 u = level * (m.e0.matrix() * g.node(i, j));
      fp.c[k] = level;
      fp.u.x[k] = u.x();
      fp.u.y[k] = u.y();
    }
  return fp;
}

}  // namespace

TEST(Spectral, InvertsShiftedLaplacianForEveryBoundaryMix) {
  const Grid g = Grid::make(17, 12, 1.3, 0.7);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (SpectralBC bx : {SpectralBC::Neumann, SpectralBC::Dirichlet})
    for (SpectralBC by : {SpectralBC::Neumann, SpectralBC::Dirichlet}) {
      SpectralSolver s(g, bx, by);
      std::vector<double> r(g.nodes()), x(g.nodes());
      for (double& v : r) v = u(rng);
      s.solve(r.data(), x.data(), 0.7, 0.3, 1.9);
      const auto back = apply_shifted_laplacian(g, x, 0.7, 0.3, 1.9, bx, by);
      for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
          const bool edge = (bx == SpectralBC::Dirichlet && (i == 0 || i == g.nx - 1)) ||
                            (by == SpectralBC::Dirichlet && (j == 0 || j == g.ny - 1));
          const std::size_t k = g.index(i, j);
          if (edge) {
            ASSERT_EQ(x[k], 0.0);
          } else {
            ASSERT_NEAR(back[k], r[k], 1e-10) << int(bx) << int(by) << " " << i << "," << j;
          }
        }
    }
}

TEST(Spectral, PureNeumannDropsTheConstantMode) {
  const Grid g = Grid::make(9, 9, 1.0, 1.0);
  SpectralSolver s(g, SpectralBC::Neumann);
  std::vector<double> r(g.nodes(), 1.0), x(g.nodes());
  s.solve(r.data(), x.data(), 0.0, 1.0, 1.0);
  for (double v : x) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Elastic, UniformPhaseGivesStressFreeAffineField) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(33, 25, 1.0, 0.75);
  const FieldPair gs = ground_state(g, m, m.wells.mu1);
  FieldPair fp = gs;
  fp.u = elastic_solve(fp.c, m, g);
  EXPECT_LE(elastic_objective(fp, m), 1e-14);
  // The skew-normalised solution matches the skew-normalised reference.
  const VectorField ref = skew_normalize(gs.u, g);
  for (std::size_t k = 0; k < g.nodes(); ++k) {
    EXPECT_NEAR(fp.u.x[k], ref.x[k], 1e-8);
    EXPECT_NEAR(fp.u.y[k], ref.y[k], 1e-8);
  }
}

TEST(Elastic, SolutionIsStationary) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(21, 21, 1.0, 1.0);
  FieldPair fp(g);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : fp.c) v = u(rng);
  fp.u = elastic_solve(fp.c, m, g, 1e-12, 5000);
  const double e0 = elastic_objective(fp, m);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    VectorField v(g.nodes());
    for (std::size_t k = 0; k < g.nodes(); ++k) {
      v.x[k] = n(rng);
      v.y[k] = n(rng);
    }
    const double d = 1e-4;
    FieldPair plus = fp, minus = fp;
    for (std::size_t k = 0; k < g.nodes(); ++k) {
      plus.u.x[k] += d * v.x[k];
      plus.u.y[k] += d * v.y[k];
      minus.u.x[k] -= d * v.x[k];
      minus.u.y[k] -= d * v.y[k];
    }
    const double ep = elastic_objective(plus, m), em = elastic_objective(minus, m);
    EXPECT_GT(ep, e0);
    EXPECT_GT(em, e0);
    // First variation vanishes: the odd part is far below the even part.
    EXPECT_LT(std::abs(ep - em), 1e-4 * (ep + em - 2 * e0));
  }
}

TEST(Elastic, PinnedAffineDataIsReproduced) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(19, 23, 1.0, 1.2, -0.5, -0.6);
  const FieldPair gs = ground_state(g, m, 0.4);
  for (Boundary bc : {Boundary::Pinned, Boundary::PinnedEnds}) {
    const ElasticSystem sys(g, m, bc);
    VectorField start = gs.u;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (!is_pinned_node(bc, g, i, j)) start.x[g.index(i, j)] = start.y[g.index(i, j)] = 0.0;
    const ElasticResult r = sys.solve(gs.c, start, 1e-12, 5000);
    for (std::size_t k = 0; k < g.nodes(); ++k) {
      EXPECT_NEAR(r.u.x[k], gs.u.x[k], 1e-9);
      EXPECT_NEAR(r.u.y[k], gs.u.y[k], 1e-9);
    }
  }
}

TEST(Elastic, WarmStartNeedsNoIterations) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(41, 41, 1.0, 1.0);
  FieldPair fp(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) fp.c[g.index(i, j)] = g.y(j) > 0.5 ? m.wells.mu1 : m.wells.mu0;
  const ElasticSystem sys(g, m, Boundary::Free);
  const ElasticResult first = sys.solve(fp.c, VectorField(g.nodes()), 1e-8, 5000);
  EXPECT_GT(first.iterations, 0);
  EXPECT_LE(first.residual, 1e-8);
  EXPECT_EQ(sys.solve(fp.c, first.u, 1e-8, 5000).iterations, 0);
}

TEST(Elastic, IterationCapThrows) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(41, 41, 1.0, 1.0);
  FieldPair fp(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) fp.c[g.index(i, j)] = (i / 5 + j / 7) % 2 ? 0.9 : 0.1;
  EXPECT_THROW(elastic_solve(fp.c, m, g, 1e-12, 1), NonConvergence);
}

TEST(ProjectMass, ExactMeanAndBox) {
  const Grid g = Grid::make(30, 20, 1.5, 1.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.3, 1.3);
  for (double target : {0.0, 0.07, 0.5, 0.93, 1.0}) {
    ScalarField c(g.nodes());
    for (double& v : c) v = u(rng);
    const ScalarField y = c;
    project_mass(c, g, target);
    EXPECT_NEAR(field_mean(c, g), target, 1e-12);
    double shift = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < c.size(); ++k) {
      ASSERT_GE(c[k], 0.0);
      ASSERT_LE(c[k], 1.0);
      // KKT: interior entries all moved by the same amount.
      if (c[k] > 0.0 && c[k] < 1.0) {
        if (std::isnan(shift)) shift = c[k] - y[k];
        ASSERT_NEAR(c[k] - y[k], shift, 1e-12);
      }
    }
  }
}

TEST(ProjectMass, RespectsMaskAndRange) {
  const Grid g = Grid::make(10, 10, 1.0, 1.0);
  ScalarField c(g.nodes(), 0.5);
  std::vector<char> free(g.nodes(), 1);
  for (int i = 0; i < g.nx; ++i) {
    free[g.index(i, 0)] = 0;
    c[g.index(i, 0)] = 0.0;
  }
  project_mass(c, g, 0.6, free);
  EXPECT_NEAR(field_mean(c, g), 0.6, 1e-12);
  for (int i = 0; i < g.nx; ++i) EXPECT_EQ(c[g.index(i, 0)], 0.0);
  EXPECT_THROW(project_mass(c, g, 0.999, free), RangeError);
}

TEST(PhaseStep, DecreasesEnergyAndStopsAtGroundState) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(33, 33, 1.0, 1.0);
  FieldPair fp = random_init(g, m, 9);
  const double before = energy(fp, m).total;
  const PhaseStepResult r = phase_step(fp, m, 1.0);
  EXPECT_GT(r.step, 0.0);
  EXPECT_LT(r.energy, before);
  EXPECT_NEAR(r.energy, energy(fp, m).total, 1e-12);

  FieldPair gs = ground_state(g, m, m.wells.mu0);
  const PhaseStepResult z = phase_step(gs, m, 1.0);
  EXPECT_EQ(z.step, 0.0);
  EXPECT_THROW(phase_step(gs, m, 0.0), ParameterError);
}

TEST(PhaseStep, PinnedNodesDoNotMove) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(25, 25, 1.0, 1.0);
  for (Boundary bc : {Boundary::Pinned, Boundary::PinnedEnds}) {
    FieldPair fp = random_init(g, m, 4);
    const FieldPair before = fp;
    phase_step(fp, m, 1.0, std::nullopt, bc);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (is_pinned_node(bc, g, i, j)) ASSERT_EQ(fp.c[g.index(i, j)], before.c[g.index(i, j)]);
  }
}

TEST(Minimize, MonotoneTraceAndConvergence) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(41, 41, 1.0, 1.0);
  SolveConfig cfg;
  cfg.max_outer = 400;
  const SolveReport r = minimize(random_init(g, m, 42), m, cfg);
  ASSERT_GE(r.energy_trace.size(), 2u);
  for (std::size_t k = 1; k < r.energy_trace.size(); ++k) EXPECT_LE(r.energy_trace[k], r.energy_trace[k - 1]);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.breakdown.total, r.energy_trace.back(), 1e-12);
  EXPECT_EQ(r.mean_trace.size(), r.energy_trace.size());
}

TEST(Minimize, MassConstraintHoldsAtEveryIterate) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(41, 41, 1.0, 1.0);
  SolveConfig cfg;
  cfg.max_outer = 200;
  cfg.mass = 0.4;
  const SolveReport r = minimize(random_init(g, m, 7), m, cfg);
  for (double mean : r.mean_trace) EXPECT_NEAR(mean, 0.4, 1e-12);
}

TEST(Minimize, Deterministic) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(33, 33, 1.0, 1.0);
  SolveConfig cfg;
  cfg.max_outer = 50;
  const SolveReport a = minimize(random_init(g, m, 42), m, cfg);
  const SolveReport b = minimize(random_init(g, m, 42), m, cfg);
  EXPECT_EQ(a.energy_trace, b.energy_trace);
  EXPECT_EQ(a.final.c, b.final.c);
  const SolveReport c = minimize(random_init(g, m, 43), m, cfg);
  EXPECT_NE(a.final.c, c.final.c);
}

TEST(Minimize, GroundStateIsFixedPoint) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(33, 33, 1.0, 1.0);
  const SolveReport r = minimize(ground_state(g, m, m.wells.mu1), m, SolveConfig{});
  EXPECT_EQ(r.iterations, 0);
  EXPECT_LE(r.breakdown.total, 1e-12);
}

TEST(Minimize, NonConvergenceCarriesPartialState) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(33, 33, 1.0, 1.0);
  SolveConfig cfg;
  cfg.cg_max = 1;
  cfg.cg_tol = 1e-14;
  FieldPair init(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) init.c[g.index(i, j)] = (i / 4 + j / 5) % 2 ? 0.9 : 0.1;
  try {
    minimize(init, m, cfg);
    FAIL() << "expected NonConvergence";
  } catch (const MinimizeNonConvergence& e) {
    EXPECT_EQ(e.partial().final.c.size(), g.nodes());
  }
}

TEST(SolveConfig, ValidationListsEveryProblem) {
  SolveConfig cfg;
  cfg.tol_rel = 0.0;
  cfg.cg_max = 0;
  cfg.mass = 1.5;
  try {
    cfg.validate();
    FAIL();
  } catch (const ValidationError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("tol_rel"), std::string::npos);
    EXPECT_NE(w.find("cg_max"), std::string::npos);
    EXPECT_NE(w.find("mass"), std::string::npos);
  }
}

TEST(RandomInit, SeededAndInsideWells) {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(17, 17, 1.0, 1.0);
  const FieldPair a = random_init(g, m, 1), b = random_init(g, m, 1);
  EXPECT_EQ(a.c, b.c);
  for (double v : a.c) {
    EXPECT_GE(v, m.wells.mu0);
    EXPECT_LE(v, m.wells.mu1);
  }
}
