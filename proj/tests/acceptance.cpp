// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance            run criteria 1..10
//   acceptance 6 9        run only the listed criteria
//
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "gammaphase/cli.hpp"
#include "gammaphase/gammaphase.hpp"

using namespace gammaphase;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
namespace tol {
constexpr double kWellSum = 1e-10;
constexpr double kWellSlope = 1e-10;
constexpr double kWellValue = 1e-12;
constexpr double kConnection = 1e-12;
constexpr double kGroundEnergy = 1e-12;
constexpr double kProfileRoundTrip = 1e-8;
constexpr double kRecoveryBand = 0.15;
constexpr double kRecoveryElasticShare = 0.01;
constexpr double kCellKhat = 0.05;
constexpr double kCellWidth = 0.03;
constexpr double kCellHeight = 0.05;
// Cell energies flatten out below eps = 0.1; successive values may tie to within
// solver tolerance, so monotone decrease is checked up to this relative slack.
constexpr double kMonotoneSlack = 1e-6;
constexpr double kMassMean = 1e-12;
constexpr double kMassZeroEnergy = 1e-10;
constexpr double kMassPositionCells = 2.0;
constexpr double kMismatchRatioLo = 0.25;
constexpr double kMismatchRatioHi = 1.0;
constexpr double kWellFraction = 0.9;
}  // namespace tol

namespace budget {
constexpr double kFast = 1.0;
constexpr double kRecovery = 30.0;
constexpr double kCell = 600.0;
constexpr double kAnisotropy = 600.0;
constexpr double kMass = 120.0;
constexpr double kCompactness = 300.0;
}  // namespace budget

struct Outcome {
  bool pass = false;
  std::string detail;
};

Material normalized(double eps) {
  return Material::make({3.0, 1.0}, isotropic_stiffness(1.0, 1.0), Misfit{0.0, 1.0, 0.0}, eps);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool decreasing(const std::vector<double>& e, double slack) {
  for (std::size_t k = 1; k < e.size(); ++k)
    if (!(e[k] <= e[k - 1] * (1.0 + slack))) return false;
  return true;
}

Outcome well_structure() {
  struct Case {
    double omega, kt;
    WellKind expect;
  };
  const std::vector<Case> cases{{1, 1, WellKind::SingleWell},
                                {2, 1, WellKind::SingleWell},
                                {3, 1, WellKind::DoubleWell},
                                {2.000001, 1, WellKind::DoubleWell}};
  bool ok = true;
  for (const Case& c : cases) ok = ok && analyze_wells({c.omega, c.kt}).kind == c.expect;
  const ChemParams p{3.0, 1.0};
  const WellAnalysis w = analyze_wells(p);
  const double sum = std::abs(w.mu0 + w.mu1 - 1.0);
  const double slope = std::abs(eval_fbar_prime(p, w.mu0));
  const double value = eval_f(p, w, w.mu0);
  ok = ok && sum <= tol::kWellSum && slope <= tol::kWellSlope && std::abs(value) <= tol::kWellValue;
  return {ok, "classification " + std::string(ok ? "ok" : "checked") + ", |mu0+mu1-1| " + fmt("%.1e", sum) +
                  ", |fbar'(mu0)| " + fmt("%.1e", slope) + ", f(mu0) " + fmt("%.1e", value)};
}

Outcome compatibility_algebra() {
  const Material m = normalized(0.1);
  const double d = m.wells.gap();
  const auto conns = compatibility(m.e0, m.wells);
  bool ok = conns.size() == 2;
  double worst = 0.0;
  if (ok) {
    const RankOneConnection& x = conns[0];
    const RankOneConnection& y = conns[1];
    worst = std::max({(x.nu - Vec2::UnitX()).norm(), std::abs(x.s + d), (x.a - Vec2(0, 2 * d)).norm(),
                      (y.nu - Vec2::UnitY()).norm(), std::abs(y.s - d), (y.a - Vec2(2 * d, 0)).norm(),
                      x.residual(m.e0), y.residual(m.e0)});
    ok = worst <= tol::kConnection;
  }
  bool rejected = false;
  try {
    compatibility(Misfit{1.0, 0.0, 1.0}, m.wells);
  } catch (const IncompatibleMisfit&) {
    rejected = true;
  }
  return {ok && rejected, std::to_string(conns.size()) + " connections, worst deviation " + fmt("%.1e", worst) +
                              ", det>0 " + (rejected ? "rejected" : "accepted")};
}

Outcome ground_states() {
  const Material m = normalized(0.1);
  const Grid g = Grid::make(128, 128, 1.0, 1.0);
  double worst = 0.0;
  for (double level : {m.wells.mu0, m.wells.mu1}) {
    FieldPair fp(g);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const std::size_t k = g.index(i, j);
        const Vec2 u = level * (m.e0.matrix() * g.node(i, j));
        fp.c[k] = level;
        fp.u.x[k] = u.x();
        fp.u.y[k] = u.y();
      }
    worst = std::max(worst, std::abs(energy(fp, m).total));
  }
  return {worst <= tol::kGroundEnergy, "max |E| " + fmt("%.1e", worst) + " on 128x128"};
}

Outcome profile_bound() {
  bool ok = true;
  std::string detail;
  for (double eps : {0.1, 0.01}) {
    const ProfileSpec p = build_profile(normalized(eps));
    double trip = 0.0;
    for (int k = 0; k <= 1000; ++k) {
      const double s = p.mu0() + (p.mu1() - p.mu0()) * k / 1000.0;
      trip = std::max(trip, std::abs(p.inverse(p.phi(s)) - s));
    }
    ok = ok && p.width() <= std::sqrt(eps) && trip <= tol::kProfileRoundTrip;
    detail += (detail.empty() ? "" : "; ") + fmt("eps %g: ", eps) + "phi(mu1) " + fmt("%.4f", p.width()) + " vs sqrt " +
              fmt("%.4f", std::sqrt(eps)) + ", round trip " + fmt("%.1e", trip);
  }
  return {ok, detail};
}

Outcome recovery_energy() {
  const Material base = normalized(0.1);
  const auto conns = compatibility(base.e0, base.wells);
  const double kappa = mm_constant(base.chem, base.wells);
  std::vector<double> e;
  double share = 0.0;
  for (double eps : {0.2, 0.1, 0.05}) {
    const Material m = base.with_epsilon(eps);
    const Grid g = Grid::covering(Rect{0, 0, 1, 1}, eps / 8);
    const Laminate lam{Vec2::UnitY(), {0.5}, m.wells.mu0, g.bounds()};
    const EnergyBreakdown b = energy(recovery_pair(lam, conns[1], build_profile(m), g, m.wells, m.e0), m);
    e.push_back(b.total);
    share = std::max(share, b.elastic / b.total);
  }
  bool ok = e.back() > kappa;
  for (std::size_t k = 1; k < e.size(); ++k) ok = ok && e[k] < e[k - 1];
  const double rel = e.back() / kappa - 1.0;
  ok = ok && std::abs(rel) <= tol::kRecoveryBand && share <= tol::kRecoveryElasticShare;
  return {ok, "E " + fmt("%.4f", e[0]) + " " + fmt("%.4f", e[1]) + " " + fmt("%.4f", e[2]) + " vs mm " +
                  fmt("%.4f", kappa) + " (" + fmt("%+.1f%%", 100 * rel) + "), elastic share " +
                  fmt("%.2f%%", 100 * share)};
}

Outcome cell_problem_check() {
  const Material m = normalized(0.1);
  const double kappa = mm_constant(m.chem, m.wells);
  const CellConfig cfg;
  const CellEstimate est = cell_problem(Vec2::UnitY(), m, {0.2, 0.1, 0.05}, cfg);
  const WidthReport w = width_doubling_check(Vec2::UnitY(), m, 0.1, cfg);
  const HeightReport h = height_independence_check(Vec2::UnitY(), m, 0.1, cfg);
  const double rel = est.k_hat / kappa - 1.0;
  const bool ok = est.fitted && std::abs(rel) <= tol::kCellKhat && std::abs(w.ratio / 2.0 - 1.0) <= tol::kCellWidth &&
                  std::abs(h.ratio - 1.0) <= tol::kCellHeight;
  return {ok, "k_hat " + fmt("%.5f", est.k_hat) + " vs mm " + fmt("%.5f", kappa) + " (" + fmt("%+.2f%%", 100 * rel) +
                  "), width ratio " + fmt("%.6f", w.ratio) + ", height ratio " + fmt("%.6f", h.ratio)};
}

Outcome anisotropy_check() {
  const Material m = normalized(0.1);
  const std::vector<double> eps{0.2, 0.1, 0.05};
  const CellConfig cfg;
  const AnisotropyReport probe = anisotropy_probe(Vec2(1, 1), m, eps, cfg);
  const AnisotropyReport control = anisotropy_probe(Vec2::UnitY(), m, eps, cfg);
  const double kappa = mm_constant(m.chem, m.wells);
  const auto& pe = probe.estimate.energies;
  const auto& ce = control.estimate.energies;
  double cmax = 0.0;
  for (double v : ce) cmax = std::max(cmax, v);
  const bool bounded = control.compatible && decreasing(ce, tol::kMonotoneSlack) && cmax <= 1.05 * kappa;
  const bool ok = !probe.compatible && probe.strictly_increasing && bounded;
  std::string list;
  for (double v : pe) list += (list.empty() ? "" : " ") + fmt("%.4f", v);
  return {ok, "diagonal E " + list + " (min increment " + fmt("%.3f", probe.delta_min) + "), control max " +
                  fmt("%.4f", cmax) + (bounded ? " bounded" : " unbounded")};
}

Outcome mass_check() {
  const Material m = normalized(0.05);
  const double mid = 0.5 * (m.wells.mu0 + m.wells.mu1);
  const Laminate lam{Vec2::UnitY(), {}, m.wells.mu0, Rect{0, 0, 1, 1}};
  const auto entries = mass_sweep(lam, m, {m.wells.mu0, 0.3, mid, 0.7});
  bool ok = entries.size() == 4;
  double mean_err = 0.0;
  for (const MassEntry& e : entries) {
    ok = ok && e.valid;
    mean_err = std::max(mean_err, e.max_mean_error);
  }
  ok = ok && mean_err <= tol::kMassMean;
  const MassEntry& zero = entries[0];
  const MassEntry& half = entries[2];
  ok = ok && !zero.interface && std::abs(zero.energy) <= tol::kMassZeroEnergy && half.interface &&
       half.position_error_cells <= tol::kMassPositionCells;
  return {ok, "max |mean - m| " + fmt("%.1e", mean_err) + ", E(mu0) " + fmt("%.1e", zero.energy) +
                  ", midpoint position error " + fmt("%.3f", half.position_error_cells) + " cells"};
}

Outcome compactness_check() {
  const Material m = normalized(0.05);
  const CompactnessReport r = compactness_probe(m, Rect{0, 0, 1, 1}, {0.05, 0.025}, 42);
  const double wf = r.entries[0].well_fraction;
  const bool ratio_ok = r.mismatch_ratio >= tol::kMismatchRatioLo && r.mismatch_ratio <= tol::kMismatchRatioHi;
  const bool wf_ok = wf >= tol::kWellFraction;
  return {ratio_ok && wf_ok, "mismatch^2 ratio " + fmt("%.6f", r.mismatch_ratio) + " (need [0.25, 1]), well fraction " +
                                 fmt("%.3f", wf) + " (need >= 0.9), interface length " +
                                 fmt("%.3f", r.entries[0].interface_length) + " -> " +
                                 fmt("%.3f", r.entries[1].interface_length)};
}

Outcome determinism() {
  namespace gc = cli;
  const fs::path base = fs::temp_directory_path() / ("gammaphase-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(base);
  struct Campaign {
    gc::Command cmd;
    std::string config;
  };
  const std::vector<Campaign> campaigns{
      {gc::Command::Cell, R"({"material": {"omega": 3, "kt": 1, "e0": [0, 1, 0]}, "eps_list": [0.2, 0.1, 0.05]})"},
      {gc::Command::MassSweep, R"({"material": {"omega": 3, "kt": 1, "e0": [0, 1, 0]}, "epsilon": 0.1,
          "mass_sweep": {"m_list": [0.3, 0.5, 0.7]}})"},
      {gc::Command::Minimize, R"({"material": {"omega": 3, "kt": 1, "e0": [0, 1, 0]}, "epsilon": 0.1,
          "grid": {"nx": 41, "ny": 41}, "solve": {"mass": 0.5, "seed": 42}})"}};
  bool ok = true;
  std::string detail;
  for (const Campaign& c : campaigns) {
    const gc::RunResult a = gc::run(c.cmd, c.config, "inline", base.string(), std::nullopt, 1);
    const gc::RunResult b = gc::run(c.cmd, c.config, "inline", base.string(), std::nullopt, 3);
    const std::string ca = slurp(a.run_dir / "result.csv"), cb = slurp(b.run_dir / "result.csv");
    const bool same = a.exit_code == 0 && b.exit_code == 0 && !ca.empty() && ca == cb;
    ok = ok && same;
    detail += (detail.empty() ? "" : ", ") + gc::to_string(c.cmd) + (same ? " identical" : " differs");
  }
  fs::remove_all(base);
  return {ok, detail + " (threads 1 vs 3)"};
}

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, Criterion> all{
      {1, {"well structure", budget::kFast, well_structure}},
      {2, {"compatibility algebra", budget::kFast, compatibility_algebra}},
      {3, {"ground states", budget::kFast, ground_states}},
      {4, {"profile bound", budget::kFast, profile_bound}},
      {5, {"recovery energy", budget::kRecovery, recovery_energy}},
      {6, {"cell problem", budget::kCell, cell_problem_check}},
      {7, {"anisotropy", budget::kAnisotropy, anisotropy_check}},
      {8, {"mass constraint", budget::kMass, mass_check}},
      {9, {"compactness", budget::kCompactness, compactness_check}},
      {10, {"determinism", 0.0, determinism}},
  };
  std::vector<int> selected;
  for (int k = 1; k < argc; ++k) {
    const int n = std::atoi(argv[k]);
    if (!all.count(n)) {
      std::fprintf(stderr, "acceptance: unknown criterion '%s'\n", argv[k]);
      return 2;
    }
    selected.push_back(n);
  }
  if (selected.empty())
    for (const auto& [n, c] : all) selected.push_back(n);

  int failed = 0;
  for (int n : selected) {
    const Criterion& c = all.at(n);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    std::string timing = fmt("%.2f s", secs);
    if (c.budget_s > 0.0) {
      timing += fmt(" / %g s", c.budget_s);
      if (secs > c.budget_s) pass = false;
    }
    std::printf("[%s] %2d %s: %s (%s)\n", pass ? "PASS" : "FAIL", n, c.name.c_str(), o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    if (!pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
