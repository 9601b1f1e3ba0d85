// experiment.hpp
// Verification campaigns: cell-problem estimates of K(ν), height and width checks,
// incompatible-normal probes, mass-constrained sweeps and the compactness echo.
//
// Cell problems run in a frame rotated so that the probed normal becomes e_y: the box is
// (-w/2, w/2) × (-l/2, l/2), the misfit and stiffness are rotated with it, and the
// connection is the least-squares one for e_y (exact when ν is compatible). The
// recovery pair initialises the solve; reference_pair values are imposed on the pinned
// nodes.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gammaphase/construct.hpp"
#include "gammaphase/errors.hpp"
#include "gammaphase/field.hpp"
#include "gammaphase/grid.hpp"
#include "gammaphase/solver.hpp"
#include "gammaphase/tensor.hpp"
#include "gammaphase/wellmodel.hpp"

namespace gammaphase {

/// Runs fn(0), ..., fn(n-1) on up to `threads` workers; results are stored by index so
/// the outcome does not depend on scheduling.
template <typename T>
std::vector<T> parallel_map(std::size_t n, int threads, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(n);
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) out[k] = fn(k);
    return out;
  }
  std::vector<std::future<void>> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t k = w; k < n; k += workers) out[k] = fn(k);
    }));
  std::exception_ptr first;
  for (auto& f : pool) {
    try {
      f.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
  return out;
}

inline void validate_eps_list(const std::vector<double>& eps) {
  if (eps.empty()) throw ValidationError("eps_list must not be empty");
  for (std::size_t k = 0; k < eps.size(); ++k) {
    if (!(eps[k] > 0.0) || !std::isfinite(eps[k])) throw ValidationError("eps_list entries must be positive");
    if (k > 0 && !(eps[k] < eps[k - 1])) throw ValidationError("eps_list must be strictly decreasing");
  }
}

// ---------------------------------------------------------------------------
// Cell problem

struct CellConfig {
  double width = 1.0;
  double height = 1.0;
  /// h = eps / h_ratio.
  double h_ratio = 8.0;
  Boundary boundary = Boundary::PinnedEnds;
  SolveConfig solve;
  int threads = 1;

  void validate() const {
    std::string err;
    if (!(width > 0.0)) err += "width must be positive; ";
    if (!(height > 0.0)) err += "height must be positive; ";
    if (!(h_ratio > 0.0)) err += "h_ratio must be positive; ";
    if (boundary == Boundary::Free) err += "cell boundary must pin data; ";
    if (!err.empty()) throw ValidationError("cell config: " + err.substr(0, err.size() - 2));
    solve.validate();
  }
};

/// Material and connection seen in the frame where ν is e_y.
struct CellFrame {
  Vec2 nu;
  Mat2 q;  // columns: tangent, ν
  Material material;
  RankOneConnection connection;
  /// Frobenius residual of the connection; zero for compatible ν.
  double residual = 0.0;
};

inline CellFrame cell_frame(const Vec2& nu, const Material& m) {
  if (!(nu.norm() > 0.0)) throw ParameterError("cell problem: zero normal");
  CellFrame f;
  f.nu = nu.normalized();
  f.q.col(0) = Vec2(f.nu.y(), -f.nu.x());
  f.q.col(1) = f.nu;
  const Mat2 e0 = f.q.transpose() * m.e0.matrix() * f.q;
  const Misfit e0r{e0(0, 0), 0.5 * (e0(0, 1) + e0(1, 0)), e0(1, 1)};
  f.material = Material::make(m.chem, transformed_stiffness(m.stiffness, f.q), e0r, m.epsilon);
  f.connection = best_connection(e0r, f.material.wells, Vec2::UnitY());
  f.residual = f.connection.residual(e0r);
  return f;
}

struct CellRun {
  double eps = 0.0;
  double energy = std::numeric_limits<double>::quiet_NaN();
  EnergyBreakdown breakdown;
  int iterations = 0;
  int cg_iterations = 0;
  bool converged = false;
  bool valid = false;
  std::string error;
  std::optional<FieldPair> field;
};

/// Initial state for one cell solve: recovery pair with reference data on pinned nodes.
inline FieldPair cell_initial(const CellFrame& f, double eps, const CellConfig& cfg) {
  const Material m = f.material.with_epsilon(eps);
  const ProfileSpec spec = build_profile(m);
  const Rect box{-0.5 * cfg.width, -0.5 * cfg.height, 0.5 * cfg.width, 0.5 * cfg.height};
  const Grid g = Grid::covering(box, eps / cfg.h_ratio);
  const Laminate lam{Vec2::UnitY(), {-spec.centroid()}, m.wells.mu0, box};
  FieldPair fp = recovery_pair(lam, f.connection, spec, g, m.wells, m.e0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!is_pinned_node(cfg.boundary, g, i, j)) continue;
      const PointPair p = reference_pair(f.connection, m.wells, m.e0, g.node(i, j));
      const std::size_t k = g.index(i, j);
      fp.c[k] = p.c;
      fp.u.x[k] = p.u.x();
      fp.u.y[k] = p.u.y();
    }
  return fp;
}

/// One minimised cell energy. Solver failures are recorded, not thrown.
inline CellRun cell_run(const CellFrame& f, double eps, const CellConfig& cfg, bool keep_field = false) {
  CellRun run;
  run.eps = eps;
  SolveConfig sc = cfg.solve;
  sc.boundary = cfg.boundary;
  sc.mass.reset();
  try {
    const SolveReport rep = minimize(cell_initial(f, eps, cfg), f.material.with_epsilon(eps), sc);
    run.energy = rep.breakdown.total;
    run.breakdown = rep.breakdown;
    run.iterations = rep.iterations;
    run.cg_iterations = rep.cg_iterations;
    run.converged = rep.converged;
    run.valid = std::isfinite(run.energy);
    if (keep_field) run.field = rep.final;
  } catch (const NonConvergence& e) {
    run.error = e.what();
  }
  return run;
}

struct CellEstimate {
  Vec2 nu = Vec2::UnitY();
  std::vector<double> eps_list;
  std::vector<double> energies;
  std::vector<CellRun> runs;
  double width = 1.0;
  double connection_residual = 0.0;
  /// Fit E(eps) = K + c1 sqrt(eps) over the valid runs; k_hat = K / width.
  double k_hat = std::numeric_limits<double>::quiet_NaN();
  double c1 = std::numeric_limits<double>::quiet_NaN();
  /// Largest |E - (K + c1 sqrt(eps))| over the fitted points, per unit width.
  double fit_residual = std::numeric_limits<double>::quiet_NaN();
  bool fitted = false;
};

/// Least-squares line y = k + c x.
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sx += x[k];
    sy += y[k];
    sxx += x[k] * x[k];
    sxy += x[k] * y[k];
  }
  const double det = n * sxx - sx * sx;
  if (!(std::abs(det) > 0.0)) throw ParameterError("fit: degenerate abscissae");
  const double c = (n * sxy - sx * sy) / det;
  return {(sy - c * sx) / n, c};
}

inline CellEstimate cell_problem(const Vec2& nu, const Material& m, const std::vector<double>& eps_list,
                                 const CellConfig& cfg = {}) {
  validate_eps_list(eps_list);
  cfg.validate();
  const CellFrame f = cell_frame(nu, m);
  CellEstimate est;
  est.nu = f.nu;
  est.eps_list = eps_list;
  est.width = cfg.width;
  est.connection_residual = f.residual;
  est.runs = parallel_map<CellRun>(eps_list.size(), cfg.threads,
                                   [&](std::size_t k) { return cell_run(f, eps_list[k], cfg); });
  std::vector<double> xs, ys;
  for (const CellRun& r : est.runs) {
    est.energies.push_back(r.energy);
    if (r.valid) {
      xs.push_back(std::sqrt(r.eps));
      ys.push_back(r.energy);
    }
  }
  if (xs.size() >= 3) {
    const auto [k, c] = fit_line(xs, ys);
    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) worst = std::max(worst, std::abs(ys[i] - (k + c * xs[i])));
    est.k_hat = k / cfg.width;
    est.c1 = c;
    est.fit_residual = worst / cfg.width;
    est.fitted = true;
  }
  return est;
}

struct WidthReport {
  double energy_unit = 0.0;
  double energy_double = 0.0;
  double ratio = 0.0;
};

/// Cell energies on width w and 2w at one eps; ratio = E(2w) / E(w).
inline WidthReport width_doubling_check(const Vec2& nu, const Material& m, double eps, const CellConfig& cfg = {}) {
  cfg.validate();
  const CellFrame f = cell_frame(nu, m);
  CellConfig wide = cfg;
  wide.width = 2.0 * cfg.width;
  const CellRun a = cell_run(f, eps, cfg), b = cell_run(f, eps, wide);
  if (!a.valid) throw NonConvergence("width check: " + a.error, std::numeric_limits<double>::quiet_NaN(), 0);
  if (!b.valid) throw NonConvergence("width check: " + b.error, std::numeric_limits<double>::quiet_NaN(), 0);
  return {a.energy, b.energy, b.energy / a.energy};
}

struct HeightReport {
  double energy_full = 0.0;
  double energy_reduced = 0.0;
  /// energy_reduced / energy_full.
  double ratio = 0.0;
  /// Share of the full-height energy in |y| > band.
  double far_band_fraction = 0.0;
  double band = 0.0;
  CellRun full;
  CellRun reduced;
};

/// Cell energies on heights l and reduced_height (same width and eps), plus the share
/// of the full-height energy carried by |y| > band (band defaults to l/4).
inline HeightReport height_independence_check(const Vec2& nu, const Material& m, double eps,
                                              const CellConfig& cfg = {}, std::optional<double> reduced_height = {},
                                              std::optional<double> band = {}) {
  cfg.validate();
  const CellFrame f = cell_frame(nu, m);
  CellConfig low = cfg;
  low.height = reduced_height.value_or(0.5 * cfg.height);
  if (!(low.height > 0.0)) throw ValidationError("height check: reduced height must be positive");
  const CellRun a = cell_run(f, eps, cfg, true);
  const CellRun b = cell_run(f, eps, low);
  if (!a.valid) throw NonConvergence("height check: " + a.error, std::numeric_limits<double>::quiet_NaN(), 0);
  if (!b.valid) throw NonConvergence("height check: " + b.error, std::numeric_limits<double>::quiet_NaN(), 0);
  HeightReport rep;
  rep.energy_full = a.energy;
  rep.energy_reduced = b.energy;
  rep.ratio = b.energy / a.energy;
  rep.band = band.value_or(0.25 * cfg.height);
  const EnergyBreakdown full = energy(*a.field, f.material.with_epsilon(eps), true);
  const double outer = restricted_energy(full.density, a.field->grid,
                                         [&](const Vec2& z) { return std::abs(z.y()) > rep.band; });
  rep.far_band_fraction = outer / full.total;
  rep.full = a;
  rep.full.field.reset();
  rep.reduced = b;
  return rep;
}

// ---------------------------------------------------------------------------
// Incompatible normals

struct AnisotropyReport {
  CellEstimate estimate;
  bool compatible = false;
  /// min_k E(eps_{k+1}) / E(eps_k) - 1 over consecutive valid runs.
  double delta_min = std::numeric_limits<double>::quiet_NaN();
  bool strictly_increasing = false;
};

inline AnisotropyReport anisotropy_probe(const Vec2& nu, const Material& m, const std::vector<double>& eps_list,
                                         const CellConfig& cfg = {}) {
  AnisotropyReport rep;
  rep.estimate = cell_problem(nu, m, eps_list, cfg);
  rep.compatible = rep.estimate.connection_residual <= 1e-10;
  double dmin = std::numeric_limits<double>::infinity();
  int pairs = 0;
  const auto& runs = rep.estimate.runs;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    if (!runs[k].valid || !runs[k - 1].valid) continue;
    dmin = std::min(dmin, runs[k].energy / runs[k - 1].energy - 1.0);
    ++pairs;
  }
  if (pairs > 0) rep.delta_min = dmin;
  rep.strictly_increasing = pairs >= 2 && pairs + 1 == static_cast<int>(runs.size()) && dmin > 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Mass constraint

struct MassEntry {
  double m = 0.0;
  double energy = std::numeric_limits<double>::quiet_NaN();
  /// max |mean(c) - m| over every reported iterate.
  double max_mean_error = std::numeric_limits<double>::quiet_NaN();
  /// Sharp energy of the single interface placed by volume fraction (zero without one).
  double sharp_energy = 0.0;
  double predicted_position = std::numeric_limits<double>::quiet_NaN();
  double measured_position = std::numeric_limits<double>::quiet_NaN();
  double position_error_cells = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool interface = false;
  bool valid = false;
  std::string error;
};

/// Mean level-set crossing along the normal: for each grid line parallel to ν, the
/// first crossing of c = (mu0 + mu1)/2 by linear interpolation, averaged. NaN if none.
inline double interface_position(const FieldPair& fp, const WellAnalysis& w) {
  const Grid& g = fp.grid;
  const double level = 0.5 * (w.mu0 + w.mu1);
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j + 1 < g.ny; ++j) {
      const double a = fp.c[g.index(i, j)] - level, b = fp.c[g.index(i, j + 1)] - level;
      if (a == 0.0 || (a < 0.0) != (b < 0.0)) {
        const double t = a == 0.0 ? 0.0 : a / (a - b);
        sum += g.y(j) + t * g.hy();
        ++count;
        break;
      }
    }
  return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

/// Constrained minimisation (free boundary) for each target mean. `lam` fixes the
/// domain, normal (e_y) and the phase below the interface; the interface is placed by
/// volume fraction and tuned by the profile shift. Targets the recovery family cannot
/// reach start from the uniform state c = m, u = m e0 z.
inline std::vector<MassEntry> mass_sweep(const Laminate& lam, const Material& m, const std::vector<double>& m_list,
                                         const CellConfig& cfg = {}) {
  if (std::abs(lam.normal.normalized().y() - 1.0) > 1e-12) throw GeometryError("mass sweep: laminate normal must be e_y");
  if (m_list.empty()) throw ValidationError("m_list must not be empty");
  const auto conns = compatibility(m.e0, m.wells);
  const RankOneConnection* conn = nullptr;
  for (const auto& c : conns)
    if (std::abs(c.nu.y() - 1.0) <= 1e-10) conn = &c;
  if (conn == nullptr) throw GeometryError("mass sweep: e_y is not a compatible normal");
  const ProfileSpec spec = build_profile(m);
  const Grid g = Grid::covering(lam.domain, m.epsilon / cfg.h_ratio);
  const double kappa = mm_constant(m.chem, m.wells);
  const bool low_first = std::abs(lam.phase0 - m.wells.mu0) <= 1e-12;

  return parallel_map<MassEntry>(m_list.size(), cfg.threads, [&](std::size_t idx) {
    MassEntry e;
    e.m = m_list[idx];
    try {
      if (!(e.m >= 0.0 && e.m <= 1.0)) throw RangeError("mass must lie in [0, 1]");
      const double frac_high = (e.m - m.wells.mu0) / m.wells.gap();
      const Rect& d = lam.domain;
      e.interface = frac_high > 1e-9 && frac_high < 1.0 - 1e-9;
      FieldPair init(g);
      if (e.interface) {
        e.predicted_position = low_first ? d.y1 - frac_high * d.height() : d.y0 + frac_high * d.height();
        e.sharp_energy = kappa * d.width();
        Laminate placed = lam;
        placed.offsets = {e.predicted_position};
        try {
          init = mass_tuned_recovery(placed, *conn, spec, g, m.wells, m.e0, e.m).pair;
        } catch (const RangeError&) {
          e.interface = false;
        }
      }
      if (!e.interface) {
        const double level = std::clamp(e.m, 0.0, 1.0);
        for (int j = 0; j < g.ny; ++j)
          for (int i = 0; i < g.nx; ++i) {
            const std::size_t k = g.index(i, j);
            const Vec2 u = level * (m.e0.matrix() * g.node(i, j));
            init.c[k] = level;
            init.u.x[k] = u.x();
            init.u.y[k] = u.y();
          }
      }
      SolveConfig sc = cfg.solve;
      sc.boundary = Boundary::Free;
      sc.mass = e.m;
      const SolveReport rep = minimize(init, m, sc);
      e.energy = rep.breakdown.total;
      e.iterations = rep.iterations;
      e.max_mean_error = 0.0;
      for (double mean : rep.mean_trace) e.max_mean_error = std::max(e.max_mean_error, std::abs(mean - e.m));
      if (e.interface) {
        e.measured_position = interface_position(rep.final, m.wells);
        e.position_error_cells = std::abs(e.measured_position - e.predicted_position) / g.hy();
      }
      e.valid = true;
    } catch (const RangeError& err) {
      e.error = err.what();
    } catch (const GeometryError& err) {
      e.error = err.what();
    } catch (const NonConvergence& err) {
      e.error = err.what();
    }
    return e;
  });
}

struct SmallMassEntry {
  double eps = 0.0;
  double m = 0.0;
  double eta = 0.0;
  double energy = 0.0;
};

/// Ball constructions for masses m_k = mu0 + excess_k on a square, evaluated (not
/// minimised) at eps_k. Energies fall when excess_k = o(eps_k); with excess_k ~ eps_k the
/// inclusion's elastic term (area / eps) stays of order one.
inline std::vector<SmallMassEntry> small_mass_trend(const Material& m, const Rect& domain,
                                                    const std::vector<double>& eps_list,
                                                    const std::vector<double>& excess, double h_ratio = 8.0) {
  validate_eps_list(eps_list);
  if (excess.size() != eps_list.size()) throw ValidationError("small mass: one excess per eps");
  std::vector<SmallMassEntry> out;
  for (std::size_t k = 0; k < eps_list.size(); ++k) {
    const Material mk = m.with_epsilon(eps_list[k]);
    const ProfileSpec spec = build_profile(mk);
    const Grid g = Grid::covering(domain, eps_list[k] / h_ratio);
    const BallRecovery b = ball_recovery(spec, g, mk.wells, mk.e0, mk.wells.mu0 + excess[k], domain.center());
    FieldPair fp = b.tuned.pair;
    fp.u = elastic_solve(fp.c, mk, g);
    out.push_back({eps_list[k], mk.wells.mu0 + excess[k], b.eta, energy(fp, mk).total});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compactness

struct CompactnessEntry {
  double eps = 0.0;
  double mismatch_sq = 0.0;
  double well_fraction = 0.0;
  /// Total variation of the indicator c > (mu0 + mu1)/2: interface length proxy.
  double interface_length = 0.0;
  double energy = 0.0;
  double mean = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct CompactnessReport {
  std::vector<CompactnessEntry> entries;
  double mismatch_ratio = std::numeric_limits<double>::quiet_NaN();
};

inline double well_fraction(const ScalarField& c, const WellAnalysis& w, double tol = 0.05) {
  std::size_t hits = 0;
  for (double v : c)
    if (std::abs(v - w.mu0) < tol || std::abs(v - w.mu1) < tol) ++hits;
  return c.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(c.size());
}

inline double threshold_variation(const ScalarField& c, const Grid& g, double level) {
  double tv = 0.0;
  const auto ind = [&](int i, int j) { return c[g.index(i, j)] > level ? 1 : 0; };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i) tv += (ind(i, j) != ind(i + 1, j)) * g.hy() * (j == 0 || j + 1 == g.ny ? 0.5 : 1.0);
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) tv += (ind(i, j) != ind(i, j + 1)) * g.hx() * (i == 0 || i + 1 == g.nx ? 0.5 : 1.0);
  return tv;
}

inline CompactnessEntry compactness_run(const Material& m, const Rect& domain, double eps, std::uint64_t seed,
                                        const CellConfig& cfg) {
  const Material me = m.with_epsilon(eps);
  const Grid g = Grid::covering(domain, eps / cfg.h_ratio);
  SolveConfig sc = cfg.solve;
  sc.boundary = Boundary::Free;
  sc.seed = seed;
  const SolveReport rep = minimize(random_init(g, me, seed, sc.cg_tol, sc.cg_max), me, sc);
  FieldPair fp = rep.final;
  fp.u = skew_normalize(fp.u, g);
  CompactnessEntry e;
  e.eps = eps;
  const double mis = elastic_mismatch(fp, me.e0);
  e.mismatch_sq = mis * mis;
  e.well_fraction = well_fraction(fp.c, me.wells);
  e.interface_length = threshold_variation(fp.c, g, 0.5 * (me.wells.mu0 + me.wells.mu1));
  e.energy = rep.breakdown.total;
  e.mean = field_mean(fp.c, g);
  e.iterations = rep.iterations;
  e.converged = rep.converged;
  return e;
}

/// Random-start minimisers at eps_pair[0] and eps_pair[1] (h/eps fixed);
/// mismatch_ratio = mismatch²(eps_pair[1]) / mismatch²(eps_pair[0]).
inline CompactnessReport compactness_probe(const Material& m, const Rect& domain, const std::vector<double>& eps_pair,
                                           std::uint64_t seed, const CellConfig& cfg = {}) {
  if (eps_pair.size() != 2) throw ValidationError("compactness: eps_pair must hold two values");
  validate_eps_list(eps_pair);
  CompactnessReport rep;
  rep.entries = parallel_map<CompactnessEntry>(
      2, cfg.threads, [&](std::size_t k) { return compactness_run(m, domain, eps_pair[k], seed, cfg); });
  rep.mismatch_ratio = rep.entries[1].mismatch_sq / rep.entries[0].mismatch_sq;
  return rep;
}

}  // namespace gammaphase
