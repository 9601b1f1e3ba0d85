// solver.hpp
// Minimisation of the discrete I_eps: preconditioned CG for the elastic subproblem at
// fixed c, a projected semi-implicit gradient step for c at fixed u, and the
// alternating loop that couples them.
//
// Boundary::Free leaves every node free; u is then determined up to skew-affine maps,
// which are projected out of the CG iteration and removed afterwards by skew_normalize.
// Boundary::Pinned holds c and u at their initial values on the four sides;
// Boundary::PinnedEnds holds them on the bottom and top rows only and leaves the
// lateral sides natural.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gammaphase/errors.hpp"
#include "gammaphase/field.hpp"
#include "gammaphase/grid.hpp"
#include "gammaphase/spectral.hpp"
#include "gammaphase/tensor.hpp"

namespace gammaphase {

enum class Boundary { Free, Pinned, PinnedEnds };

inline const char* to_string(Boundary b) {
  switch (b) {
    case Boundary::Free: return "free";
    case Boundary::Pinned: return "pinned";
    case Boundary::PinnedEnds: return "pinned_ends";
  }
  return "?";
}

inline bool is_pinned_node(Boundary b, const Grid& g, int i, int j) {
  switch (b) {
    case Boundary::Free: return false;
    case Boundary::Pinned: return g.on_boundary(i, j);
    case Boundary::PinnedEnds: return j == 0 || j == g.ny - 1;
  }
  return false;
}

namespace detail {
inline SpectralBC spectral_x(Boundary b) { return b == Boundary::Pinned ? SpectralBC::Dirichlet : SpectralBC::Neumann; }
inline SpectralBC spectral_y(Boundary b) { return b == Boundary::Free ? SpectralBC::Neumann : SpectralBC::Dirichlet; }
}  // namespace detail

struct SolveConfig {
  int max_outer = 2000;
  double tol_rel = 1e-10;
  double cg_tol = 1e-8;
  int cg_max = 5000;
  double step0 = 1.0;
  std::optional<double> mass;
  std::uint64_t seed = 42;
  Boundary boundary = Boundary::Free;

  void validate() const {
    std::string err;
    if (max_outer < 0) err += "max_outer must be >= 0; ";
    if (!(tol_rel > 0.0)) err += "tol_rel must be positive; ";
    if (!(cg_tol > 0.0)) err += "cg_tol must be positive; ";
    if (cg_max < 1) err += "cg_max must be >= 1; ";
    if (!(step0 > 0.0)) err += "step0 must be positive; ";
    if (mass && !(*mass >= 0.0 && *mass <= 1.0)) err += "mass must lie in [0, 1]; ";
    if (!err.empty()) throw ValidationError("solve config: " + err.substr(0, err.size() - 2));
  }
};

struct SolveReport {
  std::vector<double> energy_trace;
  /// Mean of c after every accepted iterate (index 0 is the initial state).
  std::vector<double> mean_trace;
  int iterations = 0;
  int cg_iterations = 0;
  bool converged = false;
  FieldPair final;
  EnergyBreakdown breakdown;
};

/// NonConvergence raised inside minimize, carrying the state reached so far.
class MinimizeNonConvergence : public NonConvergence {
 public:
  MinimizeNonConvergence(const NonConvergence& e, SolveReport partial)
      : NonConvergence(e.what(), e.residual(), e.iterations()), partial_(std::move(partial)) {}
  const SolveReport& partial() const { return partial_; }

 private:
  SolveReport partial_;
};

struct ElasticResult {
  VectorField u;
  int iterations = 0;
  double residual = 0.0;  // final residual relative to the zero-guess residual
};

/// Linear elastic subproblem min_u Σ C(e(u) - c e0):(e(u) - c e0) on a fixed grid.
class ElasticSystem {
 public:
  ElasticSystem(const Grid& g, const Material& m, Boundary bc)
      : grid_(g),
        bc_(bc),
        el_(g, m.stiffness, m.e0),
        precond_(g, detail::spectral_x(bc), detail::spectral_y(bc)) {
    const Mat3& c = m.stiffness.matrix();
    axx_ = c(0, 0);
    ayy_x_ = 0.5 * c(2, 2);
    axx_y_ = 0.5 * c(2, 2);
    ayy_ = c(1, 1);
    weight_.resize(g.nodes());
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) weight_[g.index(i, j)] = g.node_weight(i, j);
    if (bc == Boundary::Free) build_kernel();
  }

  const Grid& grid() const { return grid_; }
  Boundary boundary() const { return bc_; }

  /// y = K u.
  void apply(const VectorField& u, VectorField& y) const {
    std::fill(y.x.begin(), y.x.end(), 0.0);
    std::fill(y.y.begin(), y.y.end(), 0.0);
    for (int j = 0; j + 1 < grid_.ny; ++j)
      for (int i = 0; i + 1 < grid_.nx; ++i) {
        const auto n = detail::cell_nodes(grid_, i, j);
        const Eigen::Matrix<double, 8, 1> ye = el_.stiffness * detail::gather_u(u, n);
        for (int a = 0; a < 4; ++a) {
          y.x[n[a]] += ye(a);
          y.y[n[a]] += ye(4 + a);
        }
      }
  }

  /// Load vector b with b_e = coupling * c_e.
  VectorField load(const ScalarField& c) const {
    VectorField b(grid_.nodes());
    for (int j = 0; j + 1 < grid_.ny; ++j)
      for (int i = 0; i + 1 < grid_.nx; ++i) {
        const auto n = detail::cell_nodes(grid_, i, j);
        const Eigen::Matrix<double, 8, 1> be = el_.coupling * detail::gather_c(c, n);
        for (int a = 0; a < 4; ++a) {
          b.x[n[a]] += be(a);
          b.y[n[a]] += be(4 + a);
        }
      }
    return b;
  }

  /// Minimises over the free dofs starting from `u0` (pinned dofs keep their values).
  /// Stops when ‖r‖ ≤ cg_tol ‖r_0‖, with r_0 the residual of u0 with its free dofs zeroed.
  ElasticResult solve(const ScalarField& c, const VectorField& u0, double cg_tol, int cg_max) const {
    const std::size_t n = grid_.nodes();
    ElasticResult res;
    res.u = u0;
    VectorField& u = res.u;
    const VectorField b = load(c);

    VectorField tmp(n), r(n), z(n), p(n), q(n);
    // Reference residual from the zero free-dof guess.
    VectorField zero_guess = u0;
    for (std::size_t k = 0; k < n; ++k)
      if (free_dof(k)) zero_guess.x[k] = zero_guess.y[k] = 0.0;
    residual(b, zero_guess, tmp, r);
    const double ref = norm(r);
    if (ref == 0.0) {
      res.u = zero_guess;
      finish(res.u);
      return res;
    }
    residual(b, u, tmp, r);
    double rnorm = norm(r);
    int it = 0;
    double rz = 0.0;
    while (rnorm > cg_tol * ref) {
      if (it >= cg_max) {
        throw NonConvergence("elastic CG: " + std::to_string(cg_max) + " iterations, relative residual " +
                                 std::to_string(rnorm / ref),
                             rnorm / ref, it);
      }
      precondition(r, z);
      const double rz_new = dot(r, z);
      if (it == 0) {
        p = z;
      } else {
        const double beta = rz_new / rz;
        for (std::size_t k = 0; k < n; ++k) {
          p.x[k] = z.x[k] + beta * p.x[k];
          p.y[k] = z.y[k] + beta * p.y[k];
        }
      }
      rz = rz_new;
      apply(p, q);
      mask(q);
      project(q);
      const double pq = dot(p, q);
      if (!(pq > 0.0)) break;
      const double alpha = rz / pq;
      for (std::size_t k = 0; k < n; ++k) {
        u.x[k] += alpha * p.x[k];
        u.y[k] += alpha * p.y[k];
        r.x[k] -= alpha * q.x[k];
        r.y[k] -= alpha * q.y[k];
      }
      ++it;
      // Recompute the true residual now and then to avoid drift.
      if (it % 50 == 0) residual(b, u, tmp, r);
      rnorm = norm(r);
    }
    res.iterations = it;
    res.residual = rnorm / ref;
    finish(u);
    return res;
  }

 private:
  bool free_dof(std::size_t k) const {
    if (bc_ == Boundary::Free) return true;
    const int i = static_cast<int>(k % grid_.nx), j = static_cast<int>(k / grid_.nx);
    return !is_pinned_node(bc_, grid_, i, j);
  }

  void mask(VectorField& v) const {
    if (bc_ == Boundary::Free) return;
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i)
        if (is_pinned_node(bc_, grid_, i, j)) v.x[grid_.index(i, j)] = v.y[grid_.index(i, j)] = 0.0;
  }

  void residual(const VectorField& b, const VectorField& u, VectorField& tmp, VectorField& r) const {
    apply(u, tmp);
    for (std::size_t k = 0; k < r.size(); ++k) {
      r.x[k] = b.x[k] - tmp.x[k];
      r.y[k] = b.y[k] - tmp.y[k];
    }
    mask(r);
    project(r);
  }

  void precondition(const VectorField& r, VectorField& z) const {
    std::vector<double> scaled(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) scaled[k] = r.x[k] / weight_[k];
    precond_.solve(scaled.data(), z.x.data(), 0.0, axx_, ayy_x_);
    for (std::size_t k = 0; k < r.size(); ++k) scaled[k] = r.y[k] / weight_[k];
    precond_.solve(scaled.data(), z.y.data(), 0.0, axx_y_, ayy_);
    project(z);
  }

  static double dot(const VectorField& a, const VectorField& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a.x[k] * b.x[k] + a.y[k] * b.y[k];
    return s;
  }
  static double norm(const VectorField& a) { return std::sqrt(dot(a, a)); }

  /// Orthonormal basis of the skew-affine kernel: two translations and a rotation.
  void build_kernel() {
    const std::size_t n = grid_.nodes();
    const Vec2 ctr = grid_.bounds().center();
    VectorField tx(n), ty(n), rot(n);
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const std::size_t k = grid_.index(i, j);
        tx.x[k] = 1.0;
        ty.y[k] = 1.0;
        rot.x[k] = -(grid_.y(j) - ctr.y());
        rot.y[k] = grid_.x(i) - ctr.x();
      }
    kernel_ = {tx, ty, rot};
    for (std::size_t a = 0; a < kernel_.size(); ++a) {
      for (std::size_t b = 0; b < a; ++b) axpy(-dot(kernel_[a], kernel_[b]), kernel_[b], kernel_[a]);
      const double nn = norm(kernel_[a]);
      for (std::size_t k = 0; k < n; ++k) {
        kernel_[a].x[k] /= nn;
        kernel_[a].y[k] /= nn;
      }
    }
  }

  static void axpy(double alpha, const VectorField& x, VectorField& y) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      y.x[k] += alpha * x.x[k];
      y.y[k] += alpha * x.y[k];
    }
  }

  void project(VectorField& v) const {
    for (const auto& kv : kernel_) axpy(-dot(v, kv), kv, v);
  }

  void finish(VectorField& u) const {
    if (bc_ == Boundary::Free) u = skew_normalize(u, grid_);
  }

  Grid grid_;
  Boundary bc_;
  Q1Element el_;
  SpectralSolver precond_;
  double axx_ = 1.0, ayy_x_ = 1.0, axx_y_ = 1.0, ayy_ = 1.0;
  std::vector<double> weight_;
  std::vector<VectorField> kernel_;
};

/// Free-boundary elastic solve from a zero initial guess; u is gauge fixed.
inline VectorField elastic_solve(const ScalarField& c, const Material& m, const Grid& g, double cg_tol = 1e-8,
                                 int cg_max = 5000) {
  const ElasticSystem sys(g, m, Boundary::Free);
  return sys.solve(c, VectorField(g.nodes()), cg_tol, cg_max).u;
}

/// Objective Σ C(e(u) - c e0):(e(u) - c e0) dA of the elastic subproblem (no 1/eps).
inline double elastic_objective(const FieldPair& fp, const Material& m) {
  const Q1Element el(fp.grid, m.stiffness, m.e0);
  const Mat3& cm = m.stiffness.matrix();
  const Grid& g = fp.grid;
  double sum = 0.0;
  for (int j = 0; j + 1 < g.ny; ++j) {
    double row = 0.0;
    for (int i = 0; i + 1 < g.nx; ++i) {
      const auto n = detail::cell_nodes(g, i, j);
      const Eigen::Vector4d ce = detail::gather_c(fp.c, n);
      const auto ue = detail::gather_u(fp.u, n);
      for (int gp = 0; gp < Q1Element::kGauss; ++gp) {
        const Vec3 r = el.b[gp] * ue - el.shape[gp].dot(ce) * el.misfit_voigt;
        row += r.dot(cm * r);
      }
    }
    sum += row;
  }
  return sum * el.weight;
}

// ---------------------------------------------------------------------------
// Mass projection

/// Shifts the free entries of c by a common constant and clamps them to [0, 1] so that
/// the trapezoid mean equals `mass`. This is the projection onto box ∩ mean-slice in
/// the trapezoid-weighted norm. `is_free` marks the entries that may move.
inline void project_mass(ScalarField& c, const Grid& g, double mass, const std::vector<char>& is_free) {
  const double area = g.lx * g.ly;
  double fixed_sum = 0.0, free_weight = 0.0;
  std::vector<double> w(c.size());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.index(i, j);
      w[k] = g.node_weight(i, j);
      if (is_free[k]) {
        free_weight += w[k];
      } else {
        fixed_sum += w[k] * c[k];
      }
    }
  const double target = mass * area - fixed_sum;  // required Σ w c over free nodes
  if (free_weight == 0.0 || target < -1e-15 * area || target > free_weight * (1.0 + 1e-15)) {
    throw RangeError("project_mass: mass " + std::to_string(mass) + " not reachable");
  }
  const ScalarField y = c;
  const auto sum_at = [&](double shift, double& active) {
    double s = 0.0;
    active = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (!is_free[k]) continue;
      const double v = y[k] + shift;
      if (v <= 0.0) continue;
      if (v >= 1.0) {
        s += w[k];
      } else {
        s += w[k] * v;
        active += w[k];
      }
    }
    return s;
  };
  double ymin = 1.0, ymax = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k)
    if (is_free[k]) {
      ymin = std::min(ymin, y[k]);
      ymax = std::max(ymax, y[k]);
    }
  double lo = -ymax, hi = 1.0 - ymin;  // sum_at(lo) = 0, sum_at(hi) = free_weight
  double shift = 0.0;
  double active = 0.0;
  double s = sum_at(shift, active);
  const double tol = 1e-14 * area;
  for (int it = 0; it < 200 && std::abs(s - target) > tol; ++it) {
    if (s < target) {
      lo = shift;
    } else {
      hi = shift;
    }
    double next = active > 0.0 ? shift + (target - s) / active : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == shift) break;
    shift = next;
    s = sum_at(shift, active);
  }
  for (std::size_t k = 0; k < c.size(); ++k)
    if (is_free[k]) c[k] = std::clamp(y[k] + shift, 0.0, 1.0);
}

inline void project_mass(ScalarField& c, const Grid& g, double mass) {
  project_mass(c, g, mass, std::vector<char>(c.size(), 1));
}

// ---------------------------------------------------------------------------
// Phase step

struct PhaseStepResult {
  double step = 0.0;   // accepted step size (0 for a stationary point)
  double energy = 0.0; // total energy after the step
  double change = 0.0; // max |Δc|
};

/// Phase update at fixed u:
///   c ← P(c - τ (I - 2 eps τ Δ_h)⁻¹ g),
/// with g the L² gradient of I_eps in c, Δ_h the five-point Laplacian matching the
/// gradient term, and P the projection onto [0, 1] (and the mass slice if given).
/// τ starts at `step` and is halved until the energy strictly decreases.
class PhaseStepper {
 public:
  PhaseStepper(const Grid& g, Boundary bc)
      : grid_(g), bc_(bc), smoother_(g, detail::spectral_x(bc), detail::spectral_y(bc)) {
    is_free_.assign(g.nodes(), 1);
    weight_.resize(g.nodes());
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        weight_[g.index(i, j)] = g.node_weight(i, j);
        if (is_pinned_node(bc, g, i, j)) is_free_[g.index(i, j)] = 0;
      }
  }

  const std::vector<char>& free_mask() const { return is_free_; }

  static constexpr int kMaxHalvings = 30;

  PhaseStepResult step(FieldPair& fp, const Material& m, double step, std::optional<double> mass,
                       double current_energy) const {
    if (!(step > 0.0)) throw ParameterError("phase_step: step must be positive");
    const std::size_t n = grid_.nodes();
    ScalarField g = energy_gradient_c(fp, m);
    double gmax = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      g[k] = is_free_[k] ? g[k] / weight_[k] : 0.0;
      gmax = std::max(gmax, std::abs(g[k]));
    }
    PhaseStepResult res;
    res.energy = current_energy;
    if (gmax <= 1e-10) return res;

    ScalarField dir(n), trial(n);
    double tau = step;
    for (int halving = 0; halving <= kMaxHalvings; ++halving, tau *= 0.5) {
      smoother_.solve(g.data(), dir.data(), 1.0, 2.0 * m.epsilon * tau, 2.0 * m.epsilon * tau);
      double change = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        trial[k] = is_free_[k] ? std::clamp(fp.c[k] - tau * dir[k], 0.0, 1.0) : fp.c[k];
      }
      if (mass) project_mass(trial, grid_, *mass, is_free_);
      for (std::size_t k = 0; k < n; ++k) change = std::max(change, std::abs(trial[k] - fp.c[k]));
      if (change == 0.0) return res;  // the projection absorbs the whole step
      FieldPair cand{fp.grid};
      cand.c = trial;
      cand.u = fp.u;
      const double e = energy(cand, m).total;
      if (e < current_energy) {
        fp.c.swap(trial);
        res.step = tau;
        res.energy = e;
        res.change = change;
        return res;
      }
    }
    throw StepFailure("phase_step: no decrease after " + std::to_string(kMaxHalvings) + " halvings");
  }

 private:
  Grid grid_;
  Boundary bc_;
  SpectralSolver smoother_;
  std::vector<char> is_free_;
  std::vector<double> weight_;
};

/// One phase step with a freshly built stepper.
inline PhaseStepResult phase_step(FieldPair& fp, const Material& m, double step,
                                  std::optional<double> mass = std::nullopt,
                                  Boundary bc = Boundary::Free) {
  const PhaseStepper stepper(fp.grid, bc);
  return stepper.step(fp, m, step, mass, energy(fp, m).total);
}

// ---------------------------------------------------------------------------

/// Uniform c in [mu0, mu1] per node from a seeded mt19937_64; u from the elastic solve.
inline FieldPair random_init(const Grid& g, const Material& m, std::uint64_t seed, double cg_tol = 1e-8,
                             int cg_max = 5000) {
  if (!m.wells.double_well()) throw ParameterError("random_init requires a double-well potential");
  FieldPair fp(g);
  std::mt19937_64 rng(seed);
  const double lo = m.wells.mu0, span = m.wells.gap();
  for (double& v : fp.c) {
    const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = lo + span * unit;
  }
  fp.u = elastic_solve(fp.c, m, g, cg_tol, cg_max);
  return fp;
}

/// Alternating minimisation: exact (to cg_tol) elastic solve, then one phase step, until
/// the relative energy decrease of an outer iteration falls below tol_rel, the phase
/// step cannot decrease the energy, or max_outer is reached.
inline SolveReport minimize(const FieldPair& init, const Material& m, const SolveConfig& cfg) {
  cfg.validate();
  if (init.c.size() != init.grid.nodes() || init.u.size() != init.grid.nodes()) {
    throw ValidationError("minimize: field sizes do not match the grid");
  }
  const Grid& g = init.grid;
  const ElasticSystem elastic(g, m, cfg.boundary);
  const PhaseStepper stepper(g, cfg.boundary);

  SolveReport rep;
  rep.final = init;
  FieldPair& fp = rep.final;
  if (cfg.mass) project_mass(fp.c, g, *cfg.mass, stepper.free_mask());

  const auto solve_u = [&]() {
    try {
      const ElasticResult er = elastic.solve(fp.c, fp.u, cfg.cg_tol, cfg.cg_max);
      rep.cg_iterations += er.iterations;
      return er.u;
    } catch (const NonConvergence& e) {
      rep.breakdown = energy(fp, m);
      throw MinimizeNonConvergence(e, rep);
    }
  };

  fp.u = solve_u();
  double e_cur = energy(fp, m).total;
  rep.energy_trace.push_back(e_cur);
  rep.mean_trace.push_back(field_mean(fp.c, g));

  double tau = cfg.step0;
  for (int it = 0; it < cfg.max_outer; ++it) {
    PhaseStepResult ps;
    try {
      ps = stepper.step(fp, m, std::min(2.0 * tau, cfg.step0), cfg.mass, e_cur);
    } catch (const StepFailure&) {
      rep.converged = true;
      break;
    }
    if (ps.step == 0.0) {
      rep.converged = true;
      break;
    }
    tau = ps.step;
    const VectorField u_prev = fp.u;
    fp.u = solve_u();
    double e_new = energy(fp, m).total;
    if (e_new > ps.energy) {  // round-off guard: keep the trace monotone
      fp.u = u_prev;
      e_new = ps.energy;
    }
    ++rep.iterations;
    rep.energy_trace.push_back(e_new);
    rep.mean_trace.push_back(field_mean(fp.c, g));
    const double decrease = e_cur - e_new;
    e_cur = e_new;
    if (decrease <= cfg.tol_rel * std::max(std::abs(e_cur), std::numeric_limits<double>::min())) {
      rep.converged = true;
      break;
    }
  }
  rep.breakdown = energy(fp, m);
  return rep;
}

}  // namespace gammaphase
