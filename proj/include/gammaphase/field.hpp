// field.hpp
// Discrete phase field c and displacement u on a rectangular node grid, and the
// discrete energy
//
//   I_eps[u, c] = ∫ f(c)/eps + eps |∇c|² + C(e(u) - c e0):(e(u) - c e0)/eps dz.
//
// Quadrature per cell:
//   chemical   trapezoid (mean of f over the four corners),
//   gradient   edge differences (mean of the two parallel edges per direction),
//   elastic    bilinear (Q1) displacement, 2x2 Gauss points, c interpolated bilinearly.
// Affine displacements have exact strain at every Gauss point, and neither c nor u
// admits a zero-energy checkerboard mode.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gammaphase/errors.hpp"
#include "gammaphase/grid.hpp"
#include "gammaphase/tensor.hpp"
#include "gammaphase/wellmodel.hpp"

namespace gammaphase {

/// Everything that defines the energy functional.
struct Material {
  ChemParams chem;
  WellAnalysis wells;
  Stiffness stiffness = isotropic_stiffness(1.0, 1.0);
  Misfit e0;
  double epsilon = 0.05;

  static Material make(const ChemParams& chem, const Stiffness& c, const Misfit& e0, double epsilon) {
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    return Material{chem, analyze_wells(chem), c, e0, epsilon};
  }
  Material with_epsilon(double eps) const {
    Material m = *this;
    if (!(eps > 0.0)) throw ParameterError("epsilon must be positive");
    m.epsilon = eps;
    return m;
  }
};

struct FieldPair {
  Grid grid;
  ScalarField c;
  VectorField u;

  FieldPair() = default;
  explicit FieldPair(const Grid& g) : grid(g), c(g.nodes(), 0.0), u(g.nodes()) {}
};

struct EnergyBreakdown {
  double chem = 0.0;
  double grad = 0.0;
  double elastic = 0.0;
  double total = 0.0;
  /// Per-cell energy density g_eps (cell energy / cell area), row-major over cells.
  std::vector<double> density;
};

/// Bilinear element on one cell: strain operators at the four Gauss points and the
/// element matrices of the elastic term. Local dof order: u_x at corners
/// (i,j), (i+1,j), (i,j+1), (i+1,j+1), then u_y at the same corners.
struct Q1Element {
  static constexpr int kGauss = 4;
  using BMatrix = Eigen::Matrix<double, 3, 8>;

  std::array<BMatrix, kGauss> b;
  std::array<Eigen::Vector4d, kGauss> shape;
  double weight = 0.0;  // cell area / 4
  Eigen::Matrix<double, 8, 8> stiffness;
  Eigen::Matrix<double, 8, 4> coupling;  // b_e = coupling * c_e
  Vec3 misfit_voigt;
  double misfit_energy = 0.0;  // v0ᵀ C v0

  Q1Element(const Grid& g, const Stiffness& c, const Misfit& e0) {
    const double hx = g.hx(), hy = g.hy();
    const double off = 0.5 / std::sqrt(3.0);
    const std::array<double, 2> pts = {0.5 - off, 0.5 + off};
    weight = 0.25 * g.cell_area();
    misfit_voigt = e0.voigt();
    const Mat3& cm = c.matrix();
    misfit_energy = misfit_voigt.dot(cm * misfit_voigt);
    stiffness.setZero();
    coupling.setZero();
    int gp = 0;
    for (double eta : pts) {
      for (double xi : pts) {
        const Eigen::Vector4d n((1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta);
        const Eigen::Vector4d dx = Eigen::Vector4d(-(1 - eta), (1 - eta), -eta, eta) / hx;
        const Eigen::Vector4d dy = Eigen::Vector4d(-(1 - xi), -xi, (1 - xi), xi) / hy;
        BMatrix bm = BMatrix::Zero();
        const double r = std::numbers::sqrt2 * 0.5;
        for (int a = 0; a < 4; ++a) {
          bm(0, a) = dx(a);
          bm(1, 4 + a) = dy(a);
          bm(2, a) = r * dy(a);
          bm(2, 4 + a) = r * dx(a);
        }
        b[gp] = bm;
        shape[gp] = n;
        stiffness += weight * bm.transpose() * cm * bm;
        coupling += weight * (bm.transpose() * (cm * misfit_voigt)) * n.transpose();
        ++gp;
      }
    }
  }
};

namespace detail {

inline std::array<std::size_t, 4> cell_nodes(const Grid& g, int i, int j) {
  return {g.index(i, j), g.index(i + 1, j), g.index(i, j + 1), g.index(i + 1, j + 1)};
}

inline Eigen::Matrix<double, 8, 1> gather_u(const VectorField& u, const std::array<std::size_t, 4>& n) {
  Eigen::Matrix<double, 8, 1> ue;
  for (int a = 0; a < 4; ++a) {
    ue(a) = u.x[n[a]];
    ue(4 + a) = u.y[n[a]];
  }
  return ue;
}

inline Eigen::Vector4d gather_c(const ScalarField& c, const std::array<std::size_t, 4>& n) {
  return {c[n[0]], c[n[1]], c[n[2]], c[n[3]]};
}

/// ε |∇c|² per unit area, with each partial the mean over the two parallel edges.
inline double grad_density(const Eigen::Vector4d& ce, double hx, double hy) {
  const double dx0 = ce(1) - ce(0), dx1 = ce(3) - ce(2);
  const double dy0 = ce(2) - ce(0), dy1 = ce(3) - ce(1);
  return 0.5 * (dx0 * dx0 + dx1 * dx1) / (hx * hx) + 0.5 * (dy0 * dy0 + dy1 * dy1) / (hy * hy);
}

}  // namespace detail

/// Cell-centred symmetrised gradient, one 2x2 matrix per cell (row-major over cells).
inline std::vector<Mat2> symmetrized_gradient(const VectorField& u, const Grid& g) {
  std::vector<Mat2> out;
  out.reserve(g.cells());
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i) out.push_back(sym(cell_gradient(u, g, i, j)));
  return out;
}

/// Discrete I_eps and its three parts; `with_density` also fills the per-cell g_eps.
inline EnergyBreakdown energy(const FieldPair& fp, const Material& m, bool with_density = false) {
  const Grid& g = fp.grid;
  const double eps = m.epsilon;
  const double area = g.cell_area();
  const double hx = g.hx(), hy = g.hy();
  const Q1Element el(g, m.stiffness, m.e0);
  const Mat3& cm = m.stiffness.matrix();

  std::vector<double> fnode(g.nodes());
  for (std::size_t k = 0; k < fnode.size(); ++k) fnode[k] = eval_f(m.chem, m.wells, fp.c[k]);

  EnergyBreakdown e;
  if (with_density) e.density.assign(g.cells(), 0.0);
  for (int j = 0; j + 1 < g.ny; ++j) {
    double row_chem = 0.0, row_grad = 0.0, row_el = 0.0;
    for (int i = 0; i + 1 < g.nx; ++i) {
      const auto n = detail::cell_nodes(g, i, j);
      const Eigen::Vector4d ce = detail::gather_c(fp.c, n);
      const auto ue = detail::gather_u(fp.u, n);
      const double chem = 0.25 * (fnode[n[0]] + fnode[n[1]] + fnode[n[2]] + fnode[n[3]]) / eps;
      const double grad = eps * detail::grad_density(ce, hx, hy);
      double el_sum = 0.0;
      for (int gp = 0; gp < Q1Element::kGauss; ++gp) {
        const Vec3 r = el.b[gp] * ue - el.shape[gp].dot(ce) * el.misfit_voigt;
        el_sum += r.dot(cm * r);
      }
      const double elastic = 0.25 * el_sum / eps;
      row_chem += chem;
      row_grad += grad;
      row_el += elastic;
      if (with_density) e.density[static_cast<std::size_t>(j) * (g.nx - 1) + i] = chem + grad + elastic;
    }
    e.chem += row_chem * area;
    e.grad += row_grad * area;
    e.elastic += row_el * area;
  }
  e.total = e.chem + e.grad + e.elastic;
  return e;
}

/// (∫ ‖e(u) - c e0‖_F² dz)^{1/2} with the Gauss quadrature of the elastic energy term.
inline double elastic_mismatch(const FieldPair& fp, const Misfit& e0) {
  const Grid& g = fp.grid;
  const Q1Element el(g, isotropic_stiffness(0.0, 0.5), e0);
  double sum = 0.0;
  for (int j = 0; j + 1 < g.ny; ++j) {
    double row = 0.0;
    for (int i = 0; i + 1 < g.nx; ++i) {
      const auto n = detail::cell_nodes(g, i, j);
      const Eigen::Vector4d ce = detail::gather_c(fp.c, n);
      const auto ue = detail::gather_u(fp.u, n);
      for (int gp = 0; gp < Q1Element::kGauss; ++gp)
        row += (el.b[gp] * ue - el.shape[gp].dot(ce) * el.misfit_voigt).squaredNorm();
    }
    sum += row;
  }
  return std::sqrt(sum * el.weight);
}

/// Sum of density * cell area over the cells whose centre satisfies `keep`.
template <typename Pred>
double restricted_energy(const std::vector<double>& density, const Grid& g, Pred keep) {
  double sum = 0.0;
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i) {
      const Vec2 centre(g.x(i) + 0.5 * g.hx(), g.y(j) + 0.5 * g.hy());
      if (keep(centre)) sum += density[static_cast<std::size_t>(j) * (g.nx - 1) + i];
    }
  return sum * g.cell_area();
}

/// Euclidean gradient of I_eps with respect to the nodal values of c, u held fixed.
inline ScalarField energy_gradient_c(const FieldPair& fp, const Material& m) {
  const Grid& g = fp.grid;
  const double eps = m.epsilon;
  const double area = g.cell_area();
  const double hx = g.hx(), hy = g.hy();
  const Q1Element el(g, m.stiffness, m.e0);
  const Vec3 cv0 = m.stiffness.matrix() * el.misfit_voigt;

  ScalarField grad(g.nodes(), 0.0);
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double fp_k = eval_f_prime_clamped(m.chem, fp.c[k]);
    grad[k] = fp_k / eps * g.node_weight(static_cast<int>(k % g.nx), static_cast<int>(k / g.nx));
  }
  const double gx = eps * area / (hx * hx);
  const double gy = eps * area / (hy * hy);
  for (int j = 0; j + 1 < g.ny; ++j) {
    for (int i = 0; i + 1 < g.nx; ++i) {
      const auto n = detail::cell_nodes(g, i, j);
      const Eigen::Vector4d ce = detail::gather_c(fp.c, n);
      const auto ue = detail::gather_u(fp.u, n);
      // d/dc of eps * area * 0.5 * (dx0² + dx1²)/hx² + ... : each edge difference squared.
      const double dx0 = ce(1) - ce(0), dx1 = ce(3) - ce(2);
      const double dy0 = ce(2) - ce(0), dy1 = ce(3) - ce(1);
      Eigen::Vector4d ge(-gx * dx0 - gy * dy0, gx * dx0 - gy * dy1, -gx * dx1 + gy * dy0,
                         gx * dx1 + gy * dy1);
      for (int gp = 0; gp < Q1Element::kGauss; ++gp) {
        const double cg = el.shape[gp].dot(ce);
        const double stress_dot = cv0.dot(el.b[gp] * ue) - cg * el.misfit_energy;
        ge -= (2.0 * el.weight / eps * stress_dot) * el.shape[gp];
      }
      for (int a = 0; a < 4; ++a) grad[n[a]] += ge(a);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Snapshot file: header "gammaphase-field v1 nx ny lx ly origin_x origin_y", then one
// line "i j c u1 u2" per node in row-major order, 17 significant digits.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_snapshot(std::ostream& os, const FieldPair& fp) {
  const Grid& g = fp.grid;
  os << "gammaphase-field v1 " << g.nx << ' ' << g.ny << ' ' << format_double(g.lx) << ' '
     << format_double(g.ly) << ' ' << format_double(g.x0) << ' ' << format_double(g.y0) << '\n';
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.index(i, j);
      os << i << ' ' << j << ' ' << format_double(fp.c[k]) << ' ' << format_double(fp.u.x[k]) << ' '
         << format_double(fp.u.y[k]) << '\n';
    }
}

inline FieldPair read_snapshot(std::istream& is) {
  std::string magic, version;
  int nx = 0, ny = 0;
  double lx = 0, ly = 0, x0 = 0, y0 = 0;
  if (!(is >> magic >> version >> nx >> ny >> lx >> ly >> x0 >> y0) || magic != "gammaphase-field" ||
      version != "v1") {
    throw ValidationError("snapshot: bad header");
  }
  FieldPair fp(Grid::make(nx, ny, lx, ly, x0, y0));
  for (std::size_t n = 0; n < fp.grid.nodes(); ++n) {
    int i = 0, j = 0;
    double c = 0, ux = 0, uy = 0;
    if (!(is >> i >> j >> c >> ux >> uy)) throw ValidationError("snapshot: truncated body");
    if (i < 0 || j < 0 || i >= nx || j >= ny) throw ValidationError("snapshot: node index out of range");
    const std::size_t k = fp.grid.index(i, j);
    fp.c[k] = c;
    fp.u.x[k] = ux;
    fp.u.y[k] = uy;
  }
  return fp;
}

inline void save_snapshot(const std::string& path, const FieldPair& fp) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  write_snapshot(os, fp);
}

inline FieldPair load_snapshot(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path);
  return read_snapshot(is);
}

}  // namespace gammaphase
