// grid.hpp
// Uniform rectangular node grid and nodal field containers.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gammaphase/errors.hpp"

namespace gammaphase {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Vec2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
};

/// nx x ny nodes spanning [origin, origin + (lx, ly)]. Node (i, j) sits at
/// origin + (i hx, j hy) and is stored at index j * nx + i.
struct Grid {
  int nx = 2, ny = 2;
  double lx = 1.0, ly = 1.0;
  double x0 = 0.0, y0 = 0.0;

  static Grid make(int nx, int ny, double lx, double ly, double x0 = 0.0, double y0 = 0.0) {
    if (nx < 2 || ny < 2) throw ValidationError("grid: nx and ny must be at least 2");
    if (!(lx > 0.0) || !(ly > 0.0)) throw ValidationError("grid: lx and ly must be positive");
    return Grid{nx, ny, lx, ly, x0, y0};
  }

  /// Grid covering `r` with spacing no larger than `h` in either direction.
  static Grid covering(const Rect& r, double h) {
    const int nx = std::max(2, static_cast<int>(std::ceil(r.width() / h - 1e-9)) + 1);
    const int ny = std::max(2, static_cast<int>(std::ceil(r.height() / h - 1e-9)) + 1);
    return make(nx, ny, r.width(), r.height(), r.x0, r.y0);
  }

  double hx() const { return lx / (nx - 1); }
  double hy() const { return ly / (ny - 1); }
  double cell_area() const { return hx() * hy(); }
  std::size_t nodes() const { return static_cast<std::size_t>(nx) * ny; }
  std::size_t cells() const { return static_cast<std::size_t>(nx - 1) * (ny - 1); }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
  double x(int i) const { return x0 + i * hx(); }
  double y(int j) const { return y0 + j * hy(); }
  Vec2 node(int i, int j) const { return {x(i), y(j)}; }
  Rect bounds() const { return {x0, y0, x0 + lx, y0 + ly}; }
  bool on_boundary(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }

  /// Trapezoid quadrature weight of node (i, j).
  double node_weight(int i, int j) const {
    const double wx = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
    const double wy = (j == 0 || j == ny - 1) ? 0.5 : 1.0;
    return wx * wy * cell_area();
  }
};

using ScalarField = std::vector<double>;

struct VectorField {
  std::vector<double> x;
  std::vector<double> y;

  VectorField() = default;
  explicit VectorField(std::size_t n) : x(n, 0.0), y(n, 0.0) {}
  std::size_t size() const { return x.size(); }
};

/// Trapezoid-rule average of a nodal field over the grid rectangle.
inline double field_mean(const ScalarField& f, const Grid& g) {
  double sum = 0.0;
  for (int j = 0; j < g.ny; ++j) {
    double row = 0.0;
    for (int i = 0; i < g.nx; ++i) row += g.node_weight(i, j) * f[g.index(i, j)];
    sum += row;
  }
  return sum / (g.lx * g.ly);
}

/// Cell-centred gradient of a vector field: each partial derivative averages the two
/// parallel edge differences of the cell. Row r of the result is ∇u_r.
inline Mat2 cell_gradient(const VectorField& u, const Grid& g, int i, int j) {
  const std::size_t k00 = g.index(i, j), k10 = g.index(i + 1, j);
  const std::size_t k01 = g.index(i, j + 1), k11 = g.index(i + 1, j + 1);
  const double hx = g.hx(), hy = g.hy();
  Mat2 grad;
  grad(0, 0) = 0.5 * ((u.x[k10] - u.x[k00]) + (u.x[k11] - u.x[k01])) / hx;
  grad(0, 1) = 0.5 * ((u.x[k01] - u.x[k00]) + (u.x[k11] - u.x[k10])) / hy;
  grad(1, 0) = 0.5 * ((u.y[k10] - u.y[k00]) + (u.y[k11] - u.y[k01])) / hx;
  grad(1, 1) = 0.5 * ((u.y[k01] - u.y[k00]) + (u.y[k11] - u.y[k10])) / hy;
  return grad;
}

inline double cell_average(const ScalarField& c, const Grid& g, int i, int j) {
  return 0.25 * (c[g.index(i, j)] + c[g.index(i + 1, j)] + c[g.index(i, j + 1)] +
                 c[g.index(i + 1, j + 1)]);
}

}  // namespace gammaphase
