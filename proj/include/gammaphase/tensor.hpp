// tensor.hpp
// Elastic stiffness on symmetric 2x2 matrices, lattice misfit, rank-one
// compatibility between the two strain wells, and the normalising change of
// variables that maps any det(e0) < 0 misfit onto e_x⊗e_y + e_y⊗e_x.
//
// Symmetric matrices are represented in the orthonormal basis
//   E1 = e_x⊗e_x, E2 = e_y⊗e_y, E3 = (e_x⊗e_y + e_y⊗e_x)/√2,
// so that the 3x3 stiffness matrix is similar to the tensor action and its
// eigenvalues are the coercivity constants.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gammaphase/errors.hpp"
#include "gammaphase/grid.hpp"
#include "gammaphase/wellmodel.hpp"

namespace gammaphase {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Vec3 to_voigt(const Mat2& xi) {
  return {xi(0, 0), xi(1, 1), std::numbers::sqrt2 * 0.5 * (xi(0, 1) + xi(1, 0))};
}

inline Mat2 from_voigt(const Vec3& v) {
  const double off = v(2) / std::numbers::sqrt2;
  Mat2 m;
  m << v(0), off, off, v(1);
  return m;
}

inline Mat2 sym(const Mat2& xi) { return 0.5 * (xi + xi.transpose()); }

/// Skew matrix [[0, s], [-s, 0]].
inline Mat2 skew_matrix(double s) {
  Mat2 m;
  m << 0.0, s, -s, 0.0;
  return m;
}

class Stiffness {
 public:
  /// Validates major symmetry and positive definiteness of the 3x3 representation.
  explicit Stiffness(const Mat3& entries) : c_(entries) {
    if ((c_ - c_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, c_.cwiseAbs().maxCoeff())) {
      throw ParameterError("stiffness matrix is not symmetric");
    }
    c_ = 0.5 * (c_ + c_.transpose());
    if (!(min_eigenvalue() > 0.0)) throw ParameterError("stiffness matrix is not positive definite");
  }

  const Mat3& matrix() const { return c_; }

  Vec3 eigenvalues() const { return Eigen::SelfAdjointEigenSolver<Mat3>(c_).eigenvalues(); }
  double min_eigenvalue() const { return eigenvalues().minCoeff(); }

  /// C(ξ) for symmetric ξ, returned as a matrix.
  Mat2 apply(const Mat2& xi) const { return from_voigt(c_ * to_voigt(xi)); }

 private:
  Mat3 c_;
};

/// C(ξ) = 2 mu ξ + lambda tr(ξ) I.
inline Stiffness isotropic_stiffness(double lambda, double mu) {
  if (!(mu > 0.0) || !(lambda + mu > 0.0)) {
    throw ParameterError("isotropic stiffness needs mu > 0 and lambda + mu > 0");
  }
  Mat3 c;
  c << 2.0 * mu + lambda, lambda, 0.0,  //
      lambda, 2.0 * mu + lambda, 0.0,   //
      0.0, 0.0, 2.0 * mu;
  return Stiffness(c);
}

/// C(sym ξ) : sym ξ. Skew input contributes nothing.
inline double quad_form(const Stiffness& c, const Mat2& xi) {
  const Vec3 v = to_voigt(xi);
  return v.dot(c.matrix() * v);
}

/// Symmetric lattice misfit, stored as its three independent entries.
struct Misfit {
  double xx = 0.0, xy = 1.0, yy = 0.0;

  static Misfit from_matrix(const Mat2& m) { return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), m(1, 1)}; }
  Mat2 matrix() const {
    Mat2 m;
    m << xx, xy, xy, yy;
    return m;
  }
  double det() const { return xx * yy - xy * xy; }
  Vec3 voigt() const { return to_voigt(matrix()); }
};

inline constexpr double kDetTolerance = 1e-12;

/// (mu1 - mu0) e0 + S_ν = a ⊗ ν with S_ν = [[0, s], [-s, 0]].
struct RankOneConnection {
  double s = 0.0;
  Vec2 nu = Vec2::UnitY();
  Vec2 a = Vec2::Zero();
  double delta = 0.0;

  /// Angle of ν in [0, π).
  double angle() const { return std::atan2(nu.y(), nu.x()); }
  Mat2 skew() const { return skew_matrix(s); }
  /// Frobenius norm of delta e0 + S_ν - a ⊗ ν; zero for an exact connection.
  double residual(const Misfit& e0) const {
    return (delta * e0.matrix() + skew() - a * nu.transpose()).norm();
  }
};

namespace detail {

/// Flips (ν, a) so that ν has angle in [0, π); ν = -e_x maps to e_x.
inline void canonicalize(RankOneConnection& c) {
  if (c.nu.y() < 0.0 || (c.nu.y() == 0.0 && c.nu.x() < 0.0)) {
    c.nu = -c.nu;
    c.a = -c.a;
  }
  if (c.nu.y() == 0.0) c.nu.y() = 0.0;  // drop a negative zero
}

}  // namespace detail

/// Rank-one connections between the wells mu0 e0 and mu1 e0: two normals when det(e0) < 0,
/// one when det(e0) = 0 (within 1e-12). Sorted by normal angle in [0, π).
inline std::vector<RankOneConnection> compatibility(const Misfit& e0, const WellAnalysis& w) {
  if (!w.double_well()) throw ParameterError("compatibility requires a double-well analysis");
  const double det = e0.det();
  if (det > kDetTolerance) {
    throw IncompatibleMisfit("det(e0) = " + std::to_string(det) + " > 0: no rank-one connection");
  }
  if (e0.matrix().norm() == 0.0) throw ParameterError("compatibility: zero misfit");
  const double delta = w.gap();
  std::vector<double> skews;
  if (std::abs(det) <= kDetTolerance) {
    skews = {0.0};
  } else {
    const double s = delta * std::sqrt(-det);
    skews = {s, -s};
  }
  std::vector<RankOneConnection> out;
  for (double s : skews) {
    const Mat2 m = delta * e0.matrix() + skew_matrix(s);
    // Rank one: both rows are multiples of ν.
    const Vec2 r0 = m.row(0).transpose();
    const Vec2 r1 = m.row(1).transpose();
    const Vec2 row = r0.norm() >= r1.norm() ? r0 : r1;
    RankOneConnection c;
    c.s = s;
    c.delta = delta;
    c.nu = row.normalized();
    c.a = m * c.nu;
    detail::canonicalize(c);
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const RankOneConnection& l, const RankOneConnection& r) { return l.angle() < r.angle(); });
  return out;
}

/// Least-squares connection for an arbitrary unit normal: minimises
/// ‖delta e0 + S_ν - a ⊗ ν‖_F over (s, a). The minimum is delta |τ·e0 τ| with τ ⊥ ν,
/// so the residual vanishes exactly for the compatible normals.
inline RankOneConnection best_connection(const Misfit& e0, const WellAnalysis& w, const Vec2& normal) {
  if (!w.double_well()) throw ParameterError("best_connection requires a double-well analysis");
  RankOneConnection c;
  c.delta = w.gap();
  c.nu = normal.normalized();
  const Vec2 tangent(-c.nu.y(), c.nu.x());
  c.s = -c.delta * c.nu.dot(e0.matrix() * tangent);
  c.a = (c.delta * e0.matrix() + skew_matrix(c.s)) * c.nu;
  detail::canonicalize(c);
  return c;
}

inline Mat2 rotation(double theta) {
  Mat2 r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

/// Stiffness seen in coordinates rotated by the orthogonal q:
/// C̃(v):w = C(q v qᵀ):(q w qᵀ).
inline Stiffness transformed_stiffness(const Stiffness& c, const Mat2& q) {
  Mat3 t;
  for (int k = 0; k < 3; ++k) {
    const Mat2 basis = from_voigt(Vec3::Unit(k));
    t.col(k) = to_voigt(q * basis * q.transpose());
  }
  return Stiffness(t.transpose() * c.matrix() * t);
}

struct NormalizationMaps {
  Mat2 rbar = Mat2::Identity();
  Mat2 dscale = Mat2::Identity();
  Mat2 qbar = Mat2::Identity();
  /// det(qbarᵀ): the factor relating the original and the transformed energies.
  double jacobian = 1.0;
  /// C̃(v):w = C(qbar v qbarᵀ):(qbar w qbarᵀ).
  Stiffness ctilde = Stiffness(Mat3::Identity());

  /// qbarᵀ D⁻¹ rbarᵀ e0 rbar D⁻¹ qbar.
  Mat2 forward(const Mat2& e0) const {
    const Mat2 dinv = dscale.inverse();
    return qbar.transpose() * dinv * rbar.transpose() * e0 * rbar * dinv * qbar;
  }
  Mat2 inverse(const Mat2& e0_tilde) const {
    return rbar * dscale * qbar * e0_tilde * qbar.transpose() * dscale * rbar.transpose();
  }
  /// Composite linear map rbar D⁻¹ qbar.
  Mat2 composite() const { return rbar * dscale.inverse() * qbar; }
};

/// Orthogonal rbar diagonalises e0 to diag(λ₋, λ₊); D = diag(√|λ₋|, √λ₊) rescales it to
/// diag(-1, 1); qbar, the rotation by π/4, takes diag(-1, 1) to [[0, 1], [1, 0]].
inline NormalizationMaps normalize_misfit(const Misfit& e0, const Stiffness& c = Stiffness(Mat3::Identity())) {
  if (!(e0.det() < -kDetTolerance)) {
    throw IncompatibleMisfit("normalize_misfit needs det(e0) < 0, got " + std::to_string(e0.det()));
  }
  Eigen::SelfAdjointEigenSolver<Mat2> eig(e0.matrix());
  const Vec2 lambda = eig.eigenvalues();
  Mat2 r = eig.eigenvectors();
  if (r(0, 0) < 0.0 || (r(0, 0) == 0.0 && r(1, 0) < 0.0)) r.col(0) = -r.col(0);
  if (r.determinant() < 0.0) r.col(1) = -r.col(1);
  NormalizationMaps maps;
  maps.rbar = r;
  maps.dscale = Vec2(std::sqrt(-lambda(0)), std::sqrt(lambda(1))).asDiagonal();
  maps.qbar = rotation(std::numbers::pi / 4.0);
  maps.jacobian = maps.qbar.transpose().determinant();
  maps.ctilde = transformed_stiffness(c, maps.qbar);
  return maps;
}

/// Removes the skew-affine part R_φ̄ z + ā of a displacement: φ̄ is the mean skew part
/// of the cell-centred gradient and ā makes the trapezoid mean vanish.
inline VectorField skew_normalize(const VectorField& u, const Grid& g) {
  double phi = 0.0;
  for (int j = 0; j + 1 < g.ny; ++j) {
    double row = 0.0;
    for (int i = 0; i + 1 < g.nx; ++i) {
      const Mat2 grad = cell_gradient(u, g, i, j);
      row += 0.5 * (grad(1, 0) - grad(0, 1));
    }
    phi += row;
  }
  phi /= static_cast<double>(g.cells());
  VectorField v = u;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.index(i, j);
      // R_φ z = (-φ y, φ x)
      v.x[k] += phi * g.y(j);
      v.y[k] -= phi * g.x(i);
    }
  }
  const double mx = field_mean(v.x, g);
  const double my = field_mean(v.y, g);
  for (std::size_t k = 0; k < v.size(); ++k) {
    v.x[k] -= mx;
    v.y[k] -= my;
  }
  return v;
}

}  // namespace gammaphase
