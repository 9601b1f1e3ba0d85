// construct.hpp
// Explicit competitors for I_eps: the sharp reference pair across one rank-one
// interface, parallel laminates and their sharp energy, the regularised one-dimensional
// profile φ(s) = ∫_{mu0}^s eps / sqrt(eps + W(r)) dr, and recovery pairs
// c = φ⁻¹(d + shift), u = mu0 e0 z + (a/delta) ∫_0^{z·ν} (c - mu0) dt.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gammaphase/errors.hpp"
#include "gammaphase/field.hpp"
#include "gammaphase/grid.hpp"
#include "gammaphase/quadrature.hpp"
#include "gammaphase/tensor.hpp"
#include "gammaphase/wellmodel.hpp"

namespace gammaphase {

enum class WellMode { ChemOnly, Shifted };

inline const char* to_string(WellMode m) { return m == WellMode::ChemOnly ? "chem-only" : "shifted"; }

// ---------------------------------------------------------------------------
// Profile

/// Tabulated φ on [mu0, mu1] with exact slopes φ' = eps / sqrt(eps + W).
class ProfileSpec {
 public:
  static constexpr int kTablePoints = 4096;

  /// W(s) = f(s) + elastic_coeff (s - mu0)², where elastic_coeff is zero for ChemOnly.
  ProfileSpec(const ChemParams& p, const WellAnalysis& w, double epsilon, WellMode mode, double elastic_coeff)
      : chem_(p), wells_(w), epsilon_(epsilon), mode_(mode), coeff_(mode == WellMode::Shifted ? elastic_coeff : 0.0) {
    if (!(epsilon > 0.0)) throw ParameterError("build_profile: epsilon must be positive");
    if (!w.double_well()) throw ParameterError("build_profile requires a double-well potential");
    s_.resize(kTablePoints);
    phi_.resize(kTablePoints);
    slope_.resize(kTablePoints);
    const double h = (w.mu1 - w.mu0) / (kTablePoints - 1);
    for (int k = 0; k < kTablePoints; ++k) {
      s_[k] = k + 1 == kTablePoints ? w.mu1 : w.mu0 + k * h;
      slope_[k] = derivative(s_[k]);
    }
    phi_[0] = 0.0;
    for (int k = 1; k < kTablePoints; ++k) {
      const double piece = quadrature::gauss_legendre5([this](double r) { return derivative(r); }, s_[k - 1], s_[k]);
      if (!std::isfinite(piece)) throw QuadratureError("build_profile: non-finite integrand");
      phi_[k] = phi_[k - 1] + piece;
    }
  }

  double epsilon() const { return epsilon_; }
  WellMode mode() const { return mode_; }
  double mu0() const { return wells_.mu0; }
  double mu1() const { return wells_.mu1; }
  /// φ(mu1): the width of the transition layer.
  double width() const { return phi_.back(); }

  double well(double s) const {
    const double d = s - wells_.mu0;
    return eval_f(chem_, wells_, s) + coeff_ * d * d;
  }
  double derivative(double s) const { return epsilon_ / std::sqrt(epsilon_ + well(s)); }

  /// φ(s) for s in [mu0, mu1], clamped outside.
  double phi(double s) const {
    if (s <= s_.front()) return 0.0;
    if (s >= s_.back()) return phi_.back();
    const std::size_t k = interval_of_s(s);
    return phi_[k] + quadrature::gauss_legendre5([this](double r) { return derivative(r); }, s_[k], s);
  }

  /// φ⁻¹ extended by the constants mu0 (t ≤ 0) and mu1 (t ≥ φ(mu1)).
  double inverse(double t) const {
    if (!(t > 0.0)) return wells_.mu0;
    if (t >= phi_.back()) return wells_.mu1;
    const auto it = std::upper_bound(phi_.begin(), phi_.end(), t);
    const std::size_t k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - phi_.begin())) - 1;
    // Cubic Hermite for s(φ) with slopes 1/φ'.
    const double t0 = phi_[k], t1 = phi_[k + 1], dt = t1 - t0;
    const double x = (t - t0) / dt;
    const double h00 = (1 + 2 * x) * (1 - x) * (1 - x), h10 = x * (1 - x) * (1 - x);
    const double h01 = x * x * (3 - 2 * x), h11 = x * x * (x - 1);
    double s = h00 * s_[k] + h10 * dt / slope_[k] + h01 * s_[k + 1] + h11 * dt / slope_[k + 1];
    s = std::clamp(s, s_[k], s_[k + 1]);
    // One Newton correction against the quadrature value of φ.
    const double r = phi_[k] + quadrature::gauss_legendre5([this](double q) { return derivative(q); }, s_[k], s) - t;
    s = std::clamp(s - r / derivative(s), s_[k], s_[k + 1]);
    return s;
  }

  /// ∫_0^{width} (1 - θ(φ⁻¹(t))) dt with θ = (c - mu0)/(mu1 - mu0): the distance from the
  /// start of the layer to the position of an equal-mass sharp interface.
  double centroid() const {
    const double delta = wells_.gap();
    double sum = 0.0;
    for (std::size_t k = 1; k < s_.size(); ++k)
      sum += quadrature::gauss_legendre5(
          [&](double s) { return (1.0 - (s - wells_.mu0) / delta) * derivative(s); }, s_[k - 1], s_[k]);
    return sum;
  }

 private:
  std::size_t interval_of_s(double s) const {
    const auto it = std::upper_bound(s_.begin(), s_.end(), s);
    return std::min<std::size_t>(static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - s_.begin())) - 1,
                                 s_.size() - 2);
  }

  ChemParams chem_;
  WellAnalysis wells_;
  double epsilon_;
  WellMode mode_;
  double coeff_;
  std::vector<double> s_, phi_, slope_;
};

inline ProfileSpec build_profile(const WellAnalysis& w, const ChemParams& p, double epsilon,
                                 WellMode mode = WellMode::ChemOnly, double elastic_coeff = 0.0) {
  return ProfileSpec(p, w, epsilon, mode, elastic_coeff);
}

/// Profile for `m`; the Shifted well uses W = f + C((s - mu0) e0):((s - mu0) e0).
inline ProfileSpec build_profile(const Material& m, WellMode mode = WellMode::ChemOnly) {
  return ProfileSpec(m.chem, m.wells, m.epsilon, mode, quad_form(m.stiffness, m.e0.matrix()));
}

// ---------------------------------------------------------------------------
// Reference pair and laminates

struct PointPair {
  Vec2 u;
  double c;
};

/// ū = mu0 e0 z, c̄ = mu0 for z·ν < 0; ū = (mu1 e0 + S_ν) z, c̄ = mu1 for z·ν > 0.
/// Points on the interface take the lower branch (both branches agree there).
inline PointPair reference_pair(const RankOneConnection& conn, const WellAnalysis& w, const Misfit& e0,
                                const Vec2& z) {
  if (z.dot(conn.nu) <= 0.0) return {w.mu0 * (e0.matrix() * z), w.mu0};
  return {(w.mu1 * e0.matrix() + conn.skew()) * z, w.mu1};
}

/// Parallel interfaces {z·ν = offsets[k]} inside `domain`. phase0 is the value of c on
/// the side z·ν < offsets[0]; phases alternate across each interface.
struct Laminate {
  Vec2 normal = Vec2::UnitY();
  std::vector<double> offsets;
  double phase0 = 0.0;
  Rect domain;
};

/// Length of the chord {z·ν = t} ∩ domain.
inline double chord_length(const Rect& r, const Vec2& nu, double t) {
  const Vec2 n = nu.normalized();
  const Vec2 base = t * n;
  const Vec2 tau(-n.y(), n.x());
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  const auto clip = [&](double p, double d, double a, double b) {
    if (std::abs(d) < 1e-15) {
      if (p < a || p > b) hi = lo - 1.0;
      return;
    }
    double s0 = (a - p) / d, s1 = (b - p) / d;
    if (s0 > s1) std::swap(s0, s1);
    lo = std::max(lo, s0);
    hi = std::min(hi, s1);
  };
  clip(base.x(), tau.x(), r.x0, r.x1);
  clip(base.y(), tau.y(), r.y0, r.y1);
  return hi > lo ? hi - lo : 0.0;
}

/// I_0 of a laminate for an interfacial density kappa: kappa times the total chord length.
inline double sharp_energy(const Laminate& lam, double kappa) {
  double len = 0.0;
  for (double t : lam.offsets) len += chord_length(lam.domain, lam.normal, t);
  return kappa * len;
}

/// Checks unit normal, increasing offsets and a well-valued phase0; with `conns` given,
/// the normal must be one of the compatible normals (up to sign).
inline void validate_laminate(const Laminate& lam, const WellAnalysis& w,
                              const std::vector<RankOneConnection>* conns = nullptr) {
  if (std::abs(lam.normal.norm() - 1.0) > 1e-12) throw GeometryError("laminate: normal must be a unit vector");
  for (std::size_t k = 1; k < lam.offsets.size(); ++k)
    if (!(lam.offsets[k] > lam.offsets[k - 1])) throw GeometryError("laminate: offsets must be strictly increasing");
  if (!(std::abs(lam.phase0 - w.mu0) <= 1e-12 || std::abs(lam.phase0 - w.mu1) <= 1e-12)) {
    throw GeometryError("laminate: phase0 must be mu0 or mu1");
  }
  if (!(lam.domain.width() > 0.0 && lam.domain.height() > 0.0)) throw GeometryError("laminate: empty domain");
  if (conns != nullptr) {
    const bool ok = std::any_of(conns->begin(), conns->end(), [&](const RankOneConnection& c) {
      return std::abs(std::abs(c.nu.dot(lam.normal)) - 1.0) <= 1e-10;
    });
    if (!ok) throw GeometryError("laminate: normal is not rank-one compatible with e0");
  }
}

/// Signed distance along ν to the nearest interface: negative where the laminate takes
/// mu0, positive where it takes mu1. ±infinity without interfaces.
inline double laminate_distance(const Laminate& lam, const WellAnalysis& w, double t) {
  const bool start_low = std::abs(lam.phase0 - w.mu0) <= std::abs(lam.phase0 - w.mu1);
  const std::size_t crossed = static_cast<std::size_t>(
      std::upper_bound(lam.offsets.begin(), lam.offsets.end(), t) - lam.offsets.begin());
  const bool low = (crossed % 2 == 0) == start_low;
  if (lam.offsets.empty()) return low ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  double dist = std::numeric_limits<double>::infinity();
  for (double o : lam.offsets) dist = std::min(dist, std::abs(t - o));
  return low ? -dist : dist;
}

namespace detail {

inline void check_spacing(const Laminate& lam, double epsilon) {
  const double min_gap = 4.0 * std::sqrt(epsilon);
  for (std::size_t k = 1; k < lam.offsets.size(); ++k)
    if (lam.offsets[k] - lam.offsets[k - 1] < min_gap) {
      throw GeometryError("recovery: interfaces " + std::to_string(lam.offsets[k - 1]) + " and " +
                          std::to_string(lam.offsets[k]) + " closer than 4 sqrt(eps)");
    }
}

/// Fills c = profile(t) at every node, t = z·ν, and u = mu0 e0 z + (a/delta) ∫_0^t (c - mu0).
template <typename Profile>
FieldPair build_along_normal(const Grid& g, const Vec2& nu, const Vec2& a, double delta, double mu0,
                             const Misfit& e0, Profile profile) {
  FieldPair fp(g);
  double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
  for (int j = 0; j < g.ny; j += g.ny - 1)
    for (int i = 0; i < g.nx; i += g.nx - 1) {
      const double t = g.node(i, j).dot(nu);
      tmin = std::min(tmin, t);
      tmax = std::max(tmax, t);
    }
  tmin = std::min(tmin, 0.0);
  tmax = std::max(tmax, 0.0);
  const double dt = std::min(g.hx(), g.hy()) / 16.0;
  const int m = std::max(2, static_cast<int>(std::ceil((tmax - tmin) / dt)) + 1);
  const double step = (tmax - tmin) / (m - 1);
  std::vector<double> cum(m, 0.0);
  double prev = profile(tmin) - mu0;
  for (int k = 1; k < m; ++k) {
    const double cur = profile(tmin + k * step) - mu0;
    cum[k] = cum[k - 1] + 0.5 * step * (prev + cur);
    prev = cur;
  }
  const auto integral = [&](double t) {
    const double x = std::clamp((t - tmin) / step, 0.0, static_cast<double>(m - 1));
    const int k = std::min(static_cast<int>(x), m - 2);
    const double f = x - k;
    return (1.0 - f) * cum[k] + f * cum[k + 1];
  };
  const double at_zero = integral(0.0);
  const Mat2 base = mu0 * e0.matrix();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.index(i, j);
      const Vec2 z = g.node(i, j);
      const double t = z.dot(nu);
      fp.c[k] = profile(t);
      const Vec2 u = base * z + (a / delta) * (integral(t) - at_zero);
      fp.u.x[k] = u.x();
      fp.u.y[k] = u.y();
    }
  return fp;
}

}  // namespace detail

/// Recovery pair for a laminate: c = φ⁻¹(d + shift), with the displacement built from the
/// connection so that e(u) = c e0 holds in the continuum.
inline FieldPair recovery_pair(const Laminate& lam, const RankOneConnection& conn, const ProfileSpec& spec,
                               const Grid& g, const WellAnalysis& w, const Misfit& e0, double shift = 0.0) {
  if (std::abs(std::abs(lam.normal.dot(conn.nu)) - 1.0) > 1e-10) {
    throw GeometryError("recovery: laminate normal does not match the connection normal");
  }
  detail::check_spacing(lam, spec.epsilon());
  const Vec2 nu = lam.normal.normalized();
  // Orient a with the laminate normal so that a ⊗ ν is unchanged.
  const Vec2 a = conn.nu.dot(nu) > 0.0 ? conn.a : Vec2(-conn.a);
  return detail::build_along_normal(g, nu, a, conn.delta, w.mu0, e0, [&](double t) {
    return spec.inverse(laminate_distance(lam, w, t) + shift);
  });
}

struct TunedRecovery {
  FieldPair pair;
  double shift = 0.0;
  double mean = 0.0;
};

namespace detail {

/// Bisection on shift ∈ [0, width] for mean(build(shift)) = m.
template <typename Build>
TunedRecovery tune_shift(const Grid& g, double width, double m, Build build) {
  constexpr double kTol = 1e-12;
  TunedRecovery lo{build(0.0), 0.0, 0.0};
  lo.mean = field_mean(lo.pair.c, g);
  if (std::abs(lo.mean - m) <= kTol) return lo;
  TunedRecovery hi{build(width), width, 0.0};
  hi.mean = field_mean(hi.pair.c, g);
  if (std::abs(hi.mean - m) <= kTol) return hi;
  if (m < lo.mean || m > hi.mean) {
    throw RangeError("mass tuning: target mean " + std::to_string(m) + " outside [" + std::to_string(lo.mean) +
                     ", " + std::to_string(hi.mean) + "]");
  }
  double a = 0.0, b = width;
  TunedRecovery best = std::abs(lo.mean - m) < std::abs(hi.mean - m) ? lo : hi;
  for (int it = 0; it < 200 && b - a > 0.0; ++it) {
    const double mid = 0.5 * (a + b);
    if (mid == a || mid == b) break;
    TunedRecovery cur{build(mid), mid, 0.0};
    cur.mean = field_mean(cur.pair.c, g);
    if (std::abs(cur.mean - m) < std::abs(best.mean - m)) best = cur;
    if (std::abs(cur.mean - m) <= kTol) break;
    if (cur.mean < m) {
      a = mid;
    } else {
      b = mid;
    }
  }
  return best;
}

}  // namespace detail

/// Recovery pair whose shift is chosen by bisection so that the trapezoid mean of c is m.
inline TunedRecovery mass_tuned_recovery(const Laminate& lam, const RankOneConnection& conn, const ProfileSpec& spec,
                                         const Grid& g, const WellAnalysis& w, const Misfit& e0, double m) {
  return detail::tune_shift(g, spec.width(), m,
                            [&](double s) { return recovery_pair(lam, conn, spec, g, w, e0, s); });
}

/// Small-mass construction around a ball: c = φ⁻¹(eta - |z - z0| + shift) with
/// pi eta² = (m - mu0) |domain| / delta, u = mu0 e0 z. The disc B(z0, 2 eta) must lie
/// inside the grid rectangle.
struct BallRecovery {
  TunedRecovery tuned;
  double eta = 0.0;
};

inline BallRecovery ball_recovery(const ProfileSpec& spec, const Grid& g, const WellAnalysis& w, const Misfit& e0,
                                  double m, const Vec2& z0) {
  const Rect r = g.bounds();
  if (!(m > w.mu0)) throw RangeError("ball recovery: mass must exceed mu0");
  const double eta = std::sqrt((m - w.mu0) * r.area() / (w.gap() * std::numbers::pi));
  if (z0.x() - 2 * eta < r.x0 || z0.x() + 2 * eta > r.x1 || z0.y() - 2 * eta < r.y0 || z0.y() + 2 * eta > r.y1) {
    throw GeometryError("ball recovery: B(z0, 2 eta) leaves the domain");
  }
  const auto build = [&](double shift) {
    FieldPair fp(g);
    const Mat2 base = w.mu0 * e0.matrix();
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const std::size_t k = g.index(i, j);
        const Vec2 z = g.node(i, j);
        fp.c[k] = spec.inverse(eta - (z - z0).norm() + shift);
        const Vec2 u = base * z;
        fp.u.x[k] = u.x();
        fp.u.y[k] = u.y();
      }
    return fp;
  };
  return {detail::tune_shift(g, spec.width(), m, build), eta};
}

/// Field of reference_pair values on every node.
inline FieldPair reference_field(const RankOneConnection& conn, const WellAnalysis& w, const Misfit& e0,
                                 const Grid& g) {
  FieldPair fp(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const PointPair p = reference_pair(conn, w, e0, g.node(i, j));
      const std::size_t k = g.index(i, j);
      fp.c[k] = p.c;
      fp.u.x[k] = p.u.x();
      fp.u.y[k] = p.u.y();
    }
  return fp;
}

}  // namespace gammaphase
