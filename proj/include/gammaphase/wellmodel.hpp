// wellmodel.hpp
// Regular-solution chemical free energy, its well structure, and the
// one-dimensional geodesic distance that sets the interfacial cost.
//
// Energies are dimensionless: omega and kt share one (arbitrary) unit.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "gammaphase/errors.hpp"
#include "gammaphase/quadrature.hpp"

namespace gammaphase {

/// omega: enthalpy-of-mixing coefficient (any sign). kt: Boltzmann constant times
/// temperature, kt > 0.
struct ChemParams {
  double omega = 3.0;
  double kt = 1.0;
};

enum class WellKind { SingleWell, DoubleWell };

inline const char* to_string(WellKind kind) {
  return kind == WellKind::DoubleWell ? "DoubleWell" : "SingleWell";
}

/// Result of the well classification. mu0/mu1 are meaningful only for DoubleWell.
struct WellAnalysis {
  WellKind kind = WellKind::SingleWell;
  double mu0 = 0.5;
  double mu1 = 0.5;
  double fmin = 0.0;

  bool double_well() const { return kind == WellKind::DoubleWell; }
  double gap() const { return mu1 - mu0; }
};

namespace detail {

inline constexpr double kBoxTolerance = 1e-14;

inline double checked_concentration(double s, const char* who) {
  if (!(s >= -kBoxTolerance && s <= 1.0 + kBoxTolerance)) {
    throw DomainError(std::string(who) + ": concentration " + std::to_string(s) +
                      " outside [0, 1]");
  }
  return std::clamp(s, 0.0, 1.0);
}

inline double xlogx(double s) { return s > 0.0 ? s * std::log(s) : 0.0; }

/// log(s / (1 - s)), accurate near s = 1/2 where the two logarithms nearly cancel.
inline double log_odds(double s) {
  if (s > 0.25 && s < 0.75) return std::log1p((2.0 * s - 1.0) / (1.0 - s));
  return std::log(s) - std::log1p(-s);
}

}  // namespace detail

/// f̄(s) = omega s(1-s) + kt (s log s + (1-s) log(1-s)), with 0 log 0 = 0.
inline double eval_fbar(const ChemParams& p, double s) {
  s = detail::checked_concentration(s, "eval_fbar");
  return p.omega * s * (1.0 - s) + p.kt * (detail::xlogx(s) + detail::xlogx(1.0 - s));
}

/// Derivative of f̄ on the open interval (0, 1).
inline double eval_fbar_prime(const ChemParams& p, double s) {
  return p.omega * (1.0 - 2.0 * s) + p.kt * detail::log_odds(s);
}

/// Derivative with the argument clamped to [1e-13, 1 - 1e-13], where the
/// logarithmic singularity is still finite. Used by the solvers.
inline double eval_f_prime_clamped(const ChemParams& p, double s) {
  return eval_fbar_prime(p, std::clamp(s, 1e-13, 1.0 - 1e-13));
}

/// Classifies f̄ and locates its wells. DoubleWell iff omega > 2 kt; the lower well
/// is found by bisection of f̄' on [1e-12, 1/2 - 1e-12].
inline WellAnalysis analyze_wells(const ChemParams& p) {
  if (!(p.kt > 0.0)) throw ParameterError("analyze_wells: kt must be positive");
  WellAnalysis w;
  if (!(p.omega > 2.0 * p.kt)) {
    w.kind = WellKind::SingleWell;
    w.mu0 = w.mu1 = 0.5;
    w.fmin = eval_fbar(p, 0.5);
    return w;
  }
  double lo = 1e-12;
  double hi = 0.5 - 1e-12;
  // f̄' < 0 left of the lower well and > 0 between the well and 1/2.
  while (hi - lo > 1e-14) {
    const double mid = 0.5 * (lo + hi);
    if (eval_fbar_prime(p, mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  w.kind = WellKind::DoubleWell;
  w.mu0 = 0.5 * (lo + hi);
  w.mu1 = 1.0 - w.mu0;
  w.fmin = eval_fbar(p, w.mu0);
  return w;
}

/// Shifted well function f = f̄ - min f̄, clamped at zero.
inline double eval_f(const ChemParams& p, const WellAnalysis& w, double s) {
  s = detail::checked_concentration(s, "eval_f");
  return std::max(0.0, eval_fbar(p, s) - w.fmin);
}

/// d_I(s, s2) = |∫_s^s2 sqrt(f(r)) dr|. In one dimension the monotone path between the
/// endpoints realises the infimum over C¹ paths, so the distance is this integral.
inline double geodesic_distance(const ChemParams& p, const WellAnalysis& w, double s, double s2,
                                double tol = 1e-10, int max_depth = 40) {
  s = detail::checked_concentration(s, "geodesic_distance");
  s2 = detail::checked_concentration(s2, "geodesic_distance");
  const auto integrand = [&](double r) { return std::sqrt(eval_f(p, w, r)); };
  return std::abs(quadrature::adaptive_simpson(integrand, std::min(s, s2), std::max(s, s2), tol,
                                               max_depth));
}

/// Modica-Mortola surface tension 2 d_I(mu0, mu1).
inline double mm_constant(const ChemParams& p, const WellAnalysis& w) {
  if (!w.double_well()) throw ParameterError("mm_constant requires a double-well potential");
  return 2.0 * geodesic_distance(p, w, w.mu0, w.mu1);
}

}  // namespace gammaphase
