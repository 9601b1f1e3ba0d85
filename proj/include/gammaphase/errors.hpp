// errors.hpp
// Exception types shared by every gammaphase module.

#pragma once

#include <stdexcept>
#include <string>

namespace gammaphase {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the admissible domain of a function (e.g. s outside [0,1]).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Physical parameters that violate positivity requirements.
class ParameterError : public Error {
 public:
  using Error::Error;
};

class QuadratureError : public Error {
 public:
  using Error::Error;
};

/// Misfit matrix with det(e0) > 0 (no rank-one connection exists).
class IncompatibleMisfit : public Error {
 public:
  using Error::Error;
};

/// Iterative solver exceeded its iteration cap.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// No energy decrease after the maximal number of step halvings.
class StepFailure : public Error {
 public:
  using Error::Error;
};

/// Inadmissible laminate geometry (overlapping transitions, bad normal, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Target mass outside the range reachable by a construction.
class RangeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gammaphase
