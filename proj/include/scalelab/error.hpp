#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace scalelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by cholesky() when a pivot is not strictly positive.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::size_t pivot, double value)
      : Error("matrix is not positive definite: pivot " + std::to_string(pivot) +
              " has value " + std::to_string(value)),
        pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

enum class DivergenceCause { NaN, Inf, PDFailure };

std::string_view to_string(DivergenceCause cause);

/// Signals that training produced values it cannot continue from.
class Diverged : public Error {
 public:
  Diverged(DivergenceCause cause, const std::string& detail)
      : Error("diverged (" + std::string(to_string(cause)) + "): " + detail), cause_(cause) {}

  DivergenceCause cause() const noexcept { return cause_; }

 private:
  DivergenceCause cause_;
};

}  // namespace scalelab
