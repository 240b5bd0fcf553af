#pragma once

#include <stdexcept>
#include <string>

namespace lensless {

/// Malformed or missing input data: bad files, shape mismatches, invalid parameters.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced NaN/Inf or diverged.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lensless
