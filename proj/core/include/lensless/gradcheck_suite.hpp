#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lensless {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

/// Finite-difference checks of every tape primitive, the wavelet tape ops,
/// the networks and the training losses on small random inputs.
std::vector<GradCheckResult> run_gradcheck_suite(double tolerance = 1e-4, double h = 1e-5,
                                                 std::uint64_t seed = 11);

}  // namespace lensless
