#pragma once

// Gradient self-check suites run by the `gradcheck` command and the tests.

#include <cstdint>
#include <string>
#include <vector>

namespace muvit {

inline constexpr double kGradcheckThreshold = 1e-5;

struct GradcheckRow {
  std::string scope;
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double eps = 0.0;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;
  std::vector<std::string> unverified;
  bool passed = false;
};

/// scope: "ops", "blocks" or "model". Every case runs in double precision
/// with fourth-order central differences (eps 1e-4) against a random
/// projection of the output. The model case (eps 1e-3) samples two elements
/// per tensor, redrawing elements whose stencil crosses a ReLU/max-pool
/// branch; it fails if some tensor ends with no smooth element. Throws ConfigError for an
/// unknown scope.
std::vector<GradcheckRow> gradcheck_scope(const std::string& scope, double threshold = kGradcheckThreshold,
                                          std::uint64_t seed = 0);

}  // namespace muvit
