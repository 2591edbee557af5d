#pragma once
#include <cstdint>
#include <string>

#include "lcq/tensor.hpp"

namespace lcq {

// Randomized equivalence fuzz between the segmented quantizer and the
// exhaustive nearest-with-even-ties oracle, over low-rank codebooks built
// for every bit width in {2,3,4} and rank in {1,2,3}.
struct OracleFuzzReport {
  std::size_t cases = 0;
  std::size_t mismatches = 0;
  std::string first_mismatch;
};
OracleFuzzReport oracle_equivalence_fuzz(std::uint64_t seed, std::size_t target_cases);

// Finite-difference validation of the analytic block-loss gradients with
// respect to every unconstrained parameter, at seeded points kept away from
// quantizer selection boundaries. Runs on a small but complete block problem
// (all six layers, offset substitution, both loss terms).
struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t points = 100;
  double step = 1e-6;
  double tolerance = 1e-4;    // relative error bound for resolvable coordinates
  double margin = 1e-4;       // min distance of any normalized position to 1/2
  double sort_margin = 1e-5;  // min raw gap: keeps order stable and clear of the clamp
};
struct GradcheckReport {
  double max_rel_error = 0.0;       // over all resolvable coordinates
  std::size_t points_checked = 0;
  std::size_t attempts = 0;
  std::size_t coordinates = 0;      // per point
  std::size_t measured = 0;         // coordinate checks that met the resolution bar
  std::size_t below_resolution = 0; // gradients too small for f64 central differences
  double worst_analytic = 0.0;
  double worst_central = 0.0;
};
GradcheckReport gradcheck_suite(const GradcheckOptions& opts);

}  // namespace lcq
