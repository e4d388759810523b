#pragma once

#include <cstddef>
#include <string>

#include "lrb/rng.hpp"

namespace lrb {

struct CheckResult {
  bool passed = false;
  double worst = 0.0;  // worst relative error (grad/ensemble) or z-score (kl)
  std::string detail;  // names the offending quantity on failure
};

/// Central finite differences (step 1e-5) against the analytic gradients of
/// the fixed-noise free energy, over every trainable scalar of randomized
/// small masked networks. Relative error uses a unit floor so near-zero
/// entries are compared absolutely.
CheckResult grad_selfcheck(std::size_t num_nets, double tolerance, RngStream rng);

/// Closed-form diagonal-Gaussian KL against a Monte Carlo estimate of
/// E_q[log q - log p], within 3 standard errors per pair, plus the exact
/// N(1,1) || N(0,1) = 0.5 identity.
CheckResult kl_selfcheck(std::size_t num_pairs, std::size_t num_samples, RngStream rng);

/// Tiled ensemble prediction against an explicit loop over the same mask
/// draws; the two routes must agree exactly.
CheckResult ensemble_selfcheck(RngStream rng);

}  // namespace lrb
