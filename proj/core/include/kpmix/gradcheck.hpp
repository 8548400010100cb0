#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kpmix/rng.hpp"

namespace kpmix {

// Forward value plus a signature of the signs feeding any |.| terms. A probe
// whose signature differs between the two finite-difference evaluations
// crossed a kink and is excluded from the comparison, not failed.
struct ProbeValue {
  double value = 0.0;
  std::vector<int8_t> kink_signs;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int probes_used = 0;
  int probes_excluded = 0;
};

// Central finite differences against a reverse-mode gradient on `probes`
// random coordinates. Relative error denominator is max(|a|, |b|, 1e-8).
//
// noise_floor handles coordinates whose gradient sits below the central
// difference's own rounding noise (|f| eps_machine / eps): when both the
// difference quotient and the analytic value are under the floor the probe
// carries no relative signal and is excluded (reported, like a kink probe),
// but the two must still agree within the floor absolutely or the probe
// counts as failed. 0 disables the guard.
GradCheckResult grad_check(
    const std::function<ProbeValue(std::span<const double>)>& value_fn,
    const std::function<void(std::span<const double>, std::span<double>)>& grad_fn,
    std::span<double> params, double eps, int probes, Rng& rng, double noise_floor = 0.0);

}  // namespace kpmix
