#include "kpmix/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kpmix {

GradCheckResult grad_check(
    const std::function<ProbeValue(std::span<const double>)>& value_fn,
    const std::function<void(std::span<const double>, std::span<double>)>& grad_fn,
    std::span<double> params, double eps, int probes, Rng& rng, double noise_floor) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  if (params.empty()) throw std::invalid_argument("grad_check: no parameters");

  std::vector<double> analytic(params.size(), 0.0);
  grad_fn(params, analytic);

  GradCheckResult res;
  for (int p = 0; p < probes; ++p) {
    const size_t idx = static_cast<size_t>(rng.uniform_int(static_cast<int>(params.size())));
    const double saved = params[idx];

    params[idx] = saved + eps;
    const ProbeValue plus = value_fn(params);
    params[idx] = saved - eps;
    const ProbeValue minus = value_fn(params);
    params[idx] = saved;

    if (plus.kink_signs != minus.kink_signs) {
      ++res.probes_excluded;
      continue;
    }
    const double fd = (plus.value - minus.value) / (2.0 * eps);
    const double a = analytic[idx];
    if (noise_floor > 0.0 && std::abs(fd) < noise_floor && std::abs(a) < noise_floor &&
        std::abs(fd - a) <= noise_floor) {
      ++res.probes_excluded;
      continue;
    }
    const double denom = std::max({std::abs(fd), std::abs(a), 1e-8});
    res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - a) / denom);
    ++res.probes_used;
  }
  return res;
}

}  // namespace kpmix
