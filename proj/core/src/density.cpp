#include "kpmix/density.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kpmix {

std::string to_string(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::laplace: return "laplace";
    case ComponentKind::gaussian: return "gaussian";
    case ComponentKind::cauchy: return "cauchy";
  }
  return "?";
}

ComponentKind parse_component_kind(const std::string& name) {
  if (name == "laplace") return ComponentKind::laplace;
  if (name == "gaussian") return ComponentKind::gaussian;
  if (name == "cauchy") return ComponentKind::cauchy;
  throw std::invalid_argument("unknown component kind: " + name);
}

std::string to_string(Precision p) {
  return p == Precision::single_prec ? "single" : "double";
}

Precision parse_precision(const std::string& name) {
  if (name == "single") return Precision::single_prec;
  if (name == "double") return Precision::double_prec;
  throw std::invalid_argument("unknown precision: " + name);
}

double ln_denorm_min(Precision p) {
  if (p == Precision::single_prec) {
    return std::log(static_cast<double>(std::numeric_limits<float>::denorm_min()));
  }
  return std::log(std::numeric_limits<double>::denorm_min());
}

DimSelection full_selection(int k_total) {
  DimSelection sel(static_cast<size_t>(k_total));
  for (int j = 0; j < k_total; ++j) sel[static_cast<size_t>(j)] = j;
  return sel;
}

double log_pdf_1d(ComponentKind kind, double x, double mu, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("log_pdf_1d: gamma must be positive");
  switch (kind) {
    case ComponentKind::laplace:
      return -std::log(2.0 * gamma) - std::abs(x - mu) / gamma;
    case ComponentKind::gaussian: {
      const double z = (x - mu) / gamma;
      return -0.5 * std::log(2.0 * M_PI * gamma * gamma) - 0.5 * z * z;
    }
    case ComponentKind::cauchy: {
      const double u = (x - mu) / gamma;
      return -std::log(M_PI * gamma) - std::log1p(u * u);
    }
  }
  return 0.0;
}

double joint_log_pdf(ComponentKind kind, std::span<const double> coords,
                     std::span<const double> mu, std::span<const double> gamma,
                     const DimSelection& sel) {
  double total = 0.0;
  for (int j : sel) {
    const size_t dx = 2 * static_cast<size_t>(j);
    total += log_pdf_1d(kind, coords[dx], mu[dx], gamma[dx]);
    total += log_pdf_1d(kind, coords[dx + 1], mu[dx + 1], gamma[dx + 1]);
  }
  return total;
}

namespace {

// ln pi_m + joint log pdf for every component; -inf marks pi_m = 0.
void component_log_terms(const MixtureField& field, const KeypointSet& gt,
                         const DimSelection& sel, ComponentKind kind,
                         std::vector<double>& out) {
  const int m = field.num_components;
  out.resize(static_cast<size_t>(m));
  const std::span<const double> coords(gt.coords);
  for (int i = 0; i < m; ++i) {
    const double pi = field.pi[static_cast<size_t>(i)];
    if (pi <= 0.0) {
      out[static_cast<size_t>(i)] = -std::numeric_limits<double>::infinity();
      continue;
    }
    out[static_cast<size_t>(i)] =
        std::log(pi) + joint_log_pdf(kind, coords, field.mu_row(i), field.gamma_row(i), sel);
  }
}

double log_sum_exp(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double t : terms) mx = std::max(mx, t);
  if (!std::isfinite(mx)) return mx;  // all -inf (or a stray +inf)
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace

double mixture_log_likelihood(const MixtureField& field, const KeypointSet& gt,
                              const DimSelection& sel, ComponentKind kind) {
  if (field.num_components < 1) throw std::invalid_argument("mixture_log_likelihood: empty field");
  if (sel.empty()) throw std::invalid_argument("mixture_log_likelihood: empty selection");
  bool any = false;
  for (double p : field.pi) any = any || p > 0.0;
  if (!any) throw std::invalid_argument("mixture_log_likelihood: all pi are zero");
  std::vector<double> terms;
  component_log_terms(field, gt, sel, kind, terms);
  return log_sum_exp(terms);
}

std::vector<double> responsibilities(const MixtureField& field, const KeypointSet& gt,
                                     const DimSelection& sel, ComponentKind kind) {
  std::vector<double> terms;
  component_log_terms(field, gt, sel, kind, terms);
  bool any = false;
  for (double p : field.pi) any = any || p > 0.0;
  if (!any) throw std::invalid_argument("responsibilities: all pi are zero");
  if (sel.empty()) throw std::invalid_argument("responsibilities: empty selection");
  const double ll = log_sum_exp(terms);
  std::vector<double> r(terms.size());
  for (size_t i = 0; i < terms.size(); ++i) {
    r[i] = std::isfinite(terms[i]) ? std::exp(terms[i] - ll) : 0.0;
  }
  return r;
}

double underflow_ratio(const MixtureField& field, const std::vector<KeypointSet>& gts,
                       const DimSelection& sel, ComponentKind kind, Precision precision) {
  if (gts.empty()) throw std::invalid_argument("underflow_ratio: no ground truths");
  const double floor_ln = ln_denorm_min(precision);
  size_t under = 0;
  size_t total = 0;
  for (const auto& gt : gts) {
    const std::span<const double> coords(gt.coords);
    for (int m = 0; m < field.num_components; ++m) {
      const double lp = joint_log_pdf(kind, coords, field.mu_row(m), field.gamma_row(m), sel);
      if (lp < floor_ln) ++under;
      ++total;
    }
  }
  return static_cast<double>(under) / static_cast<double>(total);
}

double underflow_ratio_partition(const MixtureField& field,
                                 const std::vector<KeypointSet>& gts,
                                 const GroupPartition& partition, ComponentKind kind,
                                 Precision precision) {
  double sum = 0.0;
  for (const auto& g : partition.groups) {
    sum += underflow_ratio(field, gts, g, kind, precision);
  }
  return sum / static_cast<double>(partition.num_groups());
}

}  // namespace kpmix
