#pragma once

#include <span>
#include <string>
#include <vector>

#include "kpmix/types.hpp"

namespace kpmix {

enum class ComponentKind { laplace, gaussian, cauchy };

std::string to_string(ComponentKind kind);
ComponentKind parse_component_kind(const std::string& name);

enum class Precision { single_prec, double_prec };

std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

// ln of the smallest positive subnormal at the given precision; joint
// densities below it round to exactly 0 in linear space.
double ln_denorm_min(Precision p);

// Ordered keypoint indices selecting which coordinate pairs enter a joint
// density (a group I_g, or the full set).
using DimSelection = std::vector<int>;

DimSelection full_selection(int k_total);

// One-dimensional log density. gamma is the Laplace scale, the Gaussian
// standard deviation, or the Cauchy scale. Throws unless gamma > 0.
double log_pdf_1d(ComponentKind kind, double x, double mu, double gamma);

// Sum of log_pdf_1d over the x and y dimensions of every selected keypoint.
// coords/mu/gamma are flat 2K arrays; sel holds keypoint indices.
double joint_log_pdf(ComponentKind kind, std::span<const double> coords,
                     std::span<const double> mu, std::span<const double> gamma,
                     const DimSelection& sel);

// log sum_m pi_m F(k^sel; mu_m^sel, gamma_m^sel), evaluated by log-sum-exp.
// Components with pi_m = 0 are skipped; throws if every pi_m is 0.
double mixture_log_likelihood(const MixtureField& field, const KeypointSet& gt,
                              const DimSelection& sel, ComponentKind kind);

// Posterior component weights r_m = exp(ln pi_m + joint_m - mixture_ll).
std::vector<double> responsibilities(const MixtureField& field, const KeypointSet& gt,
                                     const DimSelection& sel, ComponentKind kind);

// Fraction of (ground-truth person, component) pairs whose joint density,
// evaluated in linear space at the given precision, rounds to exactly 0.
double underflow_ratio(const MixtureField& field, const std::vector<KeypointSet>& gts,
                       const DimSelection& sel, ComponentKind kind, Precision precision);

// Mean of underflow_ratio over the partition's groups (counting
// person x component x group triples).
double underflow_ratio_partition(const MixtureField& field,
                                 const std::vector<KeypointSet>& gts,
                                 const GroupPartition& partition, ComponentKind kind,
                                 Precision precision);

}  // namespace kpmix
