#pragma once

#include <vector>

#include "kpmix/loss.hpp"
#include "kpmix/model.hpp"
#include "kpmix/tensor.hpp"

namespace kpmix {

struct TapeLossResult {
  ad::Tensor loss;
  LossReport report;
};

// Group-NLL as one fused tape node: forward through the log-space density
// path, backward through the closed-form responsibility-weighted rules for
// mu, gamma and o (with pi = o / sum o handled inside).
TapeLossResult group_nll_node(ad::Tape& tape, const TapeField& field,
                              const std::vector<KeypointSet>& gts,
                              const GroupPartition& partition, ComponentKind kind);

// The same objective assembled from tape primitives only; serves as the
// gradient oracle for the fused node.
ad::Tensor group_nll_composed(ad::Tape& tape, const TapeField& field,
                              const std::vector<KeypointSet>& gts,
                              const GroupPartition& partition, ComponentKind kind);

// Full-NLL with the per-person mixture sum accumulated in single-precision
// linear space (no log-sum-exp): when every component of a person underflows
// in float the loss is +inf. Gradients use the float responsibilities. This
// backs the trainer's "none" grouping mode.
TapeLossResult full_nll_linear_single_node(ad::Tape& tape, const TapeField& field,
                                           const std::vector<KeypointSet>& gts,
                                           ComponentKind kind);

}  // namespace kpmix
