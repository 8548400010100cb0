#pragma once

#include <vector>

#include "kpmix/density.hpp"
#include "kpmix/types.hpp"

namespace kpmix {

struct LossReport {
  double loss = 0.0;
  std::vector<double> per_group;  // sum over persons of -mixture_ll, one per group
  double underflow = 0.0;         // single-precision ratio over this batch's triples
  GroupPartition partition;
};

// -sum_i mixture_log_likelihood over the full selection. Unlabeled keypoints
// of each person are marginalized out of the joint product.
double full_nll_loss(const MixtureField& field, const std::vector<KeypointSet>& gts,
                     ComponentKind kind);

// (1/N_g) sum_i sum_g -mixture_log_likelihood restricted to group I_g, with
// pi shared by all groups. Per-person selections drop unlabeled keypoints.
LossReport group_nll_loss(const MixtureField& field, const std::vector<KeypointSet>& gts,
                          const GroupPartition& partition, ComponentKind kind);

// Selection of visible keypoints of gt within group; empty if none.
DimSelection visible_selection(const KeypointSet& gt, const std::vector<int>& group);

}  // namespace kpmix
