#pragma once

#include "kpmix/rng.hpp"
#include "kpmix/types.hpp"

namespace kpmix {

// Appends the bbox center as keypoint index K (always visible). The original
// keypoints are unchanged; the center participates in training groups only.
KeypointSet append_auxiliary_center(const PersonAnnotation& ann);

// Uniformly random permutation of {0..K_total-1} chunked into K_total/K_g
// consecutive groups. Throws unless K_g divides K_total.
GroupPartition sample_partition(int k_total, int k_g, Rng& rng);

// The skeleton's fixed grouping (over K+1 indices, auxiliary center last).
// Throws if the skeleton declares none.
GroupPartition heuristic_partition(const SkeletonSpec& skeleton);

// {0..K_total-1} as one full group.
GroupPartition single_group_partition(int k_total);

// Consecutive index chunks of size K_g; the canonical deterministic partition
// used by the underflow diagnostics.
GroupPartition consecutive_partition(int k_total, int k_g);

}  // namespace kpmix
