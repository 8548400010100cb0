#include "kpmix/grouping.hpp"

#include <numeric>
#include <stdexcept>

namespace kpmix {

KeypointSet append_auxiliary_center(const PersonAnnotation& ann) {
  if (!ann.bbox.valid()) throw std::invalid_argument("append_auxiliary_center: invalid bbox");
  KeypointSet out = ann.keypoints;
  out.coords.push_back(0.5 * (ann.bbox.x0 + ann.bbox.x1));
  out.coords.push_back(0.5 * (ann.bbox.y0 + ann.bbox.y1));
  out.visibility.push_back(1);
  return out;
}

GroupPartition sample_partition(int k_total, int k_g, Rng& rng) {
  if (k_g < 1 || k_total < 1 || k_total % k_g != 0) {
    throw std::invalid_argument("sample_partition: K_g must divide K_total");
  }
  std::vector<int> perm(static_cast<size_t>(k_total));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  GroupPartition p;
  const int n_g = k_total / k_g;
  p.groups.resize(static_cast<size_t>(n_g));
  for (int g = 0; g < n_g; ++g) {
    p.groups[static_cast<size_t>(g)].assign(perm.begin() + static_cast<long>(g) * k_g,
                                            perm.begin() + static_cast<long>(g + 1) * k_g);
  }
  return p;
}

GroupPartition heuristic_partition(const SkeletonSpec& skeleton) {
  if (skeleton.preset_groups.empty()) {
    throw std::invalid_argument("heuristic_partition: skeleton has no preset grouping");
  }
  GroupPartition p;
  p.groups = skeleton.preset_groups;
  p.validate(skeleton.num_keypoints + 1);
  return p;
}

GroupPartition single_group_partition(int k_total) {
  GroupPartition p;
  p.groups.resize(1);
  p.groups[0].resize(static_cast<size_t>(k_total));
  std::iota(p.groups[0].begin(), p.groups[0].end(), 0);
  return p;
}

GroupPartition consecutive_partition(int k_total, int k_g) {
  if (k_g < 1 || k_total % k_g != 0) {
    throw std::invalid_argument("consecutive_partition: K_g must divide K_total");
  }
  GroupPartition p;
  const int n_g = k_total / k_g;
  p.groups.resize(static_cast<size_t>(n_g));
  for (int g = 0; g < n_g; ++g) {
    auto& grp = p.groups[static_cast<size_t>(g)];
    grp.resize(static_cast<size_t>(k_g));
    std::iota(grp.begin(), grp.end(), g * k_g);
  }
  return p;
}

}  // namespace kpmix
