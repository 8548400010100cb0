#pragma once

#include <string>
#include <vector>

#include "kpmix/types.hpp"

namespace kpmix {

struct GenConfig {
  int image_side = 64;
  int min_persons = 1;
  int max_persons = 3;
  double scale_min = 20.0;   // person height, px
  double scale_max = 40.0;
  double max_iou_min = 0.0;  // per-person max pairwise bbox IoU window;
  double max_iou_max = 0.8;  // vacuous for a lone person
  double pose_jitter = 0.08;  // keypoint noise, fraction of scale
  double line_width = 1.5;    // px
  double noise_level = 0.05;  // uniform pixel noise amplitude
  std::string skeleton_name = "synthetic5";

  SkeletonSpec skeleton() const;
  void validate() const;
};

// Fully determined by (config, seed): placements by rejection until every
// person's max pairwise bbox IoU falls in the window, anti-aliased stick
// figures drawn back to front (later persons occlude earlier ones), then
// uniform pixel noise. Throws after 1000 rejected attempts.
Scene sample_scene(const GenConfig& config, uint64_t seed);

// Per person, the maximum box_iou against all others; 0 for a lone person.
std::vector<double> occlusion_stats(const Scene& scene);

struct SceneRecord {
  uint64_t seed = 0;
  std::vector<PersonAnnotation> persons;
};

// JSON-lines: one scene per line, fields `seed` and
// `persons[{bbox:[4], keypoints:[[x,y,vis],...]}]`. Images are regenerated
// from the seed, never stored.
void write_dataset(const std::string& path, const std::vector<Scene>& scenes);
std::vector<SceneRecord> read_dataset(const std::string& path);

}  // namespace kpmix
