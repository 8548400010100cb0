#pragma once

#include <vector>

#include "kpmix/decode.hpp"
#include "kpmix/types.hpp"

namespace kpmix {

// Mean over visible gt keypoints j of exp(-d_j^2 / (2 s^2 kappa_j^2)) with
// d_j the Euclidean error in pixels and s^2 the gt bbox area. Throws when the
// gt has no visible keypoint.
double oks(const KeypointSet& pred, const PersonAnnotation& gt, const SkeletonSpec& skeleton);

struct PRCurve {
  double threshold = 0.0;
  std::vector<double> recall;     // 101 points, 0.00 .. 1.00
  std::vector<double> precision;  // interpolated (max to the right)
};

struct EvalResult {
  double ap = 0.0;    // mean over OKS thresholds 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  std::vector<PRCurve> curves;  // one per threshold
};

std::vector<double> default_oks_thresholds();  // 0.50, 0.55, ..., 0.95

// COCO-style greedy matching per threshold: predictions in descending score
// (ties by scene order then candidate order), each gt matched at most once,
// a match requires OKS >= threshold; AP via 101-point interpolation.
EvalResult average_precision(const std::vector<std::vector<PosePrediction>>& preds_per_scene,
                             const std::vector<std::vector<PersonAnnotation>>& gts_per_scene,
                             const SkeletonSpec& skeleton,
                             const std::vector<double>& oks_thresholds = default_oks_thresholds());

// Instance-collapse diagnostic on pre-NMS candidates: per scene, take the
// top-N_gt candidates by score and assign each to its best-OKS gt; the rate
// is the fraction of those candidates that pile onto an already-claimed gt,
// averaged over scenes.
double duplicate_assignment_rate(const std::vector<std::vector<PosePrediction>>& prenms_per_scene,
                                 const std::vector<std::vector<PersonAnnotation>>& gts_per_scene,
                                 const SkeletonSpec& skeleton);

}  // namespace kpmix
