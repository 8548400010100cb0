#pragma once

#include <vector>

#include "kpmix/types.hpp"

namespace kpmix {

struct PosePrediction {
  KeypointSet keypoints;  // decoded coordinates, auxiliary center dropped
  double score = 0.0;     // foreground probability o of the source component
  int component = -1;     // source component index; breaks NMS score ties
};

// One candidate per component with o >= score_thresh (equality kept). The
// first num_keypoints_out coordinate pairs of mu become the pose; training
// fields carry the auxiliary center last, so passing the skeleton's K drops
// it.
std::vector<PosePrediction> decode(const MixtureField& field, double score_thresh,
                                   int num_keypoints_out);

// Greedy descending-score suppression on pseudo-bbox IoU; a candidate is
// removed iff its IoU with a kept higher-scored candidate exceeds iou_thresh
// (strict >). Score ties break toward the lower component index. Output is
// sorted by descending score.
std::vector<PosePrediction> nms(std::vector<PosePrediction> cands, double iou_thresh);

}  // namespace kpmix
