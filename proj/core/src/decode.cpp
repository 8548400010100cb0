#include "kpmix/decode.hpp"

#include <algorithm>
#include <stdexcept>

namespace kpmix {

std::vector<PosePrediction> decode(const MixtureField& field, double score_thresh,
                                   int num_keypoints_out) {
  if (num_keypoints_out < 1 || num_keypoints_out > field.num_keypoints) {
    throw std::invalid_argument("decode: num_keypoints_out out of range");
  }
  std::vector<PosePrediction> out;
  for (int m = 0; m < field.num_components; ++m) {
    const double score = field.o[static_cast<size_t>(m)];
    if (score < score_thresh) continue;
    PosePrediction p;
    p.score = score;
    p.component = m;
    const auto row = field.mu_row(m);
    p.keypoints.coords.assign(row.begin(), row.begin() + 2 * num_keypoints_out);
    p.keypoints.visibility.assign(static_cast<size_t>(num_keypoints_out), 1);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PosePrediction> nms(std::vector<PosePrediction> cands, double iou_thresh) {
  std::sort(cands.begin(), cands.end(), [](const PosePrediction& a, const PosePrediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.component < b.component;
  });
  std::vector<PosePrediction> kept;
  std::vector<Box> kept_boxes;
  for (auto& c : cands) {
    const Box b = pseudo_bbox(c.keypoints);
    bool suppressed = false;
    for (const Box& kb : kept_boxes) {
      if (box_iou(b, kb) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept_boxes.push_back(b);
      kept.push_back(std::move(c));
    }
  }
  return kept;
}

}  // namespace kpmix
