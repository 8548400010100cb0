#include "kpmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kpmix {

double oks(const KeypointSet& pred, const PersonAnnotation& gt, const SkeletonSpec& skeleton) {
  const int k = gt.keypoints.num_keypoints();
  if (pred.num_keypoints() != k) {
    throw std::invalid_argument("oks: prediction/gt keypoint count mismatch");
  }
  if (k != skeleton.num_keypoints) {
    throw std::invalid_argument("oks: skeleton keypoint count mismatch");
  }
  const double s2 = gt.bbox.area();
  double sum = 0.0;
  int visible = 0;
  for (int j = 0; j < k; ++j) {
    if (!gt.keypoints.visible(j)) continue;
    ++visible;
    const double dx = pred.x(j) - gt.keypoints.x(j);
    const double dy = pred.y(j) - gt.keypoints.y(j);
    const double d2 = dx * dx + dy * dy;
    if (s2 > 0.0) {
      const double kappa = skeleton.kappas[static_cast<size_t>(j)];
      sum += std::exp(-d2 / (2.0 * s2 * kappa * kappa));
    } else {
      sum += d2 == 0.0 ? 1.0 : 0.0;  // degenerate gt box
    }
  }
  if (visible == 0) throw std::invalid_argument("oks: gt has no visible keypoints");
  return sum / visible;
}

std::vector<double> default_oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

namespace {

struct RankedPred {
  double score;
  int scene;
  int index;  // candidate order within the scene
};

}  // namespace

EvalResult average_precision(const std::vector<std::vector<PosePrediction>>& preds_per_scene,
                             const std::vector<std::vector<PersonAnnotation>>& gts_per_scene,
                             const SkeletonSpec& skeleton,
                             const std::vector<double>& oks_thresholds) {
  if (preds_per_scene.size() != gts_per_scene.size()) {
    throw std::invalid_argument("average_precision: scene count mismatch");
  }
  const int n_scenes = static_cast<int>(gts_per_scene.size());

  int total_gts = 0;
  for (const auto& gts : gts_per_scene) total_gts += static_cast<int>(gts.size());

  std::vector<RankedPred> ranked;
  for (int s = 0; s < n_scenes; ++s) {
    for (int i = 0; i < static_cast<int>(preds_per_scene[static_cast<size_t>(s)].size()); ++i) {
      ranked.push_back({preds_per_scene[static_cast<size_t>(s)][static_cast<size_t>(i)].score, s, i});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedPred& a, const RankedPred& b) { return a.score > b.score; });

  // OKS of every (prediction, gt) pair, per scene.
  std::vector<std::vector<std::vector<double>>> oks_mat(static_cast<size_t>(n_scenes));
  for (int s = 0; s < n_scenes; ++s) {
    const auto& preds = preds_per_scene[static_cast<size_t>(s)];
    const auto& gts = gts_per_scene[static_cast<size_t>(s)];
    auto& mat = oks_mat[static_cast<size_t>(s)];
    mat.assign(preds.size(), std::vector<double>(gts.size(), 0.0));
    for (size_t i = 0; i < preds.size(); ++i) {
      for (size_t g = 0; g < gts.size(); ++g) {
        mat[i][g] = oks(preds[i].keypoints, gts[g], skeleton);
      }
    }
  }

  EvalResult res;
  double ap_sum = 0.0;
  for (double thr : oks_thresholds) {
    std::vector<std::vector<char>> gt_used(static_cast<size_t>(n_scenes));
    for (int s = 0; s < n_scenes; ++s) {
      gt_used[static_cast<size_t>(s)].assign(gts_per_scene[static_cast<size_t>(s)].size(), 0);
    }
    std::vector<char> is_tp(ranked.size(), 0);
    for (size_t r = 0; r < ranked.size(); ++r) {
      const auto& rp = ranked[r];
      const auto& mat = oks_mat[static_cast<size_t>(rp.scene)];
      auto& used = gt_used[static_cast<size_t>(rp.scene)];
      int best = -1;
      double best_oks = 0.0;
      for (size_t g = 0; g < used.size(); ++g) {
        if (used[g]) continue;
        const double v = mat[static_cast<size_t>(rp.index)][g];
        if (v >= thr && v > best_oks) {
          best_oks = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[static_cast<size_t>(best)] = 1;
        is_tp[r] = 1;
      }
    }

    // cumulative precision/recall, then 101-point interpolation
    std::vector<double> prec, rec;
    int tp = 0, fp = 0;
    for (size_t r = 0; r < ranked.size(); ++r) {
      if (is_tp[r]) ++tp; else ++fp;
      prec.push_back(static_cast<double>(tp) / (tp + fp));
      rec.push_back(total_gts > 0 ? static_cast<double>(tp) / total_gts : 0.0);
    }
    PRCurve curve;
    curve.threshold = thr;
    double ap_t = 0.0;
    for (int i = 0; i <= 100; ++i) {
      const double r_level = i / 100.0;
      double best_p = 0.0;
      for (size_t j = 0; j < prec.size(); ++j) {
        if (rec[j] >= r_level) best_p = std::max(best_p, prec[j]);
      }
      curve.recall.push_back(r_level);
      curve.precision.push_back(best_p);
      ap_t += best_p;
    }
    ap_t /= 101.0;
    if (thr == 0.50) res.ap50 = ap_t;
    if (thr == 0.75) res.ap75 = ap_t;
    ap_sum += ap_t;
    res.curves.push_back(std::move(curve));
  }
  res.ap = ap_sum / static_cast<double>(oks_thresholds.size());
  return res;
}

double duplicate_assignment_rate(const std::vector<std::vector<PosePrediction>>& prenms_per_scene,
                                 const std::vector<std::vector<PersonAnnotation>>& gts_per_scene,
                                 const SkeletonSpec& skeleton) {
  if (prenms_per_scene.size() != gts_per_scene.size()) {
    throw std::invalid_argument("duplicate_assignment_rate: scene count mismatch");
  }
  double rate_sum = 0.0;
  int counted = 0;
  for (size_t s = 0; s < gts_per_scene.size(); ++s) {
    const auto& gts = gts_per_scene[s];
    std::vector<PosePrediction> cands = prenms_per_scene[s];
    if (gts.empty() || cands.empty()) continue;
    std::sort(cands.begin(), cands.end(), [](const PosePrediction& a, const PosePrediction& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.component < b.component;
    });
    const size_t take = std::min(cands.size(), gts.size());
    std::vector<int> claims(gts.size(), 0);
    for (size_t i = 0; i < take; ++i) {
      int best = 0;
      double best_oks = -1.0;
      for (size_t g = 0; g < gts.size(); ++g) {
        const double v = oks(cands[i].keypoints, gts[g], skeleton);
        if (v > best_oks) {
          best_oks = v;
          best = static_cast<int>(g);
        }
      }
      ++claims[static_cast<size_t>(best)];
    }
    int duplicates = 0;
    for (int c : claims) duplicates += std::max(0, c - 1);
    rate_sum += static_cast<double>(duplicates) / static_cast<double>(take);
    ++counted;
  }
  return counted > 0 ? rate_sum / counted : 0.0;
}

}  // namespace kpmix
