#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kpmix/eval.hpp"
#include "kpmix/rng.hpp"
#include "test_util.hpp"

using namespace kpmix;
namespace tu = kpmix::testutil;

namespace {

SkeletonSpec one_point_skeleton() {
  SkeletonSpec s;
  s.num_keypoints = 1;
  s.names = {"p"};
  s.kappas = {0.1};
  s.validate();
  return s;
}

PosePrediction make_pred(std::vector<double> coords, double score, int component) {
  PosePrediction p;
  p.keypoints = KeypointSet::all_visible(std::move(coords));
  p.score = score;
  p.component = component;
  return p;
}

PersonAnnotation make_gt(std::vector<double> coords, Box bbox) {
  PersonAnnotation a;
  a.keypoints = KeypointSet::all_visible(std::move(coords));
  a.bbox = bbox;
  return a;
}

}  // namespace

TEST_CASE("decode thresholding") {
  Rng rng(1);
  MixtureField f = tu::random_field(rng, 4, 3);
  f.o = {0.5, 1e-5, 1e-4, 0.2};

  CHECK(decode(f, 0.9, 3).empty());
  CHECK(decode(f, 0.0, 3).size() == 4);
  const auto kept = decode(f, 1e-4, 3);
  REQUIRE(kept.size() == 3);  // the 1e-4 candidate survives, >= keeps equality
  CHECK(kept[0].component == 0);
  CHECK(kept[1].component == 2);
  CHECK(kept[2].component == 3);

  // dropping the auxiliary center keeps the first K-1 pairs
  const auto trimmed = decode(f, 0.0, 2);
  CHECK(trimmed[0].keypoints.num_keypoints() == 2);
  CHECK(trimmed[0].keypoints.x(0) == f.mu_row(0)[0]);
}

TEST_CASE("nms keeps the higher-scored of identical poses") {
  std::vector<PosePrediction> cands = {
      make_pred({0, 0, 10, 10}, 0.9, 0),
      make_pred({0, 0, 10, 10}, 0.8, 1),
  };
  const auto kept = nms(cands, 0.7);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
}

TEST_CASE("nms keeps disjoint poses and respects the strict boundary") {
  std::vector<PosePrediction> cands = {
      make_pred({0, 0, 10, 10}, 0.9, 0),
      make_pred({20, 20, 30, 30}, 0.8, 1),
  };
  CHECK(nms(cands, 0.7).size() == 2);

  // pseudo-bboxes (0,0,10,10) and (0,0,10,7): IoU is exactly 0.7
  std::vector<PosePrediction> boundary = {
      make_pred({0, 0, 10, 10}, 0.9, 0),
      make_pred({0, 0, 10, 7}, 0.8, 1),
  };
  const Box a = pseudo_bbox(boundary[0].keypoints);
  const Box b = pseudo_bbox(boundary[1].keypoints);
  REQUIRE(box_iou(a, b) == 0.7);
  CHECK(nms(boundary, 0.7).size() == 2);  // strict >, equality survives
}

TEST_CASE("nms is idempotent, score-sorted, and a subset of its input") {
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const MixtureField f = tu::random_field(rng, 12, 3, 20.0);
    const auto cands = decode(f, 0.0, 3);
    const auto once = nms(cands, 0.7);
    const auto twice = nms(once, 0.7);
    REQUIRE(once.size() == twice.size());
    for (size_t i = 0; i < once.size(); ++i) {
      CHECK(once[i].component == twice[i].component);
      if (i > 0) CHECK(once[i - 1].score >= once[i].score);
      CHECK(std::any_of(cands.begin(), cands.end(), [&](const PosePrediction& c) {
        return c.component == once[i].component;
      }));
    }
  }
}

TEST_CASE("oks closed forms") {
  const SkeletonSpec skel = one_point_skeleton();
  const PersonAnnotation gt = make_gt({0, 0}, Box{-5, -5, 5, 5});  // area 100

  SUBCASE("exact prediction") {
    CHECK(oks(KeypointSet::all_visible({0, 0}), gt, skel) == 1.0);
  }
  SUBCASE("d^2 = 2 s^2 kappa^2 gives e^-1") {
    // s^2 = 100, kappa = 0.1 -> d^2 = 2: d = sqrt(2) along x
    const double d = std::sqrt(2.0);
    CHECK(oks(KeypointSet::all_visible({d, 0}), gt, skel) ==
          doctest::Approx(0.36787944117144233).epsilon(1e-12));
  }
  SUBCASE("d = 100 s kappa is indistinguishable from zero") {
    const double d = 100.0 * 10.0 * 0.1;  // 100 px
    CHECK(oks(KeypointSet::all_visible({d, 0}), gt, skel) <= 1e-12);
  }
  SUBCASE("no visible gt keypoints is an error") {
    PersonAnnotation blank = gt;
    blank.keypoints.visibility[0] = 0;
    CHECK_THROWS(oks(KeypointSet::all_visible({0, 0}), blank, skel));
  }
}

TEST_CASE("oks invariances: translation and uniform scaling") {
  SkeletonSpec skel;
  skel.num_keypoints = 2;
  skel.names = {"a", "b"};
  skel.kappas = {0.1, 0.2};
  skel.validate();
  const PersonAnnotation gt = make_gt({0, 0, 3, 4}, Box{0, 0, 3, 4});
  const KeypointSet pred = KeypointSet::all_visible({0.5, -0.2, 2.8, 4.3});
  const double base = oks(pred, gt, skel);

  // translation of both
  PersonAnnotation gt_t = make_gt({10, 20, 13, 24}, Box{10, 20, 13, 24});
  const KeypointSet pred_t = KeypointSet::all_visible({10.5, 19.8, 12.8, 24.3});
  CHECK(oks(pred_t, gt_t, skel) == doctest::Approx(base).epsilon(1e-12));

  // scale everything by c
  const double c = 3.7;
  PersonAnnotation gt_s = make_gt({0, 0, 3 * c, 4 * c}, Box{0, 0, 3 * c, 4 * c});
  const KeypointSet pred_s =
      KeypointSet::all_visible({0.5 * c, -0.2 * c, 2.8 * c, 4.3 * c});
  CHECK(oks(pred_s, gt_s, skel) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("average precision endpoints") {
  const SkeletonSpec skel = one_point_skeleton();
  std::vector<std::vector<PersonAnnotation>> gts = {
      {make_gt({0, 0}, Box{-5, -5, 5, 5}), make_gt({20, 20}, Box{15, 15, 25, 25})},
      {make_gt({40, 40}, Box{35, 35, 45, 45})},
  };

  SUBCASE("perfect predictions give AP 1.0") {
    std::vector<std::vector<PosePrediction>> preds = {
        {make_pred({0, 0}, 0.3, 0), make_pred({20, 20}, 0.9, 1)},
        {make_pred({40, 40}, 0.5, 0)},
    };
    const EvalResult r = average_precision(preds, gts, skel);
    CHECK(r.ap == 1.0);
    CHECK(r.ap50 == 1.0);
    CHECK(r.ap75 == 1.0);
  }
  SUBCASE("no predictions give AP 0.0") {
    std::vector<std::vector<PosePrediction>> preds(2);
    const EvalResult r = average_precision(preds, gts, skel);
    CHECK(r.ap == 0.0);
    CHECK(r.ap50 == 0.0);
  }
}

TEST_CASE("average precision: 2 gts, 3 preds, hand-computed greedy matching") {
  const SkeletonSpec skel = one_point_skeleton();
  std::vector<std::vector<PersonAnnotation>> gts = {
      {make_gt({0, 0}, Box{-5, -5, 5, 5}), make_gt({20, 20}, Box{15, 15, 25, 25})}};
  std::vector<std::vector<PosePrediction>> preds = {{
      make_pred({0, 0}, 0.9, 0),     // TP on gt0
      make_pred({0.5, 0}, 0.8, 1),   // gt0 taken, OKS to gt1 ~ 0 -> FP
      make_pred({20, 20}, 0.7, 2),   // TP on gt1
  }};
  const EvalResult r = average_precision(preds, gts, skel);
  // PR sequence: precision {1, 1/2, 2/3}, recall {1/2, 1/2, 1}
  // 101-point interpolation: 51 points at precision 1, 50 at 2/3
  const double want = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  CHECK(r.ap50 == doctest::Approx(want).epsilon(1e-12));
  CHECK(r.ap == doctest::Approx(want).epsilon(1e-12));  // identical at every threshold
  CHECK(r.ap <= r.ap50);

  // brute-force greedy matcher oracle at threshold 0.5
  {
    struct P { double score; int idx; };
    std::vector<P> order = {{0.9, 0}, {0.8, 1}, {0.7, 2}};
    std::sort(order.begin(), order.end(), [](const P& a, const P& b) { return a.score > b.score; });
    std::vector<bool> used(2, false);
    std::vector<bool> tp(3, false);
    for (const auto& p : order) {
      int best = -1;
      double best_oks = 0.0;
      for (int g = 0; g < 2; ++g) {
        if (used[static_cast<size_t>(g)]) continue;
        const double v = oks(preds[0][static_cast<size_t>(p.idx)].keypoints, gts[0][static_cast<size_t>(g)], skel);
        if (v >= 0.5 && v > best_oks) {
          best_oks = v;
          best = g;
        }
      }
      if (best >= 0) {
        used[static_cast<size_t>(best)] = true;
        tp[static_cast<size_t>(p.idx)] = true;
      }
    }
    CHECK(tp == std::vector<bool>{true, false, true});
  }
}

TEST_CASE("average precision ignores score-preserving reordering") {
  const SkeletonSpec skel = one_point_skeleton();
  std::vector<std::vector<PersonAnnotation>> gts = {
      {make_gt({0, 0}, Box{-5, -5, 5, 5}), make_gt({20, 20}, Box{15, 15, 25, 25})}};
  std::vector<PosePrediction> scene = {
      make_pred({0.4, 0}, 0.9, 0),
      make_pred({19.5, 20}, 0.6, 1),
      make_pred({7, 7}, 0.3, 2),
  };
  const EvalResult a = average_precision({scene}, gts, skel);
  std::vector<PosePrediction> shuffled = {scene[2], scene[0], scene[1]};
  const EvalResult b = average_precision({shuffled}, gts, skel);
  CHECK(a.ap == b.ap);
  CHECK(a.ap50 == b.ap50);
}

TEST_CASE("duplicate assignment rate counts pre-NMS instance collapse") {
  const SkeletonSpec skel = one_point_skeleton();
  std::vector<std::vector<PersonAnnotation>> gts = {
      {make_gt({0, 0}, Box{-5, -5, 5, 5}), make_gt({20, 20}, Box{15, 15, 25, 25})}};
  // top-2 candidates both sit on gt0
  std::vector<std::vector<PosePrediction>> prenms = {{
      make_pred({0, 0}, 0.9, 0),
      make_pred({0.3, 0}, 0.8, 1),
      make_pred({20, 20}, 0.1, 2),
  }};
  CHECK(duplicate_assignment_rate(prenms, gts, skel) == doctest::Approx(0.5).epsilon(1e-12));

  // distinct instances resolve to zero duplicates
  std::vector<std::vector<PosePrediction>> good = {{
      make_pred({0, 0}, 0.9, 0),
      make_pred({20, 20}, 0.8, 1),
  }};
  CHECK(duplicate_assignment_rate(good, gts, skel) == 0.0);
}
