#include "kpmix/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kpmix {

double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  // summing min before max keeps the result exactly symmetric in (a, b)
  const double area_a = a.area();
  const double area_b = b.area();
  const double uni = std::min(area_a, area_b) + std::max(area_a, area_b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

KeypointSet KeypointSet::all_visible(std::vector<double> flat_coords) {
  KeypointSet s;
  s.visibility.assign(flat_coords.size() / 2, 1);
  s.coords = std::move(flat_coords);
  s.validate();
  return s;
}

void KeypointSet::validate() const {
  if (coords.size() != 2 * visibility.size()) {
    throw std::invalid_argument("KeypointSet: coords/visibility length mismatch");
  }
}

Box pseudo_bbox(const KeypointSet& pose) {
  const int k = pose.num_keypoints();
  if (k < 1) throw std::invalid_argument("pseudo_bbox: empty keypoint set");
  Box b{pose.x(0), pose.y(0), pose.x(0), pose.y(0)};
  for (int j = 1; j < k; ++j) {
    b.x0 = std::min(b.x0, pose.x(j));
    b.y0 = std::min(b.y0, pose.y(j));
    b.x1 = std::max(b.x1, pose.x(j));
    b.y1 = std::max(b.y1, pose.y(j));
  }
  return b;
}

void SkeletonSpec::validate() const {
  if (num_keypoints < 1) throw std::invalid_argument("SkeletonSpec: K must be >= 1");
  if (static_cast<int>(names.size()) != num_keypoints ||
      static_cast<int>(kappas.size()) != num_keypoints) {
    throw std::invalid_argument("SkeletonSpec: names/kappas must have K entries");
  }
  for (double k : kappas) {
    if (!(k > 0.0)) throw std::invalid_argument("SkeletonSpec: kappas must be positive");
  }
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= num_keypoints || b < 0 || b >= num_keypoints) {
      throw std::invalid_argument("SkeletonSpec: edge index out of range");
    }
  }
}

SkeletonSpec SkeletonSpec::synthetic5() {
  SkeletonSpec s;
  s.num_keypoints = 5;
  s.names = {"head", "left_hand", "right_hand", "left_foot", "right_foot"};
  s.kappas = {0.1, 0.1, 0.1, 0.1, 0.1};
  s.edges = {{0, 1}, {0, 2}, {0, 3}, {0, 4}};
  s.preset_groups = {{0, 1, 2}, {3, 4, 5}};  // index 5 = auxiliary bbox center
  s.validate();
  return s;
}

SkeletonSpec SkeletonSpec::coco17() {
  SkeletonSpec s;
  s.num_keypoints = 17;
  s.names = {"nose",          "left_eye",      "right_eye",  "left_ear",
             "right_ear",     "left_shoulder", "right_shoulder",
             "left_elbow",    "right_elbow",   "left_wrist", "right_wrist",
             "left_hip",      "right_hip",     "left_knee",  "right_knee",
             "left_ankle",    "right_ankle"};
  // kappa = 2 sigma with the standard COCO per-keypoint sigmas.
  const double sig[17] = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079,
                          0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087,
                          0.087, 0.089, 0.089};
  s.kappas.resize(17);
  for (int i = 0; i < 17; ++i) s.kappas[static_cast<size_t>(i)] = 2.0 * sig[i];
  s.edges = {{5, 7},  {7, 9},  {6, 8},  {8, 10}, {11, 13}, {13, 15},
             {12, 14}, {14, 16}, {5, 6},  {11, 12}, {5, 11}, {6, 12},
             {0, 1},  {0, 2},  {1, 3},  {2, 4}};
  // Fixed grouping: limbs, face, ears + auxiliary center (index 17).
  s.preset_groups = {{5, 7, 9},   {11, 13, 15}, {6, 8, 10},
                     {12, 14, 16}, {0, 1, 2},    {3, 4, 17}};
  s.validate();
  return s;
}

void PersonAnnotation::validate(double image_w, double image_h) const {
  keypoints.validate();
  if (!bbox.valid()) throw std::invalid_argument("PersonAnnotation: inverted bbox");
  for (int j = 0; j < keypoints.num_keypoints(); ++j) {
    if (!keypoints.visible(j)) continue;
    const double x = keypoints.x(j), y = keypoints.y(j);
    if (x < 0.0 || x > image_w || y < 0.0 || y > image_h) {
      throw std::invalid_argument("PersonAnnotation: visible keypoint out of bounds");
    }
  }
}

int PyramidSpec::total_components() const {
  int m = 0;
  for (const auto& l : levels) m += l.grid_h * l.grid_w;
  return m;
}

double PyramidSpec::level_scale(int level) {
  return std::ldexp(1.0, level - 5);
}

PyramidSpec PyramidSpec::for_side(int image_side, const std::vector<int>& level_ids) {
  PyramidSpec spec;
  spec.image_side = image_side;
  for (int l : level_ids) {
    const int stride = 1 << l;
    if (image_side % stride != 0) {
      throw std::invalid_argument("PyramidSpec: image side not divisible by stride");
    }
    const int g = image_side / stride;
    spec.levels.push_back({l, g, g, stride});
  }
  spec.validate();
  return spec;
}

void PyramidSpec::validate() const {
  if (levels.empty() || image_side <= 0) {
    throw std::invalid_argument("PyramidSpec: empty");
  }
  for (const auto& l : levels) {
    if (l.stride != (1 << l.level)) {
      throw std::invalid_argument("PyramidSpec: stride must equal 2^level");
    }
    if (l.grid_h * l.stride != image_side || l.grid_w * l.stride != image_side) {
      throw std::invalid_argument("PyramidSpec: grid does not tile the image");
    }
  }
}

GridAnchors GridAnchors::make(const PyramidSpec& spec) {
  GridAnchors a;
  a.xy.reserve(static_cast<size_t>(spec.total_components()) * 2);
  for (const auto& l : spec.levels) {
    const double t = static_cast<double>(l.stride);
    for (int r = 0; r < l.grid_h; ++r) {
      for (int c = 0; c < l.grid_w; ++c) {
        a.xy.push_back((c + 0.5) * t);
        a.xy.push_back((r + 0.5) * t);
      }
    }
  }
  return a;
}

MixtureField MixtureField::from_o(int num_keypoints, std::vector<double> mu,
                                  std::vector<double> gamma, std::vector<double> o) {
  MixtureField f;
  f.num_keypoints = num_keypoints;
  f.num_components = static_cast<int>(o.size());
  f.mu = std::move(mu);
  f.gamma = std::move(gamma);
  f.o = std::move(o);
  double sum = 0.0;
  for (double v : f.o) sum += v;
  if (!(sum > 0.0)) throw std::invalid_argument("MixtureField: sum of o must be positive");
  f.pi.resize(f.o.size());
  for (size_t i = 0; i < f.o.size(); ++i) f.pi[i] = f.o[i] / sum;
  f.validate();
  return f;
}

void MixtureField::validate() const {
  const size_t m = static_cast<size_t>(num_components);
  const size_t d = static_cast<size_t>(2 * num_keypoints);
  if (mu.size() != m * d || gamma.size() != m * d || o.size() != m || pi.size() != m) {
    throw std::invalid_argument("MixtureField: inconsistent sizes");
  }
  double sum = 0.0;
  for (double p : pi) {
    if (p < 0.0) throw std::invalid_argument("MixtureField: negative pi");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("MixtureField: pi does not sum to 1");
  }
  for (double g : gamma) {
    if (!(g > 0.0)) throw std::invalid_argument("MixtureField: gamma must be positive");
  }
}

int GroupPartition::total_indices() const {
  int n = 0;
  for (const auto& g : groups) n += static_cast<int>(g.size());
  return n;
}

void GroupPartition::validate(int k_total) const {
  std::vector<char> seen(static_cast<size_t>(k_total), 0);
  int count = 0;
  for (const auto& g : groups) {
    for (int idx : g) {
      if (idx < 0 || idx >= k_total) {
        throw std::invalid_argument("GroupPartition: index out of range");
      }
      if (seen[static_cast<size_t>(idx)]) {
        throw std::invalid_argument("GroupPartition: duplicate index");
      }
      seen[static_cast<size_t>(idx)] = 1;
      ++count;
    }
  }
  if (count != k_total) {
    throw std::invalid_argument("GroupPartition: does not cover all indices");
  }
}

uint64_t GroupPartition::hash() const {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (const auto& g : groups) {
    mix(0xfeULL);
    for (int idx : g) mix(static_cast<uint64_t>(idx) + 1);
  }
  return h;
}

}  // namespace kpmix
