#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kpmix {

// Axis-aligned box, pixel units, (x0, y0) top-left inclusive.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool valid() const { return x0 <= x1 && y0 <= y1; }
};

// Intersection over union. Degenerate union (area 0) yields 0 so identical
// point-boxes compare as 0 rather than 0/0.
double box_iou(const Box& a, const Box& b);

// One person's keypoints, input-pixel units. coords is flat [x0,y0,x1,y1,...],
// visibility marks labeled vs unlabeled keypoints.
struct KeypointSet {
  std::vector<double> coords;    // 2K
  std::vector<uint8_t> visibility;  // K

  int num_keypoints() const { return static_cast<int>(visibility.size()); }
  double x(int j) const { return coords[2 * static_cast<size_t>(j)]; }
  double y(int j) const { return coords[2 * static_cast<size_t>(j) + 1]; }
  bool visible(int j) const { return visibility[static_cast<size_t>(j)] != 0; }

  static KeypointSet all_visible(std::vector<double> flat_coords);
  void validate() const;
};

// Tight box spanned by all K keypoint coordinates. Throws on an empty set.
Box pseudo_bbox(const KeypointSet& pose);

struct SkeletonSpec {
  int num_keypoints = 0;                       // K, without the auxiliary center
  std::vector<std::string> names;              // K labels
  std::vector<double> kappas;                  // K positive OKS falloff constants
  std::vector<std::pair<int, int>> edges;      // rendering segments
  // Optional fixed grouping over K+1 indices (auxiliary center = index K),
  // used by the non-random grouping mode. Empty when the skeleton has none.
  std::vector<std::vector<int>> preset_groups;

  void validate() const;

  // 5 keypoints (head, hands, feet), kappa 0.1, preset of 2 groups of 3.
  static SkeletonSpec synthetic5();
  // COCO 17-keypoint layout with the standard per-keypoint constants and the
  // fixed limb/face/ears-center grouping preset.
  static SkeletonSpec coco17();
};

struct PersonAnnotation {
  KeypointSet keypoints;
  Box bbox;

  // Checks bbox ordering and that visible keypoints are inside [0,w]x[0,h].
  void validate(double image_w, double image_h) const;
};

struct PyramidLevel {
  int level = 0;    // l in the 5-level indexing
  int grid_h = 0;   // H^f
  int grid_w = 0;   // W^f
  int stride = 0;   // pixels per cell, 2^l
};

struct PyramidSpec {
  std::vector<PyramidLevel> levels;
  int image_side = 0;

  int total_components() const;
  // s = 2^(l-5), exact.
  static double level_scale(int level);
  static PyramidSpec for_side(int image_side, const std::vector<int>& level_ids);
  void validate() const;
};

// Cell-center coordinates per component, level-major then row-major:
// cell (r, c) at stride t anchors at ((c + 0.5) t, (r + 0.5) t).
struct GridAnchors {
  std::vector<double> xy;  // 2M

  int num_components() const { return static_cast<int>(xy.size() / 2); }
  double x(int m) const { return xy[2 * static_cast<size_t>(m)]; }
  double y(int m) const { return xy[2 * static_cast<size_t>(m) + 1]; }

  static GridAnchors make(const PyramidSpec& spec);
};

// All mixture components of one image. Row-major per component: mu and gamma
// hold 2K entries per component, o the raw foreground probability, pi the
// normalized coefficient (sums to 1).
struct MixtureField {
  int num_keypoints = 0;   // K
  int num_components = 0;  // M
  std::vector<double> mu;     // M * 2K
  std::vector<double> gamma;  // M * 2K
  std::vector<double> o;      // M
  std::vector<double> pi;     // M

  std::span<const double> mu_row(int m) const {
    return {mu.data() + static_cast<size_t>(m) * 2 * num_keypoints, static_cast<size_t>(2 * num_keypoints)};
  }
  std::span<const double> gamma_row(int m) const {
    return {gamma.data() + static_cast<size_t>(m) * 2 * num_keypoints, static_cast<size_t>(2 * num_keypoints)};
  }

  // Builds the field from raw o, normalizing pi = o / sum(o).
  static MixtureField from_o(int num_keypoints, std::vector<double> mu,
                             std::vector<double> gamma, std::vector<double> o);
  void validate() const;
};

// Disjoint index groups covering {0, ..., K_total-1}.
struct GroupPartition {
  std::vector<std::vector<int>> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
  int total_indices() const;
  void validate(int k_total) const;
  uint64_t hash() const;
};

// A synthetic multi-person ground truth plus its rendered grayscale image.
struct Scene {
  uint64_t seed = 0;
  std::vector<PersonAnnotation> persons;
  std::vector<double> image;  // side * side, row-major, values in [0,1]
  int image_side = 0;

  double pixel(int r, int c) const {
    return image[static_cast<size_t>(r) * image_side + c];
  }
};

}  // namespace kpmix
