#include "kpmix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kpmix/rng.hpp"

namespace kpmix {

SkeletonSpec GenConfig::skeleton() const {
  if (skeleton_name == "synthetic5") return SkeletonSpec::synthetic5();
  if (skeleton_name == "coco17") return SkeletonSpec::coco17();
  throw std::invalid_argument("GenConfig: unknown skeleton " + skeleton_name);
}

void GenConfig::validate() const {
  if (image_side < 8) throw std::invalid_argument("GenConfig: image_side too small");
  if (min_persons < 1 || max_persons < min_persons) {
    throw std::invalid_argument("GenConfig: bad person count range");
  }
  if (!(scale_min > 0.0) || scale_max < scale_min) {
    throw std::invalid_argument("GenConfig: bad scale range");
  }
  if (max_iou_min < 0.0 || max_iou_max > 1.0 || max_iou_max < max_iou_min) {
    throw std::invalid_argument("GenConfig: maxIoU range must be within [0,1]");
  }
  skeleton();  // throws on unknown name
}

namespace {

// Unit-height pose template for the 5-keypoint skeleton, centered at origin.
constexpr double kTemplate5[5][2] = {
    {0.0, -0.5},    // head
    {-0.35, -0.05}, // left hand
    {0.35, -0.05},  // right hand
    {-0.18, 0.5},   // left foot
    {0.18, 0.5},    // right foot
};

struct DraftPerson {
  double scale = 0.0;
  double shade = 0.0;
  std::vector<double> rel;  // keypoints relative to center, 2K
  double cx = 0.0, cy = 0.0;

  int k() const { return static_cast<int>(rel.size() / 2); }
  Box bbox_at(double x, double y) const {
    Box b{rel[0] + x, rel[1] + y, rel[0] + x, rel[1] + y};
    for (int j = 1; j < k(); ++j) {
      b.x0 = std::min(b.x0, rel[2 * static_cast<size_t>(j)] + x);
      b.x1 = std::max(b.x1, rel[2 * static_cast<size_t>(j)] + x);
      b.y0 = std::min(b.y0, rel[2 * static_cast<size_t>(j) + 1] + y);
      b.y1 = std::max(b.y1, rel[2 * static_cast<size_t>(j) + 1] + y);
    }
    return b;
  }
};

double dist_point_segment(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void render_person(std::vector<double>& image, int side, const DraftPerson& p,
                   const SkeletonSpec& skel, double line_width) {
  const double hw = 0.5 * line_width;
  const double head_r = 0.10 * p.scale;
  auto kx = [&](int j) { return p.rel[2 * static_cast<size_t>(j)] + p.cx; };
  auto ky = [&](int j) { return p.rel[2 * static_cast<size_t>(j) + 1] + p.cy; };

  const Box b = p.bbox_at(p.cx, p.cy);
  const double margin = std::max(hw, head_r) + 1.5;
  const int r0 = std::max(0, static_cast<int>(std::floor(b.y0 - margin)));
  const int r1 = std::min(side - 1, static_cast<int>(std::ceil(b.y1 + margin)));
  const int c0 = std::max(0, static_cast<int>(std::floor(b.x0 - margin)));
  const int c1 = std::min(side - 1, static_cast<int>(std::ceil(b.x1 + margin)));

  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double px = c + 0.5, py = r + 0.5;
      double d = dist_point_segment(px, py, kx(0), ky(0), kx(0), ky(0)) - head_r;
      for (const auto& [a, bidx] : skel.edges) {
        d = std::min(d, dist_point_segment(px, py, kx(a), ky(a), kx(bidx), ky(bidx)) - hw);
      }
      const double cov = std::clamp(0.5 - d, 0.0, 1.0);  // 1px anti-alias ramp
      if (cov > 0.0) {
        double& v = image[static_cast<size_t>(r) * side + c];
        v = v * (1.0 - cov) + p.shade * cov;
      }
    }
  }
}

}  // namespace

Scene sample_scene(const GenConfig& config, uint64_t seed) {
  config.validate();
  const SkeletonSpec skel = config.skeleton();
  if (config.skeleton_name != "synthetic5") {
    throw std::invalid_argument("sample_scene: only the synthetic5 skeleton is renderable");
  }
  Rng rng(seed);
  const int side = config.image_side;
  const int n = config.min_persons + rng.uniform_int(config.max_persons - config.min_persons + 1);

  std::vector<DraftPerson> placed;
  bool accepted = false;
  for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
    placed.clear();
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      DraftPerson p;
      p.scale = rng.uniform(config.scale_min, config.scale_max);
      p.shade = rng.uniform(0.35, 0.95);
      p.rel.resize(10);
      for (int j = 0; j < 5; ++j) {
        p.rel[2 * static_cast<size_t>(j)] =
            (kTemplate5[j][0] + config.pose_jitter * rng.normal()) * p.scale;
        p.rel[2 * static_cast<size_t>(j) + 1] =
            (kTemplate5[j][1] + config.pose_jitter * rng.normal()) * p.scale;
      }
      if (i == 0 || config.max_iou_min <= 0.0) {
        // Sample the center from the range that keeps every keypoint inside.
        const Box rel = p.bbox_at(0.0, 0.0);
        const double x_lo = 0.5 - rel.x0, x_hi = side - 0.5 - rel.x1;
        const double y_lo = 0.5 - rel.y0, y_hi = side - 0.5 - rel.y1;
        if (x_lo > x_hi || y_lo > y_hi) {
          ok = false;
          break;
        }
        p.cx = rng.uniform(x_lo, x_hi);
        p.cy = rng.uniform(y_lo, y_hi);
      } else {
        // Aim a target IoU against an already placed person; IoU decreases
        // monotonically along a ray, so bisect the offset distance.
        const DraftPerson& anchor = placed[static_cast<size_t>(rng.uniform_int(i))];
        const Box abox = anchor.bbox_at(anchor.cx, anchor.cy);
        const double span = config.max_iou_max - config.max_iou_min;
        const double target = rng.uniform(config.max_iou_min + 0.1 * span,
                                          config.max_iou_max - 0.1 * span);
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        double lo = 0.0, hi = 2.0 * side;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          const Box bb = p.bbox_at(anchor.cx + mid * std::cos(theta),
                                   anchor.cy + mid * std::sin(theta));
          if (box_iou(bb, abox) > target) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        p.cx = anchor.cx + 0.5 * (lo + hi) * std::cos(theta);
        p.cy = anchor.cy + 0.5 * (lo + hi) * std::sin(theta);
      }
      // every keypoint strictly inside the image
      for (int j = 0; j < 10; ++j) {
        const double v = p.rel[static_cast<size_t>(j)] + (j % 2 == 0 ? p.cx : p.cy);
        if (v < 0.5 || v > side - 0.5) {
          ok = false;
          break;
        }
      }
      if (ok) placed.push_back(std::move(p));
    }
    if (!ok) continue;
    if (n >= 2) {
      for (size_t i = 0; i < placed.size() && ok; ++i) {
        double mx = 0.0;
        const Box bi = placed[i].bbox_at(placed[i].cx, placed[i].cy);
        for (size_t j = 0; j < placed.size(); ++j) {
          if (j == i) continue;
          mx = std::max(mx, box_iou(bi, placed[j].bbox_at(placed[j].cx, placed[j].cy)));
        }
        if (mx < config.max_iou_min || mx > config.max_iou_max) ok = false;
      }
    }
    accepted = ok;
  }
  if (!accepted) {
    throw std::runtime_error(
        "sample_scene: placement rejected 1000 times; widen the maxIoU range");
  }

  Scene scene;
  scene.seed = seed;
  scene.image_side = side;
  scene.image.assign(static_cast<size_t>(side) * side, 0.0);
  for (const auto& p : placed) {
    PersonAnnotation ann;
    std::vector<double> coords(10);
    for (int j = 0; j < 10; ++j) {
      coords[static_cast<size_t>(j)] = p.rel[static_cast<size_t>(j)] + (j % 2 == 0 ? p.cx : p.cy);
    }
    ann.keypoints = KeypointSet::all_visible(std::move(coords));
    ann.bbox = pseudo_bbox(ann.keypoints);
    ann.validate(side, side);
    scene.persons.push_back(std::move(ann));
    render_person(scene.image, side, p, skel, config.line_width);
  }
  if (config.noise_level > 0.0) {
    for (auto& v : scene.image) {
      v = std::clamp(v + config.noise_level * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
    }
  }
  return scene;
}

std::vector<double> occlusion_stats(const Scene& scene) {
  if (scene.persons.empty()) throw std::invalid_argument("occlusion_stats: no persons");
  std::vector<double> out(scene.persons.size(), 0.0);
  for (size_t i = 0; i < scene.persons.size(); ++i) {
    for (size_t j = 0; j < scene.persons.size(); ++j) {
      if (i == j) continue;
      out[i] = std::max(out[i], box_iou(scene.persons[i].bbox, scene.persons[j].bbox));
    }
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_dataset: cannot open " + path);
  for (const auto& scene : scenes) {
    nlohmann::json j;
    j["seed"] = scene.seed;
    auto& persons = j["persons"] = nlohmann::json::array();
    for (const auto& ann : scene.persons) {
      nlohmann::json p;
      p["bbox"] = {ann.bbox.x0, ann.bbox.y0, ann.bbox.x1, ann.bbox.y1};
      auto& kps = p["keypoints"] = nlohmann::json::array();
      for (int k = 0; k < ann.keypoints.num_keypoints(); ++k) {
        kps.push_back({ann.keypoints.x(k), ann.keypoints.y(k),
                       ann.keypoints.visible(k) ? 1 : 0});
      }
      persons.push_back(std::move(p));
    }
    os << j.dump() << "\n";
  }
}

std::vector<SceneRecord> read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_dataset: cannot open " + path);
  std::vector<SceneRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    SceneRecord rec;
    rec.seed = j.at("seed").get<uint64_t>();
    for (const auto& p : j.at("persons")) {
      PersonAnnotation ann;
      const auto& bb = p.at("bbox");
      ann.bbox = Box{bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
                     bb.at(3).get<double>()};
      for (const auto& k : p.at("keypoints")) {
        ann.keypoints.coords.push_back(k.at(0).get<double>());
        ann.keypoints.coords.push_back(k.at(1).get<double>());
        ann.keypoints.visibility.push_back(k.at(2).get<int>() != 0 ? 1 : 0);
      }
      rec.persons.push_back(std::move(ann));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace kpmix
