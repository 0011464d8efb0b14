#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "ot3d/cloud_io.hpp"
#include "ot3d/error.hpp"
#include "ot3d/point_cloud.hpp"
#include "ot3d/rng.hpp"

namespace ot3d {

// ---------------------------------------------------------------------------
// Dataset index

enum class DatasetLayout { automatic, flat, nested };

/// category -> ordered view files. Flat layout is root/category/view; nested
/// is root/category/instance/view.
struct DatasetIndex {
  std::map<std::string, std::vector<std::string>> categories;
  std::string provenance = "synthetic";
  std::vector<std::string> warnings;

  std::size_t total_views() const {
    std::size_t n = 0;
    for (const auto& [name, views] : categories) n += views.size();
    return n;
  }

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

inline bool is_cloud_file(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pcd" || ext == ".ot3d";
}

inline DatasetIndex load_dataset(const std::filesystem::path& root, DatasetLayout layout = DatasetLayout::automatic,
                                 const std::string& provenance = "synthetic") {
  namespace fs = std::filesystem;
  require(fs::is_directory(root), ErrorCode::not_found, "dataset root '" + root.string() + "' does not exist");
  DatasetIndex index;
  index.provenance = provenance;

  std::vector<fs::path> category_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) category_dirs.push_back(entry.path());
  }
  std::sort(category_dirs.begin(), category_dirs.end());

  for (const auto& dir : category_dirs) {
    std::vector<fs::path> files;
    std::vector<fs::path> instance_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory()) instance_dirs.push_back(entry.path());
      if (entry.is_regular_file() && is_cloud_file(entry.path())) files.push_back(entry.path());
    }
    const bool nested = layout == DatasetLayout::nested || (layout == DatasetLayout::automatic && files.empty());
    if (nested) {
      files.clear();
      std::sort(instance_dirs.begin(), instance_dirs.end());
      for (const auto& inst : instance_dirs) {
        std::vector<fs::path> inner;
        for (const auto& entry : fs::directory_iterator(inst)) {
          if (entry.is_regular_file() && is_cloud_file(entry.path())) inner.push_back(entry.path());
        }
        std::sort(inner.begin(), inner.end());
        files.insert(files.end(), inner.begin(), inner.end());
      }
    } else {
      std::sort(files.begin(), files.end());
    }

    std::vector<std::string> views;
    for (const auto& f : files) {
      try {
        const auto cloud = read_cloud_file(f.string());
        if (cloud.empty()) {
          index.warnings.push_back(f.string() + ": empty point cloud");
          continue;
        }
        views.push_back(f.string());
      } catch (const Error& e) {
        index.warnings.push_back(f.string() + ": " + e.what());
      }
    }
    if (!views.empty()) index.categories[dir.filename().string()] = std::move(views);
  }
  require(!index.categories.empty(), ErrorCode::empty_input, "dataset root '" + root.string() + "' has no usable views");
  return index;
}

struct LabeledView {
  std::string category;
  std::string path;

  friend bool operator==(const LabeledView&, const LabeledView&) = default;
  friend auto operator<=>(const LabeledView&, const LabeledView&) = default;
};

struct DatasetSplit {
  std::vector<LabeledView> pool;
  std::vector<LabeledView> held_out;
  std::vector<std::string> warnings;
};

/// Seeded per-category split: round(fraction * n) views of each category go
/// to the pool (at least one, and at least one held out when n >= 2).
inline DatasetSplit split_train_pool(const DatasetIndex& index, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::invalid_argument, "split fraction must be in (0, 1)");
  DatasetSplit split;
  Pcg32 rng(seed);
  for (const auto& [name, views] : index.categories) {
    std::vector<std::string> shuffled = views;
    shuffle(std::span<std::string>(shuffled), rng);
    const std::size_t n = shuffled.size();
    if (n == 1) {
      split.pool.push_back({name, shuffled.front()});
      split.warnings.push_back("category '" + name + "' has a single view; it goes to the pool");
      continue;
    }
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    take = std::clamp<std::size_t>(take, 1, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      (i < take ? split.pool : split.held_out).push_back({name, shuffled[i]});
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class ShapeFamily { sphere, box, cylinder, cone, mug };

inline const char* to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::box: return "box";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::cone: return "cone";
    case ShapeFamily::mug: return "mug";
  }
  return "?";
}

inline ShapeFamily parse_family(const std::string& name) {
  if (name == "sphere") return ShapeFamily::sphere;
  if (name == "box") return ShapeFamily::box;
  if (name == "cylinder") return ShapeFamily::cylinder;
  if (name == "cone") return ShapeFamily::cone;
  if (name == "mug" || name == "mug-like") return ShapeFamily::mug;
  fail(ErrorCode::invalid_argument, "unknown shape family '" + name + "'");
}

inline std::vector<ShapeFamily> all_families() {
  return {ShapeFamily::sphere, ShapeFamily::box, ShapeFamily::cylinder, ShapeFamily::cone, ShapeFamily::mug};
}

/// Nominal dimensions in meters (before scale jitter).
namespace shape {
inline constexpr double kSphereRadius = 0.05;
inline constexpr double kBoxX = 0.10, kBoxY = 0.07, kBoxZ = 0.05;
inline constexpr double kCylinderRadius = 0.035, kCylinderHeight = 0.10;
inline constexpr double kConeRadius = 0.045, kConeHeight = 0.10;
inline constexpr double kHandleMajor = 0.025, kHandleMinor = 0.007;
}  // namespace shape

struct SyntheticShapeSpec {
  ShapeFamily family = ShapeFamily::sphere;
  double scale_jitter = 0.0;  // uniform scale factor in [1 - j, 1 + j]
  double noise = 0.0;         // sigma of displacement along the normal, meters
  std::size_t points = 1000;
  std::uint64_t seed = 1;
  bool random_yaw = false;    // random rotation about the vertical axis

  void validate() const {
    require(points >= 50, ErrorCode::invalid_argument, "synthetic clouds need at least 50 points");
    require(noise >= 0.0 && std::isfinite(noise), ErrorCode::invalid_argument, "noise must be >= 0");
    require(scale_jitter >= 0.0 && scale_jitter < 1.0, ErrorCode::invalid_argument, "scale jitter must be in [0, 1)");
  }
};

namespace detail {

struct SurfaceSample {
  Point3 point;
  Point3 normal;
};

inline SurfaceSample sample_sphere(Pcg32& rng, double r) {
  Point3 d(rng.normal(), rng.normal(), rng.normal());
  while (d.norm() < 1e-12) d = Point3(rng.normal(), rng.normal(), rng.normal());
  d.normalize();
  return {r * d, d};
}

inline SurfaceSample sample_box(Pcg32& rng, double x, double y, double z) {
  const double areas[3] = {y * z, x * z, x * y};  // faces normal to x, y, z (two each)
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  double u = rng.uniform() * total;
  int axis = 0;
  for (; axis < 2; ++axis) {
    if (u < 2.0 * areas[axis]) break;
    u -= 2.0 * areas[axis];
  }
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const Point3 half(x / 2, y / 2, z / 2);
  Point3 p(rng.uniform(-half.x(), half.x()), rng.uniform(-half.y(), half.y()), rng.uniform(-half.z(), half.z()));
  Point3 n = Point3::Zero();
  p[axis] = sign * half[axis];
  n[axis] = sign;
  return {p, n};
}

inline SurfaceSample sample_disk(Pcg32& rng, double r, double z, double nz) {
  const double rho = r * std::sqrt(rng.uniform());
  const double t = 2.0 * std::numbers::pi * rng.uniform();
  return {Point3(rho * std::cos(t), rho * std::sin(t), z), Point3(0, 0, nz)};
}

/// Closed cylinder standing on z = 0.
inline SurfaceSample sample_cylinder(Pcg32& rng, double r, double h) {
  const double side = 2.0 * std::numbers::pi * r * h;
  const double cap = std::numbers::pi * r * r;
  const double u = rng.uniform() * (side + 2.0 * cap);
  if (u < side) {
    const double t = 2.0 * std::numbers::pi * rng.uniform();
    const double z = h * rng.uniform();
    return {Point3(r * std::cos(t), r * std::sin(t), z), Point3(std::cos(t), std::sin(t), 0)};
  }
  return u < side + cap ? sample_disk(rng, r, 0.0, -1.0) : sample_disk(rng, r, h, 1.0);
}

/// Cone with base on z = 0 and apex at z = h.
inline SurfaceSample sample_cone(Pcg32& rng, double r, double h) {
  const double slant = std::sqrt(r * r + h * h);
  const double lateral = std::numbers::pi * r * slant;
  const double base = std::numbers::pi * r * r;
  if (rng.uniform() * (lateral + base) < base) return sample_disk(rng, r, 0.0, -1.0);
  const double s = std::sqrt(rng.uniform());  // fraction of the way from apex to base
  const double t = 2.0 * std::numbers::pi * rng.uniform();
  const double rho = r * s;
  const Point3 p(rho * std::cos(t), rho * std::sin(t), h * (1.0 - s));
  const Point3 n = Point3(h * std::cos(t), h * std::sin(t), r).normalized();
  return {p, n};
}

/// Handle: half-torus in the xz-plane attached to the cylinder wall at +x.
/// Points that would fall inside the cylinder are rejected.
inline SurfaceSample sample_handle(Pcg32& rng, double cyl_r, double cyl_h, double major, double minor) {
  const Point3 center(cyl_r, 0.0, cyl_h / 2.0);
  for (;;) {
    const double theta = 2.0 * std::numbers::pi * rng.uniform();  // around the ring
    const double phi = 2.0 * std::numbers::pi * rng.uniform();    // around the tube
    if (rng.uniform() * (major + minor) > major + minor * std::cos(phi)) continue;
    const Point3 ring(std::cos(theta), 0.0, std::sin(theta));
    const Point3 tube_dir = std::cos(phi) * ring + std::sin(phi) * Point3(0, 1, 0);
    const Point3 p = center + major * ring + minor * tube_dir;
    if (std::hypot(p.x(), p.y()) < cyl_r) continue;
    return {p, tube_dir};
  }
}

}  // namespace detail

/// Seeded samples of an analytic surface with outward normals attached, the
/// object's base centered on the origin. Noise displaces points along their
/// normals.
inline PointCloud generate_synthetic(const SyntheticShapeSpec& spec) {
  spec.validate();
  Pcg32 rng(spec.seed, 0x5851f42d4c957f2dULL + static_cast<std::uint64_t>(spec.family));
  const double scale = 1.0 + spec.scale_jitter * rng.uniform(-1.0, 1.0);
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  if (spec.random_yaw) {
    rotation = Eigen::AngleAxisd(2.0 * std::numbers::pi * rng.uniform(), Point3::UnitZ()).toRotationMatrix();
  }

  // Mug handle area relative to its body, for area-proportional sampling.
  const double body_area = 2.0 * std::numbers::pi * shape::kCylinderRadius * shape::kCylinderHeight +
                           2.0 * std::numbers::pi * shape::kCylinderRadius * shape::kCylinderRadius;
  const double handle_area = 4.0 * std::numbers::pi * std::numbers::pi * shape::kHandleMajor * shape::kHandleMinor *
                             0.5;  // outer half survives the rejection, roughly
  const double handle_share = handle_area / (handle_area + body_area);

  PointCloud cloud;
  cloud.points.reserve(spec.points);
  cloud.normals.reserve(spec.points);
  for (std::size_t i = 0; i < spec.points; ++i) {
    detail::SurfaceSample s;
    switch (spec.family) {
      case ShapeFamily::sphere: {
        s = detail::sample_sphere(rng, shape::kSphereRadius);
        s.point.z() += shape::kSphereRadius;
        break;
      }
      case ShapeFamily::box: {
        s = detail::sample_box(rng, shape::kBoxX, shape::kBoxY, shape::kBoxZ);
        s.point.z() += shape::kBoxZ / 2.0;
        break;
      }
      case ShapeFamily::cylinder:
        s = detail::sample_cylinder(rng, shape::kCylinderRadius, shape::kCylinderHeight);
        break;
      case ShapeFamily::cone:
        s = detail::sample_cone(rng, shape::kConeRadius, shape::kConeHeight);
        break;
      case ShapeFamily::mug:
        s = rng.uniform() < handle_share
                ? detail::sample_handle(rng, shape::kCylinderRadius, shape::kCylinderHeight, shape::kHandleMajor,
                                        shape::kHandleMinor)
                : detail::sample_cylinder(rng, shape::kCylinderRadius, shape::kCylinderHeight);
        break;
    }
    Point3 p = s.point * scale;
    if (spec.noise > 0.0) p += spec.noise * rng.normal() * s.normal;
    cloud.points.push_back(rotation * p);
    cloud.normals.push_back(rotation * s.normal);
  }
  return cloud;
}

}  // namespace ot3d
