#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "ot3d/error.hpp"

namespace ot3d {

using Point3 = Eigen::Vector3d;

/// An object view: ordered points in meters plus optional unit normals.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<Point3> normals;  // empty, or one per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !points.empty() && normals.size() == points.size(); }

  /// Throws if coordinates are non-finite or normals are present but malformed.
  void validate() const {
    for (const auto& p : points) {
      require(p.allFinite(), ErrorCode::invalid_argument, "point cloud has a non-finite coordinate");
    }
    if (normals.empty()) return;
    require(normals.size() == points.size(), ErrorCode::invalid_argument,
            "normal count differs from point count");
    for (const auto& n : normals) {
      require(n.allFinite() && std::abs(n.norm() - 1.0) <= 1e-6, ErrorCode::invalid_argument,
              "normals must be unit length");
    }
  }
};

struct Keypoint {
  Point3 position = Point3::Zero();
  Point3 normal = Point3::UnitZ();
  std::size_t source_index = 0;
};

inline Point3 min_corner(const PointCloud& cloud) {
  Point3 lo = cloud.points.front();
  for (const auto& p : cloud.points) lo = lo.cwiseMin(p);
  return lo;
}

inline Point3 centroid(const PointCloud& cloud) {
  Point3 c = Point3::Zero();
  for (const auto& p : cloud.points) c += p;
  return c / static_cast<double>(cloud.points.size());
}

}  // namespace ot3d
