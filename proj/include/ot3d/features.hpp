#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ot3d/error.hpp"
#include "ot3d/point_cloud.hpp"

namespace ot3d {

/// A flattened local shape descriptor; the unit every codebook operates on.
using Descriptor = std::vector<double>;
/// All descriptors of one object view.
using FeatureSet = std::vector<Descriptor>;

struct FeatureParams {
  double voxel_size = 0.02;     // VS, meters
  int image_width = 8;          // IW, bins
  double support_length = 0.09; // SL, meters
  double normal_radius = 0.0;   // <= 0 selects 2 * voxel_size

  double effective_normal_radius() const {
    return normal_radius > 0.0 ? normal_radius : 2.0 * voxel_size;
  }
  std::size_t descriptor_size() const {
    const auto iw = static_cast<std::size_t>(image_width);
    return (iw + 1) * (2 * iw + 1);
  }
  void validate() const {
    require(voxel_size > 0.0 && std::isfinite(voxel_size), ErrorCode::invalid_argument,
            "voxel size must be positive");
    require(image_width >= 1, ErrorCode::invalid_argument, "image width must be >= 1");
    require(support_length > 0.0 && std::isfinite(support_length), ErrorCode::invalid_argument,
            "support length must be positive");
  }
};

/// Spin-image: rows index the radial distance alpha, columns the signed
/// elevation beta, so the grid is (IW + 1) x (2 IW + 1), stored row-major.
struct SpinImage {
  int image_width = 0;
  double support_length = 0.0;
  std::vector<double> bins;
  std::size_t contributing = 0;  // points that landed in the support region

  std::size_t rows() const { return static_cast<std::size_t>(image_width) + 1; }
  std::size_t cols() const { return 2 * static_cast<std::size_t>(image_width) + 1; }
  double at(std::size_t row, std::size_t col) const { return bins[row * cols() + col]; }
  bool empty() const { return contributing == 0; }
};

// ---------------------------------------------------------------------------
// Normals

namespace detail {

struct VoxelKey {
  std::int64_t x, y, z;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_of(const Point3& p, const Point3& origin, double edge) {
  const Point3 r = (p - origin) / edge;
  return {static_cast<std::int64_t>(std::floor(r.x())), static_cast<std::int64_t>(std::floor(r.y())),
          static_cast<std::int64_t>(std::floor(r.z()))};
}

/// Uniform hash grid for fixed-radius neighbor queries.
class RadiusIndex {
 public:
  RadiusIndex(const std::vector<Point3>& points, double radius)
      : points_(points), radius_(radius), origin_(Point3::Zero()) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      cells_[voxel_of(points[i], origin_, radius_)].push_back(i);
    }
  }

  template <typename Fn>
  void for_each_neighbor(const Point3& q, Fn&& fn) const {
    const VoxelKey c = voxel_of(q, origin_, radius_);
    const double r2 = radius_ * radius_;
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) {
            if ((points_[j] - q).squaredNorm() <= r2) fn(j);
          }
        }
  }

 private:
  const std::vector<Point3>& points_;
  double radius_;
  Point3 origin_;
  std::unordered_map<VoxelKey, std::vector<std::size_t>, VoxelKeyHash> cells_;
};

}  // namespace detail

struct NormalEstimation {
  PointCloud cloud;
  std::vector<std::size_t> degenerate;  // indices that used the centroid fallback
};

/// Plane-fit normals over radius neighborhoods, oriented toward `viewpoint`.
/// Points with fewer than 3 neighbors (self included) take the direction from
/// the cloud centroid instead and are reported as degenerate.
inline NormalEstimation estimate_normals(const PointCloud& cloud, double radius,
                                         const Point3& viewpoint = Point3::Zero()) {
  require(!cloud.empty(), ErrorCode::empty_input, "cannot estimate normals of an empty cloud");
  require(radius > 0.0 && std::isfinite(radius), ErrorCode::invalid_argument, "radius must be positive");

  NormalEstimation result;
  result.cloud.points = cloud.points;
  result.cloud.normals.resize(cloud.size());

  const detail::RadiusIndex index(cloud.points, radius);
  const Point3 center = centroid(cloud);
  std::vector<std::size_t> neighbors;

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    neighbors.clear();
    index.for_each_neighbor(p, [&](std::size_t j) { neighbors.push_back(j); });

    Point3 normal;
    if (neighbors.size() < 3) {
      normal = p - center;
      const double len = normal.norm();
      normal = len > 1e-15 ? Point3(normal / len) : Point3::UnitZ();
      result.degenerate.push_back(i);
    } else {
      Point3 mean = Point3::Zero();
      for (std::size_t j : neighbors) mean += cloud.points[j];
      mean /= static_cast<double>(neighbors.size());
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (std::size_t j : neighbors) {
        const Point3 d = cloud.points[j] - mean;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
      normal = solver.eigenvectors().col(0).normalized();
      if (normal.dot(viewpoint - p) < 0.0) normal = -normal;
    }
    result.cloud.normals[i] = normal;
  }
  return result;
}

/// Normals are estimated only when the cloud carries none.
inline PointCloud ensure_normals(PointCloud cloud, double radius) {
  if (cloud.has_normals()) return cloud;
  return estimate_normals(cloud, radius).cloud;
}

// ---------------------------------------------------------------------------
// Keypoints

/// One keypoint per occupied voxel of a grid anchored at the cloud's minimum
/// corner: the point nearest the voxel center, lowest index on ties. Output is
/// ordered by voxel coordinate.
inline std::vector<Keypoint> select_keypoints(const PointCloud& cloud, double voxel_size) {
  require(voxel_size > 0.0 && std::isfinite(voxel_size), ErrorCode::invalid_argument,
          "voxel size must be positive");
  require(!cloud.empty(), ErrorCode::empty_input, "cannot select keypoints of an empty cloud");
  require(cloud.has_normals(), ErrorCode::invalid_argument, "keypoint selection needs normals");

  const Point3 origin = min_corner(cloud);
  struct Best {
    std::size_t index;
    double dist2;
  };
  std::map<detail::VoxelKey, Best> voxels;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto key = detail::voxel_of(cloud.points[i], origin, voxel_size);
    const Point3 voxel_center =
        origin + voxel_size * Point3(static_cast<double>(key.x) + 0.5, static_cast<double>(key.y) + 0.5,
                                     static_cast<double>(key.z) + 0.5);
    const double d2 = (cloud.points[i] - voxel_center).squaredNorm();
    auto [it, inserted] = voxels.try_emplace(key, Best{i, d2});
    if (!inserted && d2 < it->second.dist2) it->second = Best{i, d2};
  }

  std::vector<Keypoint> keypoints;
  keypoints.reserve(voxels.size());
  for (const auto& [key, best] : voxels) {
    keypoints.push_back({cloud.points[best.index], cloud.normals[best.index], best.index});
  }
  return keypoints;
}

// ---------------------------------------------------------------------------
// Spin-images

/// Nearest-bin spin-image around `kp`, L1-normalized. A point x contributes
/// when beta = n.(x-p) satisfies |beta| <= SL and alpha = sqrt(|x-p|^2 - beta^2)
/// satisfies alpha <= SL.
inline SpinImage compute_spin_image(std::span<const Point3> points, const Keypoint& kp, int image_width,
                                    double support_length) {
  require(image_width >= 1, ErrorCode::invalid_argument, "image width must be >= 1");
  require(support_length > 0.0 && std::isfinite(support_length), ErrorCode::invalid_argument,
          "support length must be positive");
  require(std::abs(kp.normal.norm() - 1.0) <= 1e-6, ErrorCode::invalid_argument,
          "keypoint normal must be unit length");

  SpinImage image;
  image.image_width = image_width;
  image.support_length = support_length;
  const std::size_t rows = image.rows();
  const std::size_t cols = image.cols();
  image.bins.assign(rows * cols, 0.0);

  const double iw = static_cast<double>(image_width);
  for (const auto& x : points) {
    const Point3 d = x - kp.position;
    const double beta = kp.normal.dot(d);
    if (std::abs(beta) > support_length) continue;
    const double alpha = kp.normal.cross(d).norm();
    if (alpha > support_length) continue;
    // floor((beta + SL) * IW / SL), written so that beta = 0 lands exactly on column IW.
    const double r = std::floor(alpha * iw / support_length);
    const double c = iw + std::floor(beta * iw / support_length);
    const auto row = static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(rows - 1)));
    const auto col = static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(cols - 1)));
    image.bins[row * cols + col] += 1.0;
    ++image.contributing;
  }

  if (image.contributing > 0) {
    const double total = static_cast<double>(image.contributing);
    for (double& b : image.bins) b /= total;
  }
  return image;
}

inline SpinImage compute_spin_image(const PointCloud& cloud, const Keypoint& kp, int image_width,
                                    double support_length) {
  return compute_spin_image(std::span<const Point3>(cloud.points), kp, image_width, support_length);
}

/// All non-empty spin-images of an object view. Throws unusable_view when no
/// descriptor survives.
inline std::vector<SpinImage> describe_object(const PointCloud& cloud, const FeatureParams& params) {
  params.validate();
  require(!cloud.empty(), ErrorCode::empty_input, "cannot describe an empty cloud");
  const auto keypoints = select_keypoints(cloud, params.voxel_size);
  std::vector<SpinImage> images;
  images.reserve(keypoints.size());
  for (const auto& kp : keypoints) {
    auto image = compute_spin_image(cloud, kp, params.image_width, params.support_length);
    if (!image.empty()) images.push_back(std::move(image));
  }
  require(!images.empty(), ErrorCode::unusable_view, "object view produced no usable descriptors");
  return images;
}

inline FeatureSet to_features(std::vector<SpinImage> images) {
  FeatureSet out;
  out.reserve(images.size());
  for (auto& image : images) out.push_back(std::move(image.bins));
  return out;
}

/// Normals (if missing) followed by describe_object, flattened to descriptors.
inline FeatureSet extract_features(const PointCloud& cloud, const FeatureParams& params) {
  params.validate();
  require(!cloud.empty(), ErrorCode::empty_input, "cannot describe an empty cloud");
  return to_features(describe_object(ensure_normals(cloud, params.effective_normal_radius()), params));
}

}  // namespace ot3d
