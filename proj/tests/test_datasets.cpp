#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ot3d/cloud_io.hpp"
#include "ot3d/datasets.hpp"

using namespace ot3d;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_view(const fs::path& file, ShapeFamily family, std::uint64_t seed) {
  fs::create_directories(file.parent_path());
  SyntheticShapeSpec spec;
  spec.family = family;
  spec.points = 100;
  spec.seed = seed;
  write_cloud_file(file.string(), generate_synthetic(spec));
}

DatasetIndex index_with(std::size_t views) {
  DatasetIndex index;
  for (std::size_t i = 0; i < views; ++i) index.categories["a"].push_back("a/" + std::to_string(i) + ".pcd");
  return index;
}

}  // namespace

TEST(LoadDataset, FlatLayoutOrderedAndDeterministic) {
  const auto root = fresh_dir("ot3d_flat_dataset");
  for (int i = 0; i < 3; ++i) {
    write_view(root / "mug" / ("v" + std::to_string(i) + ".pcd"), ShapeFamily::mug, i);
    write_view(root / "box" / ("v" + std::to_string(i) + ".ot3d"), ShapeFamily::box, i);
  }
  std::ofstream(root / "box" / "notes.txt") << "ignored";
  const auto index = load_dataset(root);
  ASSERT_EQ(index.categories.size(), 2u);
  EXPECT_EQ(index.total_views(), 6u);
  EXPECT_TRUE(index.warnings.empty());
  EXPECT_TRUE(std::is_sorted(index.categories.at("mug").begin(), index.categories.at("mug").end()));
  EXPECT_EQ(load_dataset(root), index);
  fs::remove_all(root);
}

TEST(LoadDataset, MalformedFileIsSkippedWithWarning) {
  const auto root = fresh_dir("ot3d_bad_dataset");
  write_view(root / "cone" / "a.pcd", ShapeFamily::cone, 1);
  write_view(root / "cone" / "b.pcd", ShapeFamily::cone, 2);
  std::ofstream(root / "cone" / "c.pcd") << "FIELDS x y z\nPOINTS 4\n0 0 0\n";
  const auto index = load_dataset(root);
  EXPECT_EQ(index.categories.at("cone").size(), 2u);
  ASSERT_EQ(index.warnings.size(), 1u);
  EXPECT_NE(index.warnings[0].find("c.pcd"), std::string::npos);
  fs::remove_all(root);
}

TEST(LoadDataset, NestedLayoutAndMissingRoot) {
  const auto root = fresh_dir("ot3d_nested_dataset");
  write_view(root / "sphere" / "ball1" / "v0.pcd", ShapeFamily::sphere, 1);
  write_view(root / "sphere" / "ball2" / "v0.pcd", ShapeFamily::sphere, 2);
  write_view(root / "sphere" / "ball2" / "v1.pcd", ShapeFamily::sphere, 3);
  const auto index = load_dataset(root);
  EXPECT_EQ(index.categories.at("sphere").size(), 3u);
  EXPECT_EQ(load_dataset(root, DatasetLayout::nested), index);
  try {
    load_dataset(root / "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
  }
  fs::remove_all(root);
  fs::create_directories(root);
  EXPECT_THROW(load_dataset(root), Error);
  fs::remove_all(root);
}

TEST(Synthetic, SphereLiesOnItsSurface) {
  SyntheticShapeSpec spec;
  spec.family = ShapeFamily::sphere;
  spec.points = 500;
  const auto c = generate_synthetic(spec);
  ASSERT_EQ(c.size(), 500u);
  ASSERT_TRUE(c.has_normals());
  const Point3 center(0, 0, shape::kSphereRadius);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR((c.points[i] - center).norm(), shape::kSphereRadius, 1e-12);
    EXPECT_NEAR(c.normals[i].dot((c.points[i] - center).normalized()), 1.0, 1e-12);
  }
}

TEST(Synthetic, SameSeedSameCloudAndJitterStaysInRange) {
  SyntheticShapeSpec spec;
  spec.family = ShapeFamily::mug;
  spec.seed = 4;
  spec.noise = 0.001;
  spec.scale_jitter = 0.1;
  spec.random_yaw = true;
  const auto a = generate_synthetic(spec);
  EXPECT_EQ(generate_synthetic(spec).points, a.points);
  spec.seed = 5;
  EXPECT_NE(generate_synthetic(spec).points, a.points);

  spec.family = ShapeFamily::sphere;
  spec.noise = 0.0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    spec.seed = s;
    const auto c = generate_synthetic(spec);
    double lo = 1e9, hi = 0;
    for (const auto& p : c.points) {
      const double z = p.z();
      lo = std::min(lo, z);
      hi = std::max(hi, z);
    }
    const double diameter = hi - lo;
    EXPECT_GE(diameter, 2 * shape::kSphereRadius * 0.85);
    EXPECT_LE(diameter, 2 * shape::kSphereRadius * 1.1 + 1e-9);
  }
}

TEST(Synthetic, BoxFacesSampledByArea) {
  SyntheticShapeSpec spec;
  spec.family = ShapeFamily::box;
  spec.points = 20000;
  const auto c = generate_synthetic(spec);
  const double areas[3] = {shape::kBoxY * shape::kBoxZ, shape::kBoxX * shape::kBoxZ, shape::kBoxX * shape::kBoxY};
  const double total = areas[0] + areas[1] + areas[2];
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& n : c.normals) {
    for (int a = 0; a < 3; ++a) {
      if (std::abs(n[a]) == 1.0) ++counts[a];
    }
  }
  EXPECT_EQ(counts[0] + counts[1] + counts[2], c.size());
  for (int a = 0; a < 3; ++a) {
    const double p = areas[a] / total;
    const double sigma = std::sqrt(c.size() * p * (1 - p));
    EXPECT_NEAR(static_cast<double>(counts[a]), c.size() * p, 3 * sigma) << "axis " << a;
  }
}

TEST(Synthetic, EveryFamilyIsFiniteWithUnitNormals) {
  for (auto f : all_families()) {
    SyntheticShapeSpec spec;
    spec.family = f;
    spec.noise = 0.002;
    const auto c = generate_synthetic(spec);
    EXPECT_NO_THROW(c.validate()) << to_string(f);
    EXPECT_EQ(parse_family(to_string(f)), f);
  }
  EXPECT_EQ(parse_family("mug-like"), ShapeFamily::mug);
  EXPECT_THROW(parse_family("torus"), Error);
  SyntheticShapeSpec bad;
  bad.points = 10;
  EXPECT_THROW(generate_synthetic(bad), Error);
}

TEST(Split, EightViewsGoSixAndTwo) {
  const auto index = index_with(8);
  const auto s = split_train_pool(index, 0.75, 1);
  EXPECT_EQ(s.pool.size(), 6u);
  EXPECT_EQ(s.held_out.size(), 2u);
  std::set<LabeledView> all(s.pool.begin(), s.pool.end());
  for (const auto& v : s.held_out) EXPECT_TRUE(all.insert(v).second);
  EXPECT_EQ(all.size(), 8u);
  EXPECT_EQ(split_train_pool(index, 0.75, 1).pool, s.pool);
  bool differs = false;
  for (std::uint64_t seed = 2; seed < 10 && !differs; ++seed) differs = split_train_pool(index, 0.75, seed).pool != s.pool;
  EXPECT_TRUE(differs);
}

TEST(Split, EdgeCases) {
  const auto one = split_train_pool(index_with(1), 0.75, 1);
  EXPECT_EQ(one.pool.size(), 1u);
  EXPECT_TRUE(one.held_out.empty());
  EXPECT_EQ(one.warnings.size(), 1u);
  const auto two = split_train_pool(index_with(2), 0.99, 1);
  EXPECT_EQ(two.pool.size(), 1u);
  EXPECT_EQ(two.held_out.size(), 1u);
  EXPECT_THROW(split_train_pool(index_with(4), 1.0, 1), Error);
  EXPECT_THROW(split_train_pool(index_with(4), 0.0, 1), Error);
}
