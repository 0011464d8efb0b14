#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "ot3d/binary_io.hpp"
#include "ot3d/cloud_io.hpp"
#include "ot3d/config.hpp"
#include "ot3d/rng.hpp"

using namespace ot3d;

TEST(Pcg32, SameSeedSameStream) {
  Pcg32 a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Pcg32, BelowStaysInRangeAndCoversIt) {
  Pcg32 rng(7);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const auto v = rng.below(5);
    ASSERT_LT(v, 5u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_EQ(rng.below(1), 0u);
}

TEST(Pcg32, UniformMomentsAndStateRoundTrip) {
  Pcg32 rng(9);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
  Pcg32 copy;
  const auto [st, inc] = rng.state();
  copy.set_state(st, inc);
  EXPECT_EQ(copy, rng);
  EXPECT_EQ(copy.next(), rng.next());
}

TEST(Pcg32, NormalHasUnitVariance) {
  Pcg32 rng(11);
  double s = 0, s2 = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.03);
}

TEST(Shuffle, IsAPermutationAndSeedDeterministic) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Pcg32 r1(3), r2(3);
  shuffle(std::span<int>(a), r1);
  shuffle(std::span<int>(b), r2);
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(DeriveSeed, SaltsSeparateStreams) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(5, 9), derive_seed(5, 9));
}

TEST(Binary, RoundTripsEveryFieldType) {
  binary::Writer w;
  w.magic("TEST");
  w.u8(7);
  w.u32(0xdeadbeef);
  w.u64(1ull << 40);
  w.f32(1.5f);
  w.f64(-2.25);
  w.str("hello");
  const std::vector<double> xs{1, 2, 3};
  w.f64s(xs);
  const std::string bytes = w.take();

  binary::Reader r(bytes);
  r.expect_magic("TEST");
  EXPECT_EQ(r.u8(), 7);
  EXPECT_EQ(r.u32(), 0xdeadbeefu);
  EXPECT_EQ(r.u64(), 1ull << 40);
  EXPECT_EQ(r.f32(), 1.5f);
  EXPECT_EQ(r.f64(), -2.25);
  EXPECT_EQ(r.str(), "hello");
  EXPECT_EQ(r.f64s(3), xs);
  EXPECT_TRUE(r.done());
}

TEST(Binary, TruncationAndBadMagicAreFormatErrors) {
  binary::Writer w;
  w.magic("ABCD");
  w.u32(5);
  const std::string bytes = w.take();
  try {
    binary::Reader r(bytes);
    r.expect_magic("WXYZ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::format_error);
  }
  binary::Reader r(std::string_view(bytes).substr(0, 6));
  r.expect_magic("ABCD");
  EXPECT_THROW(r.u32(), Error);
}

TEST(CloudIo, PcdAsciiWithAndWithoutNormals) {
  const std::string pcd =
      "# comment\nVERSION .7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 2\nHEIGHT 1\n"
      "POINTS 2\nDATA ascii\n0 0 0\n1 2 3\n";
  const auto c = parse_cloud(pcd);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_FALSE(c.has_normals());
  EXPECT_EQ(c.points[1], Point3(1, 2, 3));

  const std::string with_normals =
      "FIELDS x y z normal_x normal_y normal_z\nPOINTS 1\nDATA ascii\n0.5 0 0 0 0 1\n";
  const auto n = parse_cloud(with_normals);
  ASSERT_TRUE(n.has_normals());
  EXPECT_EQ(n.normals[0], Point3(0, 0, 1));
}

TEST(CloudIo, MalformedPcdIsRejected) {
  for (const std::string bad : {"POINTS 2\n0 0 0\n1 1 1\n", "FIELDS x y z\nPOINTS 3\n0 0 0\n",
                                "FIELDS x y z\nPOINTS 1\n0 nan 0\n", "FIELDS x y\nPOINTS 1\n0 0\n"}) {
    try {
      parse_cloud(bad);
      ADD_FAILURE() << "accepted: " << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::format_error) << bad;
    }
  }
}

TEST(CloudIo, BinaryRoundTripAndLayout) {
  PointCloud c;
  c.points = {Point3(0.25, -1, 2), Point3(3, 4.5, -0.125)};
  const std::string bytes = encode_ot3d_binary(c);
  EXPECT_EQ(bytes.size(), 4u + 4u + 2u * 12u);
  EXPECT_EQ(bytes.substr(0, 4), "OT3D");
  const auto back = parse_cloud(bytes);
  EXPECT_EQ(back.points, c.points);
  EXPECT_THROW(parse_cloud(bytes.substr(0, bytes.size() - 1)), Error);
}

TEST(CloudIo, FilesRoundTripByExtension) {
  const auto dir = std::filesystem::temp_directory_path() / "ot3d_cloud_io";
  std::filesystem::create_directories(dir);
  PointCloud c;
  c.points = {Point3(0.5, 0.25, 1), Point3(-1, 0, 0.125)};
  c.normals = {Point3(0, 0, 1), Point3(1, 0, 0)};
  write_cloud_file((dir / "a.pcd").string(), c);
  write_cloud_file((dir / "a.ot3d").string(), c);
  const auto pcd = read_cloud_file((dir / "a.pcd").string());
  EXPECT_EQ(pcd.points, c.points);
  EXPECT_EQ(pcd.normals, c.normals);
  EXPECT_EQ(read_cloud_file((dir / "a.ot3d").string()).points, c.points);
  EXPECT_THROW(read_cloud_file((dir / "missing.pcd").string()), Error);
  std::filesystem::remove_all(dir);
}

TEST(PointCloud, ValidateRejectsBadNormalsAndNonFinite) {
  PointCloud c;
  c.points = {Point3(0, 0, 0)};
  c.normals = {Point3(0, 0, 2)};
  EXPECT_THROW(c.validate(), Error);
  c.normals = {Point3(0, 0, 1)};
  EXPECT_NO_THROW(c.validate());
  c.points[0].x() = std::nan("");
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, ParsesKeyValueWithCommentsAndQuotes) {
  auto cfg = ConfigMap::parse("# top\n[learner]\nvoxel_size = 0.03  # inline\nname = \"a # b\"\nflag = true\n");
  EXPECT_DOUBLE_EQ(cfg.get_double("voxel_size", 0), 0.03);
  EXPECT_EQ(cfg.get_string("name", ""), "a # b");
  EXPECT_TRUE(cfg.get_bool("flag", false));
  EXPECT_TRUE(cfg.unused_keys().empty());
  EXPECT_THROW(ConfigMap::parse("novalue\n"), Error);
}

TEST(Params, DefaultsAndRoundTrip) {
  const Params p;
  EXPECT_EQ(p.features.voxel_size, 0.02);
  EXPECT_EQ(p.features.image_width, 8);
  EXPECT_EQ(p.features.support_length, 0.09);
  EXPECT_EQ(p.generic_words, 90u);
  EXPECT_EQ(p.topics, 70u);
  EXPECT_EQ(p.specific_words, 70u);
  EXPECT_EQ(p.alpha, 1.0);
  EXPECT_EQ(p.beta, 0.1);
  EXPECT_EQ(p.gibbs_sweeps, 50u);
  EXPECT_EQ(p.pool_fraction, 0.75);
  const Params back = Params::parse(p.to_config());
  EXPECT_EQ(back.to_config(), p.to_config());
  EXPECT_EQ(back.config_hash(), p.config_hash());
}

TEST(Params, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(Params::parse("voxel_sise = 0.02\n"), Error);
  EXPECT_THROW(Params::parse("topics = 0\n"), Error);
  EXPECT_THROW(Params::parse("alpha = -1\n"), Error);
  EXPECT_THROW(Params::parse("representation = soft\n"), Error);
  EXPECT_EQ(Params::parse("unknown_threshold = inf\n").unknown_threshold, std::numeric_limits<double>::infinity());
  EXPECT_EQ(Params::parse("representation = generic_only\n").mode, RepresentationMode::generic_only);
}
