#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "topocal/png_io.hpp"
#include "topocal/raster.hpp"

using namespace topocal;
using namespace topocal::raster;
using topocal::testing::random_blob_map;
using topocal::testing::random_mild_homography;
using topocal::testing::random_noise_map;

namespace {

// Pixels whose 3x3 neighborhood carries a single label.
bool interior(const SemanticMap& m, int x, int y) {
  const auto c = m.at(x, y);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = x + dx, yy = y + dy;
      if (!m.contains(xx, yy) || m.at(xx, yy) != c) return false;
    }
  return true;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("topocal_raster_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(SemanticMapType, RejectsOutOfRangeLabels) {
  EXPECT_THROW(SemanticMap(4, 4, 4, std::vector<std::uint8_t>(16, 4)), InvalidInput);
  EXPECT_THROW(SemanticMap(0, 4), InvalidInput);
  SemanticMap m(2, 2);
  EXPECT_THROW(m.set(0, 0, 7), InvalidInput);
}

TEST(WarpLabels, IdentityIsExact) {
  const SemanticMap m = random_noise_map(37, 23, 5);
  EXPECT_EQ(warp_labels(m, Homography::identity(), 37, 23), m);
}

TEST(WarpLabels, TranslationMatchesScalarLoop) {
  const SemanticMap m = random_noise_map(40, 30, 11);
  const SemanticMap out = warp_labels(m, Homography::translation(10, 0), 40, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      const std::uint8_t expected = x >= 10 ? m.at(x - 10, y) : kBackground;
      ASSERT_EQ(out.at(x, y), expected) << x << "," << y;
    }
}

TEST(WarpLabels, BackgroundStaysBackground) {
  std::mt19937_64 rng(3);
  const SemanticMap bg(64, 64);
  for (int k = 0; k < 20; ++k) {
    const Homography h(random_mild_homography(rng, 64, 64, 40, 0.5, 2.0, 20, 2e-3));
    EXPECT_EQ(warp_labels(bg, h, 50, 70), SemanticMap(50, 70));
  }
}

TEST(WarpLabels, DegenerateHomographyThrows) {
  Mat3 m = Mat3::Zero();
  m(0, 0) = 1;
  m(1, 1) = 1;
  const SemanticMap src(8, 8);
  EXPECT_THROW(warp_labels(src, Homography(m), 8, 8), DegenerateHomography);
  EXPECT_THROW(warp_onehot(to_onehot(src), Homography(m), 8, 8), DegenerateHomography);
}

TEST(WarpLabels, PixelsBehindTheCameraAreBackground) {
  // The horizon line w = 0 crosses the output; every destination pixel on the
  // wrong side of it must read background even though u, v are finite.
  const SemanticMap src(64, 64, 4, std::uint8_t{1});
  Mat3 m = Mat3::Identity();
  m(2, 0) = 1.0 / 32.0;  // w = 1 + u / 32 vanishes at u = -32
  const Homography h(m);
  const SemanticMap out = warp_labels(src, h, 64, 64);
  const InverseMapping inv(h);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Vec3 q = inv.preimage(x, y);
      if (q.z() <= 0) EXPECT_EQ(out.at(x, y), kBackground);
    }
}

TEST(WarpOneHot, IdentityWithinTolerance) {
  const OneHotMap m = topocal::testing::random_soft_map(19, 17, 2);
  const OneHotMap out = warp_onehot(m, Homography::identity(), 19, 17);
  for (std::size_t i = 0; i < m.data().size(); ++i) EXPECT_NEAR(out.data()[i], m.data()[i], 1e-12);
}

TEST(WarpOneHot, HalfPixelShiftSplitsAStepEdge) {
  SemanticMap m(4, 1);
  m.set(0, 0, 1);
  m.set(1, 0, 1);
  m.set(2, 0, 2);
  m.set(3, 0, 2);
  const OneHotMap out = warp_onehot(to_onehot(m), Homography::translation(0.5, 0), 4, 1);
  EXPECT_NEAR(out.at(2, 0, 1), 0.5, 1e-12);
  EXPECT_NEAR(out.at(2, 0, 2), 0.5, 1e-12);
  EXPECT_NEAR(out.at(1, 0, 1), 1.0, 1e-12);
}

TEST(WarpOneHot, ArgmaxAgreesWithNearestAwayFromBoundaries) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 10; ++k) {
    const SemanticMap m = random_blob_map(96, 96, 100 + k);
    const Homography h(random_mild_homography(rng, 96, 96, 30, 0.7, 1.5, 10, 1e-3));
    const SemanticMap nearest = warp_labels(m, h, 96, 96);
    const SemanticMap soft = from_onehot(warp_onehot(to_onehot(m), h, 96, 96));
    int agree = 0, total = 0;
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) {
        if (!interior(nearest, x, y)) continue;
        ++total;
        agree += nearest.at(x, y) == soft.at(x, y);
      }
    ASSERT_GT(total, 0);
    EXPECT_GT(static_cast<double>(agree) / total, 0.98) << "sample " << k;
  }
}

TEST(WarpOneHot, WeightsStayNormalized) {
  std::mt19937_64 rng(23);
  for (int k = 0; k < 10; ++k) {
    const OneHotMap m = topocal::testing::random_soft_map(48, 48, 40 + k);
    const Homography h(random_mild_homography(rng, 48, 48, 60, 0.4, 2.5, 30, 4e-3));
    const OneHotMap out = warp_onehot(m, h, 60, 40);
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        const double* p = out.pixel(x, y);
        double s = 0.0;
        for (int c = 0; c < out.class_count(); ++c) {
          EXPECT_GE(p[c], -1e-12);
          s += p[c];
        }
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(WarpProperties, RoundTripRestoresTheMap) {
  constexpr int kSize = 256;
  std::mt19937_64 rng(31);
  for (int k = 0; k < 50; ++k) {
    const SemanticMap m = random_blob_map(kSize, kSize, 500 + k, 6, 24);
    const Homography h(random_mild_homography(rng, kSize, kSize, 25, 0.9, 1.2, 8, 5e-4));
    const SemanticMap there = warp_labels(m, h, kSize, kSize);
    const SemanticMap back = warp_labels(there, geometry::invert(h), kSize, kSize);
    // Only pixels whose image under h lands inside the intermediate frame
    // with its whole neighborhood can come back.
    int agree = 0, total = 0;
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        const Vec2 p = h.apply(Vec2(x + 0.5, y + 0.5));
        if (p.x() < 1 || p.y() < 1 || p.x() > kSize - 1 || p.y() > kSize - 1) continue;
        ++total;
        agree += back.at(x, y) == m.at(x, y);
      }
    ASSERT_GT(total, kSize * kSize / 4);
    EXPECT_GE(static_cast<double>(agree) / total, 0.99) << "sample " << k;
  }
}

TEST(WarpProperties, CompositionMatchesSequentialWarps) {
  constexpr int kSize = 256;
  std::mt19937_64 rng(37);
  for (int k = 0; k < 50; ++k) {
    const SemanticMap m = random_blob_map(kSize, kSize, 900 + k, 6, 24);
    const Homography h1(random_mild_homography(rng, kSize, kSize, 25, 0.8, 1.25, 8, 5e-4));
    const Homography h2(random_mild_homography(rng, kSize, kSize, 25, 0.8, 1.25, 8, 5e-4));
    const SemanticMap direct = warp_labels(m, geometry::compose(h1, h2), kSize, kSize);
    const SemanticMap twice = warp_labels(warp_labels(m, h2, kSize, kSize), h1, kSize, kSize);
    // Pixels whose intermediate sample falls outside the intermediate frame
    // read background in the two-step path by construction.
    const Homography h1_inv = geometry::invert(h1);
    int agree = 0, total = 0;
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        const Vec2 mid = h1_inv.apply(Vec2(x + 0.5, y + 0.5));
        if (mid.x() < 0 || mid.y() < 0 || mid.x() >= kSize || mid.y() >= kSize) continue;
        ++total;
        agree += direct.at(x, y) == twice.at(x, y);
      }
    ASSERT_GT(total, kSize * kSize / 4);
    EXPECT_GE(static_cast<double>(agree) / total, 0.98) << "sample " << k;
  }
}

TEST(OneHot, RoundTripOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SemanticMap m = random_noise_map(13 + static_cast<int>(seed % 7), 11, seed);
    EXPECT_EQ(from_onehot(to_onehot(m)), m);
  }
  const SemanticMap single(9, 9, 4, std::uint8_t{2});
  EXPECT_EQ(from_onehot(to_onehot(single)), single);
}

TEST(OneHot, TiesGoToTheLowestClass) {
  OneHotMap o(1, 1, 4);
  o.pixel(0, 0)[1] = 0.5;
  o.pixel(0, 0)[2] = 0.5;
  EXPECT_EQ(from_onehot(o).at(0, 0), 1);
}

TEST(Iou, IdenticalMapsScoreOne) {
  const SemanticMap m = random_noise_map(32, 32, 1);
  const IouResult r = iou(m, m);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_all, 1.0);
}

TEST(Iou, DisjointMasksScoreZero) {
  SemanticMap a(10, 10), b(10, 10);
  for (int y = 0; y < 10; ++y) {
    a.set(1, y, 1);
    b.set(8, y, 1);
  }
  const IouResult r = iou(a, b);
  ASSERT_TRUE(r.per_class[1].has_value());
  EXPECT_DOUBLE_EQ(*r.per_class[1], 0.0);
  EXPECT_FALSE(r.per_class[2].has_value());
  EXPECT_FALSE(r.per_class[3].has_value());
  EXPECT_DOUBLE_EQ(r.mean_foreground, 0.0);
}

TEST(Iou, HalfWidthShiftGivesOneThird) {
  SemanticMap a(40, 20), b(40, 20);
  for (int y = 5; y < 15; ++y)
    for (int x = 0; x < 16; ++x) {
      a.set(4 + x, y, 1);
      b.set(12 + x, y, 1);
    }
  EXPECT_NEAR(*iou(a, b).per_class[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(iou(a, b).mean, 1.0 / 3.0, 1e-15);
}

TEST(Iou, BackgroundModeIsSelectable) {
  SemanticMap a(4, 1), b(4, 1);
  a.set(0, 0, 1);
  b.set(0, 0, 1);
  b.set(1, 0, 1);
  const IouResult fg = iou(a, b);
  const IouResult all = iou(a, b, true);
  EXPECT_DOUBLE_EQ(fg.mean, 0.5);
  EXPECT_DOUBLE_EQ(all.mean, (0.5 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(fg.mean_all, all.mean);
}

TEST(Iou, ShapeMismatchThrows) {
  EXPECT_THROW(iou(SemanticMap(4, 4), SemanticMap(4, 5)), InvalidInput);
  EXPECT_THROW(iou(SemanticMap(4, 4, 4), SemanticMap(4, 4, 3)), InvalidInput);
}

TEST(PngIo, SemanticMapRoundTrip) {
  const auto dir = scratch_dir("png");
  const SemanticMap m = random_noise_map(31, 17, 8);
  const auto path = dir / "map.png";
  io::write_semantic_png(path, m);
  EXPECT_EQ(io::read_semantic_png(path), m);

  io::MapMetadata meta;
  meta.units_per_pixel = 0.25;
  io::write_metadata(path, meta);
  const io::MapMetadata back = io::read_metadata(path);
  EXPECT_DOUBLE_EQ(back.units_per_pixel, 0.25);
  EXPECT_EQ(back.class_names, io::default_class_names());
}

TEST(PngIo, MissingFileIsAnIoError) {
  EXPECT_THROW(io::read_semantic_png("/nonexistent/dir/map.png"), IoError);
  EXPECT_THROW(io::write_semantic_png("/nonexistent/dir/map.png", SemanticMap(2, 2)), IoError);
}

TEST(PngIo, RejectsIndicesBeyondTheClassCount) {
  const auto dir = scratch_dir("range");
  const auto path = dir / "map.png";
  io::write_semantic_png(path, SemanticMap(3, 3, 4, std::uint8_t{3}));
  EXPECT_THROW(io::read_semantic_png(path, 3), InvalidInput);
}
