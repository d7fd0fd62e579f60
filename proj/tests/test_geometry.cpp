#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "topocal/geometry.hpp"
#include "topocal/raster.hpp"

using namespace topocal;
using namespace topocal::geometry;
using topocal::testing::axis_angle;
using topocal::testing::dlt_homography;
using topocal::testing::projective_distance;

namespace {

CameraParams intersection_center() { return {0.0, -20.0, 250.0, 650.0, 950.0, 75.0}; }

ViewConfig intersection_view() {
  ViewConfig v;
  v.width = 256;
  v.height = 256;
  return v;
}

// Uniform draw from the intersections sampling grid (inclusive endpoints).
CameraParams random_intersection_sample(std::mt19937_64& rng) {
  auto pick = [&](double lo, double hi, double step) {
    const int n = static_cast<int>(std::round((hi - lo) / step)) + 1;
    return lo + step * std::uniform_int_distribution<int>(0, n - 1)(rng);
  };
  return {pick(-180, 180, 15), pick(-20, 0, 5), pick(50, 500, 50),
          pick(600, 700, 10),  pick(900, 1000, 10), pick(50, 100, 10)};
}

Mat3 hand_multiply(const Mat3& a, const Mat3& b) {
  Mat3 c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c / c(2, 2);
}

}  // namespace

TEST(Intrinsics, UnitFocalAtOriginIsIdentity) {
  EXPECT_TRUE(intrinsics(1.0, Vec2(0, 0)).matrix().isApprox(Mat3::Identity(), 0.0));
}

TEST(Intrinsics, DirectConstruction) {
  const Mat3 k = intrinsics(500.0, Vec2(128, 128)).matrix();
  Mat3 expected;
  expected << 500, 0, 128, 0, 500, 128, 0, 0, 1;
  EXPECT_EQ(k, expected);
}

TEST(Intrinsics, RejectsNonPositiveFocal) {
  EXPECT_THROW(intrinsics(-10.0, Vec2(0, 0)), InvalidParameter);
  EXPECT_THROW(intrinsics(0.0, Vec2(0, 0)), InvalidParameter);
}

TEST(Rotation, ZeroAnglesGiveIdentityQ) {
  const auto rot = rotation_from_pan_tilt(0, 0);
  EXPECT_TRUE(rot.q.isApprox(Mat3::Identity(), 0.0));
}

TEST(Rotation, PanIsPeriodic) {
  const auto rot = rotation_from_pan_tilt(360, 0);
  EXPECT_LT((rot.q - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rotation, MatchesAxisAngleComposition) {
  // Pan about the S-frame x-axis (world up), then tilt about camera y.
  const Mat3 oracle = axis_angle(45.0, Vec3::UnitY()) * axis_angle(90.0, Vec3::UnitX());
  const auto rot = rotation_from_pan_tilt(90, -45);
  EXPECT_LT((rot.q - oracle).cwiseAbs().maxCoeff(), 1e-12);
  const Mat3 base = axis_angle(-90.0, Vec3::UnitY());
  EXPECT_LT((rot.s - base).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rotation, OrthonormalOverRandomAngles) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ang(-720, 720);
  for (int t = 0; t < 200; ++t) {
    const auto rot = rotation_from_pan_tilt(ang(rng), ang(rng));
    for (const Mat3& m : {rot.q, rot.s, rot.r()}) {
      EXPECT_LT((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_NEAR(m.determinant(), 1.0, 1e-12);
    }
  }
}

TEST(Rotation, ViewingDirections) {
  // Optical axis in world coordinates is the third row of R. Z points into
  // the ground, so a positive Z component means looking down.
  const Vec3 nadir = rotation_from_pan_tilt(0, -90).r().row(2);
  EXPECT_LT((nadir - Vec3(0, 0, 1)).norm(), 1e-12);
  const Vec3 level = rotation_from_pan_tilt(0, 0).r().row(2);
  EXPECT_LT((level - Vec3(1, 0, 0)).norm(), 1e-12);
  for (double pan : {-135.0, -30.0, 45.0, 170.0}) {
    const Vec3 axis = rotation_from_pan_tilt(pan, -30).r().row(2);
    EXPECT_NEAR(axis.z(), std::sin(30.0 * M_PI / 180.0), 1e-12);  // tilt sets the elevation
    const Vec3 level_axis = rotation_from_pan_tilt(pan, 0).r().row(2);
    EXPECT_NEAR(level_axis.z(), 0.0, 1e-12);  // pan keeps the axis horizontal
    EXPECT_NEAR(std::abs(std::atan2(level_axis.y(), level_axis.x())) * 180.0 / M_PI,
                std::abs(pan), 1e-9);
  }
}

TEST(Projection, IdentityCase) {
  const RotationDecomposition eye{Mat3::Identity(), Mat3::Identity()};
  const Mat34 p = projection(intrinsics(1, Vec2(0, 0)), eye, Vec3::Zero());
  Mat34 expected = Mat34::Zero();
  expected.leftCols<3>() = Mat3::Identity();
  EXPECT_EQ(p, expected);
}

TEST(Projection, PureTranslation) {
  const RotationDecomposition eye{Mat3::Identity(), Mat3::Identity()};
  const Mat34 p = projection(intrinsics(1, Vec2(0, 0)), eye, Vec3(1, 2, 3));
  Mat34 expected;
  expected << 1, 0, 0, -1, 0, 1, 0, -2, 0, 0, 1, -3;
  EXPECT_EQ(p, expected);
}

TEST(Projection, AgreesWithPerPointProjection) {
  const CameraParams cam = intersection_center();
  const Vec2 pp(128, 128);
  const Mat34 p =
      projection(intrinsics(cam.focal_px, pp), rotation_from_pan_tilt(cam.pan_deg, cam.tilt_deg),
                 cam.center());
  // Oracle: K R (X - C) with R assembled from axis-angle factors.
  Mat3 k;
  k << cam.focal_px, 0, pp.x(), 0, cam.focal_px, pp.y(), 0, 0, 1;
  const Mat3 r = axis_angle(-cam.tilt_deg, Vec3::UnitY()) *
                 axis_angle(cam.pan_deg, Vec3::UnitX()) * axis_angle(-90, Vec3::UnitY());
  for (const Vec3& x : {Vec3(900, 900, 0), Vec3(900, 1000, 0), Vec3(1000, 950, 0),
                        Vec3(800, 960, 0)}) {
    const Vec3 a = p * x.homogeneous();
    const Vec3 b = k * r * (x - cam.center());
    EXPECT_LT(std::abs(a.x() / a.z() - b.x() / b.z()), 1e-9);
    EXPECT_LT(std::abs(a.y() / a.z() - b.y() / b.z()), 1e-9);
  }
}

TEST(HomographyFromParams, NadirUnitCameraIsIdentity) {
  ViewConfig view;
  view.principal_point = Vec2(0, 0);
  const Homography h = homography_from_params({0, -90, 1, 0, 0, 1}, view);
  EXPECT_LT((h.matrix() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HomographyFromParams, NadirCameraIsSimilarity) {
  ViewConfig view;
  view.principal_point = Vec2(0, 0);
  const Homography h = homography_from_params({0, -90, 2, 5, 7, 4}, view);
  // Pure scale about the camera footprint: f / z = 0.5.
  Mat3 expected;
  expected << 0.5, 0, -2.5, 0, 0.5, -3.5, 0, 0, 1;
  EXPECT_LT((h.matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HomographyFromParams, SoccerGridSamplesMatchDlt) {
  ViewConfig view;
  view.width = 320;
  view.height = 180;
  view.units_per_pixel = 0.5;
  for (double pan = -25; pan <= 25; pan += 5)
    for (double tilt = -15; tilt <= 0; tilt += 3)
      for (double f : {500.0, 650.0, 800.0}) {
        const CameraParams cam{pan, tilt, f, 52.5, -40.0, 15.0};
        const Homography h = homography_from_params(cam, view);
        const Mat34 p = projection(intrinsics(f, view.effective_principal_point()),
                                   rotation_from_pan_tilt(pan, tilt), cam.center());
        std::vector<Vec2> src, dst;
        for (const Vec2 uv : {Vec2(20, 30), Vec2(200, 40), Vec2(190, 150), Vec2(30, 140),
                              Vec2(115, 90), Vec2(60, 200)}) {
          const Vec3 img = p * Vec3(uv.x() * 0.5, uv.y() * 0.5, 0.0).homogeneous();
          src.push_back(uv);
          dst.emplace_back(img.x() / img.z(), img.y() / img.z());
        }
        EXPECT_LT(projective_distance(h.matrix(), dlt_homography(src, dst)), 1e-8)
            << "pan " << pan << " tilt " << tilt << " f " << f;
      }
}

TEST(HomographyFromParams, CameraOnThePlaneIsDegenerate) {
  EXPECT_THROW(homography_from_params({0, -90, 100, 10, 10, 1e-14}, ViewConfig{}),
               DegenerateHomography);
}

TEST(HomographyFromParams, ValidatesParameters) {
  EXPECT_THROW(homography_from_params({0, -10, -5, 0, 0, 10}, ViewConfig{}), InvalidParameter);
  EXPECT_THROW(homography_from_params({0, -10, 50, 0, 0, 0}, ViewConfig{}), InvalidParameter);
  EXPECT_THROW(homography_from_params({0, 10, 50, 0, 0, 10}, ViewConfig{}), InvalidParameter);
  EXPECT_THROW(homography_from_params({200, -10, 50, 0, 0, 10}, ViewConfig{}), InvalidParameter);
}

TEST(HomographyFromParams, FrontSideRuleSurvivesNormalization) {
  // Ground points in front of the camera must be seen through their pixel;
  // points behind it project to pixels whose ray misses the ground.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> offset(-400, 400);
  int front = 0, behind = 0;
  for (int t = 0; t < 100; ++t) {
    const CameraParams cam = random_intersection_sample(rng);
    const Homography h = homography_from_params(cam, intersection_view());
    const Mat3 r = rotation_from_pan_tilt(cam.pan_deg, cam.tilt_deg).r();
    const raster::InverseMapping map(h);
    for (int k = 0; k < 20; ++k) {
      const Vec3 ground(cam.x + offset(rng), cam.y + offset(rng), 0.0);
      const double depth = r.row(2).dot(ground - cam.center());
      if (std::abs(depth) < 1e-3) continue;
      const Vec2 px = h.apply(ground.head<2>());
      const Vec3 q = map.inverse() * Vec3(px.x(), px.y(), 1.0);
      double u, v;
      EXPECT_EQ(map.source(q, u, v), depth > 0);
      (depth > 0 ? front : behind)++;
    }
  }
  EXPECT_GT(front, 100);
  EXPECT_GT(behind, 100);
}

TEST(HomographyAlgebra, ComposeWithIdentity) {
  const Homography h = homography_from_params(intersection_center(), intersection_view());
  EXPECT_LT((compose(h, Homography::identity()).matrix() - h.matrix()).norm(), 1e-12 * h.matrix().norm());
}

TEST(HomographyAlgebra, ComposeWithInverse) {
  const Homography h = homography_from_params(intersection_center(), intersection_view());
  EXPECT_LT((compose(h, invert(h)).matrix() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(HomographyAlgebra, ComposeMatchesHandMultiply) {
  std::mt19937_64 rng(17);
  const Homography a = homography_from_params(random_intersection_sample(rng), intersection_view());
  const Homography b = homography_from_params(random_intersection_sample(rng), intersection_view());
  const Mat3 expected = hand_multiply(a.matrix(), b.matrix());
  EXPECT_LT((compose(a, b).matrix() - expected).norm() / expected.norm(), 1e-14);
}

TEST(HomographyAlgebra, Param8OfIdentity) {
  const Param8 v = to_param8(Homography::identity());
  EXPECT_EQ(v, (Param8{1, 0, 0, 0, 1, 0, 0, 0}));
}

TEST(HomographyAlgebra, NormalizeRemovesScale) {
  const Homography h = normalize(Homography(2.0 * Mat3::Identity()));
  EXPECT_EQ(h.matrix(), Mat3::Identity());
  EXPECT_TRUE(h.normalized());
}

TEST(HomographyAlgebra, SingularInputsRejected) {
  Mat3 singular;
  singular << 1, 2, 3, 2, 4, 6, 0, 0, 1;
  EXPECT_THROW(invert(Homography(singular)), DegenerateHomography);
  EXPECT_THROW(normalize(Homography(Mat3::Zero())), DegenerateHomography);
  EXPECT_THROW(from_param8({1, 2, 3, 2, 4, 6, 0, 0}), DegenerateHomography);
}

TEST(HomographyAlgebra, InverseOverSeededIntersectionSamples) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    const Homography h = homography_from_params(random_intersection_sample(rng), intersection_view());
    const Mat3 prod = h.matrix() * invert(h).matrix();
    EXPECT_LT((prod / prod(2, 2) - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((invert(invert(h)).matrix() - h.matrix()).norm() / h.matrix().norm(), 1e-10);
  }
}

TEST(HomographyAlgebra, AlgebraicProperties) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> lambda(-5, 5);
  for (int t = 0; t < 100; ++t) {
    const Homography a = homography_from_params(random_intersection_sample(rng), intersection_view());
    const Homography b(topocal::testing::random_mild_homography(rng, 256, 256, 30, 0.7, 1.4, 20, 1e-3));
    const Homography c(topocal::testing::random_mild_homography(rng, 256, 256, 30, 0.7, 1.4, 20, 1e-3));
    const Mat3 left = compose(compose(a, b), c).matrix();
    const Mat3 right = compose(a, compose(b, c)).matrix();
    EXPECT_LT((left - right).norm() / left.norm(), 1e-10);

    const Homography n = normalize(a);
    EXPECT_EQ(normalize(n).matrix(), n.matrix());
    double l = lambda(rng);
    if (std::abs(l) < 1e-3) l = 1.0;
    EXPECT_LT((normalize(Homography(l * a.matrix())).matrix() - n.matrix()).norm() / n.matrix().norm(),
              1e-14);
    EXPECT_EQ(from_param8(to_param8(a)).matrix(), n.matrix());
  }
}

TEST(GeometryJson, RoundTrips) {
  const CameraParams cam = intersection_center();
  const nlohmann::json jc = cam;
  EXPECT_EQ(jc.at("focal_px").get<double>(), 250.0);
  EXPECT_EQ(jc.get<CameraParams>(), cam);

  const Homography h = homography_from_params(cam, intersection_view());
  const nlohmann::json jh = h;
  EXPECT_EQ(jh.at("matrix").size(), 9u);
  EXPECT_TRUE(jh.at("normalized").get<bool>());
  const auto back = nlohmann::json::parse(jh.dump()).get<Homography>();
  EXPECT_EQ(back.matrix(), h.matrix());
  EXPECT_TRUE(back.normalized());
}
