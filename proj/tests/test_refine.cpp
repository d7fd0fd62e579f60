#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "topocal/png_io.hpp"
#include "topocal/refine.hpp"

namespace fs = std::filesystem;
using namespace topocal;
using namespace topocal::refine;

namespace {

constexpr int kSize = 64;

const SemanticMap& scene() {
  static const SemanticMap m =
      io::read_semantic_png(fs::path(TOPOCAL_DATA_DIR) / "scenes" / "intersection_1.png");
  return m;
}

const CameraParams kCamera{30.0, -50.0, 52.0, 128.0, 128.0, 45.0};

Homography view_of(const CameraParams& c) {
  return geometry::homography_from_params(c, geometry::ViewConfig{});
}

// Largest image-plane distance between where `h` and `ref` send the ground
// points seen by `ref` at the pixel centers.
double image_error(const Homography& h, const Homography& ref) {
  const Homography inv = geometry::invert(ref);
  double worst = 0.0;
  for (int y = 0; y < kSize; y += 3)
    for (int x = 0; x < kSize; x += 3) {
      const Vec2 p(x + 0.5, y + 0.5);
      worst = std::max(worst, (h.apply(inv.apply(p)) - p).norm());
    }
  return worst;
}

}  // namespace

// The query is a nearest-neighbour rendering while refinement warps bilinearly,
// so the exact start is only close to a minimum, not at one.
TEST(Refine, ExactStartStaysNearTruth) {
  const Homography h = view_of(kCamera);
  const SemanticMap q = raster::warp_labels(scene(), h, kSize, kSize);
  const RefineResult r = refine::refine(q, scene(), h);
  EXPECT_LT(image_error(r.h, h), 1.0);
  EXPECT_LE(r.final_loss(), r.initial_loss());
}

TEST(Refine, TranslationOnlyProblemConvergesWithinHalfPixel) {
  const Homography truth = view_of(kCamera);
  const SemanticMap q = raster::warp_labels(scene(), truth, kSize, kSize);
  const Homography start(Homography::translation(3.0, -2.0).matrix() * truth.matrix());
  RefineConfig cfg;
  cfg.active = {false, false, true, false, false, true, false, false};
  const RefineResult r = refine::refine(q, scene(), start, cfg);
  EXPECT_GT(image_error(start, truth), 3.0);
  EXPECT_LT(image_error(r.h, truth), 0.5);
  EXPECT_EQ(r.z[0], 0.0);
  EXPECT_EQ(r.z[4], 0.0);
  EXPECT_EQ(r.z[6], 0.0);
}

// Start two degrees of pan away and recover the pan by searching the camera
// model for the closest homography to the refined one.
TEST(Refine, RecoversPanOffset) {
  const Homography truth = view_of(kCamera);
  const SemanticMap q = raster::warp_labels(scene(), truth, kSize, kSize);
  CameraParams off = kCamera;
  off.pan_deg += 2.0;
  const RefineResult r = refine::refine(q, scene(), view_of(off));

  double best_pan = 0.0, best_err = 1e300;
  for (double pan = kCamera.pan_deg - 4.0; pan <= kCamera.pan_deg + 4.0; pan += 0.01) {
    CameraParams c = kCamera;
    c.pan_deg = pan;
    const double e = image_error(r.h, view_of(c));
    if (e < best_err) {
      best_err = e;
      best_pan = pan;
    }
  }
  EXPECT_NEAR(best_pan, kCamera.pan_deg, 0.2);
  EXPECT_LT(r.final_loss(), r.initial_loss());
}

TEST(Refine, TrajectoryDecreasesStrictly) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    CameraParams c = kCamera;
    c.pan_deg += std::uniform_real_distribution<double>(-60, 60)(rng);
    CameraParams start = c;
    start.pan_deg += std::uniform_real_distribution<double>(-8, 8)(rng);
    start.z += std::uniform_real_distribution<double>(-4, 4)(rng);
    const SemanticMap q = raster::warp_labels(scene(), view_of(c), kSize, kSize);
    RefineConfig cfg;
    cfg.max_iters = 60;
    cfg.objective.kind = trial % 2 ? loss::Kind::top_dice : loss::Kind::top_mse;
    const RefineResult r = refine::refine(q, scene(), view_of(start), cfg);
    for (std::size_t i = 1; i < r.trajectory.size(); ++i)
      EXPECT_LT(r.trajectory[i], r.trajectory[i - 1]);
    EXPECT_LE(r.iterations, cfg.max_iters);
    EXPECT_FALSE(r.stop_reason.empty());
    const OneHotMap b1 = raster::to_onehot(scene()), q1 = raster::to_onehot(q);
    const Refiner check(b1, q1, view_of(start), cfg);
    EXPECT_NEAR(check.loss_at(r.z), r.final_loss(), 1e-12);
  }
}

TEST(Refine, AllBackgroundQueryIsHandled) {
  const SemanticMap q(kSize, kSize);
  const RefineResult r = refine::refine(q, scene(), view_of(kCamera));
  EXPECT_TRUE(std::isfinite(r.final_loss()));
  EXPECT_LE(r.final_loss(), r.initial_loss());
  EXPECT_FALSE(geometry::is_degenerate(r.h.matrix()));
}

TEST(Refine, MultiStartKeepsTheBestStart) {
  const Homography truth = view_of(kCamera);
  const SemanticMap q = raster::warp_labels(scene(), truth, kSize, kSize);
  CameraParams far = kCamera, near = kCamera;
  far.pan_deg += 120.0;
  near.pan_deg += 1.0;
  const OneHotMap q1 = raster::to_onehot(q), b1 = raster::to_onehot(scene());
  MultiStartConfig ms;
  ms.screen_iters = 10;
  ms.keep = 1;
  const auto r = refine_multi(q1, b1, {view_of(far), view_of(near)}, {}, ms);
  EXPECT_EQ(r.start_index, 1u);
  ASSERT_EQ(r.screened_losses.size(), 2u);
  EXPECT_LT(r.screened_losses[1], r.screened_losses[0]);
  EXPECT_LT(image_error(r.best.h, truth), image_error(view_of(near), truth));
  EXPECT_THROW(refine_multi(q1, b1, {}, {}, ms), InvalidInput);
}

TEST(Refine, RejectsMismatchedInputs) {
  const OneHotMap q(kSize, kSize, 3), b(kSize, kSize, 4);
  EXPECT_THROW(refine::refine(q, b, Homography::identity()), InvalidInput);
  Mat3 singular = Mat3::Zero();
  singular(0, 0) = 1.0;
  EXPECT_THROW(refine::refine(OneHotMap(8, 8, 4), OneHotMap(8, 8, 4), Homography(singular)),
               DegenerateHomography);
}

TEST(Refine, ConfigJsonRoundTripAndValidation) {
  RefineConfig c;
  c.objective.kind = loss::Kind::dice;
  c.max_iters = 17;
  c.max_step = 0.5;
  const RefineConfig back = nlohmann::json(c).get<RefineConfig>();
  EXPECT_EQ(back.objective.kind, loss::Kind::dice);
  EXPECT_EQ(back.max_iters, 17);
  EXPECT_EQ(back.max_step, 0.5);
  EXPECT_THROW((nlohmann::json{{"max_iters", 0}}.get<RefineConfig>()), InvalidSpec);
  EXPECT_THROW((nlohmann::json{{"step_shrink", 1.5}}.get<RefineConfig>()), InvalidSpec);
  EXPECT_THROW((nlohmann::json{{"loss", "huber"}}.get<RefineConfig>()), InvalidSpec);
}
