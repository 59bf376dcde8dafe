#include "ptzcalib/eval.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "ptzcalib/synth.h"
#include "oracles.h"

namespace ptzcalib {
namespace {

constexpr double kDeg = M_PI / 180.0;

using oracle::InPolygon;
using oracle::LookAt;
using oracle::RasterPartIoU;

Polygon2 Field() { return {{-52.5, -34}, {52.5, -34}, {52.5, 34}, {-52.5, 34}}; }

// Straight-down view: up is world +y in the image.
ViewParams Nadir(const Eigen::Vector3d& center, double f) {
  ViewParams v;
  v.intrinsics = Intrinsics::Centered(1920, 1080, f);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  v.pose.rotation = Eigen::Quaterniond(r);
  v.pose.center = center;
  return v;
}

TEST(FocalLengthErrorTest, Examples) {
  EXPECT_EQ(FocalLengthError(2304, 2304), 0.0);
  EXPECT_NEAR(FocalLengthError(2305.52, 2304), 1.52, 1e-9);
  EXPECT_EQ(FocalLengthError(2304, 2305.52), FocalLengthError(2305.52, 2304));
}

TEST(AbsolutePoseErrorTest, IdenticalIsZero) {
  PoseLocal p;
  p.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()));
  p.center = {1, 2, 3};
  const PoseError e = AbsolutePoseError(p, p);
  EXPECT_NEAR(e.rotation_deg, 0.0, 1e-6);
  EXPECT_EQ(e.translation_m, 0.0);
}

TEST(AbsolutePoseErrorTest, ConstructedOffsets) {
  PoseLocal truth;
  truth.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(1.1, Eigen::Vector3d::UnitY()));
  truth.center = {5, -20, 12};
  PoseLocal pred = truth;
  pred.rotation = truth.rotation *
                  Eigen::Quaterniond(Eigen::AngleAxisd(0.12 * kDeg, Eigen::Vector3d(0, 0.6, 0.8)));
  pred.center += Eigen::Vector3d(0.08 * 0.6, 0.0, 0.08 * 0.8);
  const PoseError e = AbsolutePoseError(pred, truth);
  EXPECT_NEAR(e.rotation_deg, 0.12, 1e-9);
  EXPECT_NEAR(e.translation_m, 0.08, 1e-12);
}

TEST(AbsolutePoseErrorTest, InvariantUnderCommonWorldChange) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  auto random_rotation = [&] {
    return Eigen::Quaterniond(normal(rng), normal(rng), normal(rng), normal(rng)).normalized();
  };
  for (int trial = 0; trial < 20; ++trial) {
    PoseLocal a, b;
    a.rotation = random_rotation();
    const double angle = 0.01 + 0.5 * std::abs(normal(rng));
    const Eigen::Vector3d axis = Eigen::Vector3d(normal(rng), normal(rng), normal(rng)).normalized();
    b.rotation = a.rotation * Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis));
    EXPECT_NEAR(AbsolutePoseError(b, a).rotation_deg, angle / kDeg, 1e-7);

    const Eigen::Quaterniond w = random_rotation();
    PoseLocal a2 = a, b2 = b;
    a2.rotation = a.rotation * w;
    b2.rotation = b.rotation * w;
    EXPECT_NEAR(AbsolutePoseError(b2, a2).rotation_deg, angle / kDeg, 1e-7);
  }
}

TEST(ToWorldTest, MatchesGroundTruthFrames) {
  SceneConfig config;
  config.seed = 2;
  config.num_points = 500;
  const Scene scene = GenerateScene(config);
  for (const auto& [id, world] : scene.truth.views) {
    const ViewParams back = ToWorld(scene.truth.LocalView(id), scene.truth.transform);
    EXPECT_LT(RotationAngle(back.pose.rotation, world.pose.rotation), 1e-12);
    EXPECT_LT((back.pose.center - world.pose.center).norm(), 1e-9);
  }
}

TEST(GroundFootprintTest, NadirViewIsImageRectangle) {
  const ViewParams v = Nadir({3, 4, 20}, 1000);
  const Polygon2 fp = GroundFootprint(v);
  ASSERT_GE(fp.size(), 4u);
  // Ground extent = image extent * height / f.
  EXPECT_NEAR(PolygonArea(fp), (1920 * 0.02) * (1080 * 0.02), 1e-6);
  for (const auto& p : fp) {
    EXPECT_NEAR(std::abs(p.x() - 3), 19.2, 1e-9);
    EXPECT_NEAR(std::abs(p.y() - 4), 10.8, 1e-9);
  }
}

TEST(GroundFootprintTest, CameraOnOrBelowPlaneThrows) {
  EXPECT_THROW(GroundFootprint(Nadir({0, 0, 0}, 1000)), std::invalid_argument);
  EXPECT_THROW(GroundFootprint(Nadir({0, 0, -1}, 1000)), std::invalid_argument);
}

TEST(GroundFootprintTest, HorizonRaysClippedToBox) {
  // Looking level: half the image is above the horizon.
  const ViewParams v = LookAt({0, 0, 10}, {100, 0, 10}, 1200);
  FootprintOptions options;
  options.horizon_m = 5000;
  const Polygon2 fp = GroundFootprint(v, options);
  ASSERT_GE(fp.size(), 3u);
  double max_x = 0;
  for (const auto& p : fp) {
    EXPECT_LE(std::abs(p.x()), 5000 + 1e-6);
    EXPECT_LE(std::abs(p.y()), 5000 + 1e-6);
    max_x = std::max(max_x, p.x());
  }
  EXPECT_NEAR(max_x, 5000, 1e-3);
}

TEST(GroundFootprintTest, SkyOnlyViewIsEmpty) {
  const ViewParams v = LookAt({0, 0, 10}, {100, 0, 70}, 1200);
  EXPECT_TRUE(GroundFootprint(v).empty());
}

TEST(PolygonTest, AreaAndIntersection) {
  const Polygon2 a = {{0, 0}, {2, 0}, {2, 2}, {0, 2}};
  const Polygon2 b = {{1, 1}, {3, 1}, {3, 3}, {1, 3}};
  EXPECT_NEAR(PolygonArea(a), 4.0, 1e-12);
  const auto pieces = PolygonIntersection(a, b);
  ASSERT_EQ(pieces.size(), 1u);
  EXPECT_NEAR(PolygonArea(pieces[0]), 1.0, 1e-12);
  EXPECT_NEAR(PolygonIoU(a, b), 1.0 / 7.0, 1e-12);
  // Orientation does not matter.
  const Polygon2 a_cw(a.rbegin(), a.rend());
  EXPECT_NEAR(PolygonIoU(a_cw, b), 1.0 / 7.0, 1e-12);
  EXPECT_EQ(PolygonIoU({}, {}), 1.0);
}

TEST(IouBevTest, IdenticalViewsScoreOne) {
  const ViewParams v = LookAt({0, -60, 18}, {10, 0, 0}, 1500);
  EXPECT_NEAR(IouBev(v, v, Field(), IouMode::kPart), 1.0, 1e-12);
  EXPECT_NEAR(IouBev(v, v, Field(), IouMode::kWhole), 1.0, 1e-12);
  const ViewParams d = LookAt({0, -60, 18}, {-20, 5, 0}, 1400, -0.15);
  EXPECT_NEAR(IouBev(d, d, Field(), IouMode::kPart), 1.0, 1e-12);
  EXPECT_NEAR(IouBev(d, d, Field(), IouMode::kWhole), 1.0, 1e-9);
}

TEST(IouBevTest, DisjointFootprintsScoreZero) {
  const ViewParams a = Nadir({-30, 0, 20}, 2000);
  const ViewParams b = Nadir({30, 0, 20}, 2000);
  EXPECT_EQ(IouBev(a, b, Field(), IouMode::kPart), 0.0);
}

TEST(IouBevTest, PartModeSymmetric) {
  const ViewParams a = LookAt({0, -60, 18}, {10, 0, 0}, 1500);
  const ViewParams b = LookAt({0, -60, 18}, {14, 3, 0}, 1450);
  EXPECT_NEAR(IouBev(a, b, Field(), IouMode::kPart),
              IouBev(b, a, Field(), IouMode::kPart), 1e-12);
}

TEST(IouBevTest, CameraBelowPlaneThrows) {
  const ViewParams a = LookAt({0, -60, 18}, {10, 0, 0}, 1500);
  ViewParams b = a;
  b.pose.center.z() = -2;
  EXPECT_THROW(IouBev(a, b, Field(), IouMode::kPart), std::invalid_argument);
  EXPECT_THROW(IouBev(b, a, Field(), IouMode::kWhole), std::invalid_argument);
}

TEST(IouBevTest, PartModeMatchesRasterOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 8; ++trial) {
    const Eigen::Vector3d center(20 * unit(rng), -55 + 5 * unit(rng), 15 + 5 * unit(rng));
    const Eigen::Vector3d target(40 * unit(rng), 20 * unit(rng), 0);
    const double f = 1400 + 300 * unit(rng);
    const double k1 = trial % 2 == 0 ? 0.0 : -0.1 + 0.05 * unit(rng);
    const ViewParams truth = LookAt(center, target, f, k1);
    const ViewParams pred = LookAt(center + Eigen::Vector3d(unit(rng), unit(rng), 0.3 * unit(rng)),
                                   target + Eigen::Vector3d(8 * unit(rng), 8 * unit(rng), 0),
                                   f * (1 + 0.05 * unit(rng)), k1);
    const double iou = IouBev(pred, truth, Field(), IouMode::kPart);
    EXPECT_NEAR(iou, RasterPartIoU(pred, truth, Field()), 0.005) << "trial " << trial;
    EXPECT_GT(iou, 0.0);
    EXPECT_LT(iou, 1.0);
  }
}

TEST(IouBevTest, WholeModeDecreasesWithError) {
  const ViewParams truth = LookAt({0, -60, 18}, {10, 0, 0}, 1500);
  double previous = 1.0;
  for (double deg : {0.5, 2.0, 5.0}) {
    ViewParams pred = truth;
    pred.pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(deg * kDeg, Eigen::Vector3d::UnitY())) *
                         truth.pose.rotation;
    const double iou = IouBev(pred, truth, Field(), IouMode::kWhole);
    EXPECT_LT(iou, previous);
    EXPECT_GT(iou, 0.0);
    previous = iou;
  }
}

TEST(IouBevTest, WholeModePanMatchesImageRaster) {
  // The whole image sees the ground, so the true polygon is the image
  // rectangle and the predicted one is its image under K R K^-1.
  const ViewParams truth = Nadir({0, 0, 30}, 1000);
  ViewParams pred = truth;
  const Eigen::Quaterniond delta(Eigen::AngleAxisd(4 * kDeg, Eigen::Vector3d(0.3, 1, 0).normalized()));
  pred.pose.rotation = delta * truth.pose.rotation;
  const Eigen::Matrix3d k = truth.intrinsics.K();
  const Eigen::Matrix3d h = k * delta.toRotationMatrix() * k.inverse();
  Polygon2 quad;
  for (const Eigen::Vector2d c : {Eigen::Vector2d(0, 0), Eigen::Vector2d(1920, 0),
                                  Eigen::Vector2d(1920, 1080), Eigen::Vector2d(0, 1080)}) {
    quad.push_back((h * c.homogeneous()).hnormalized());
  }
  const Eigen::Vector2d lo(-400, -400), hi(2320, 1480);
  const int n = 2048;
  long both = 0, either = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d p(lo.x() + (i + 0.5) * (hi.x() - lo.x()) / n,
                              lo.y() + (j + 0.5) * (hi.y() - lo.y()) / n);
      const bool in_rect = p.x() >= 0 && p.x() <= 1920 && p.y() >= 0 && p.y() <= 1080;
      const bool in_quad = InPolygon(quad, p);
      both += in_rect && in_quad;
      either += in_rect || in_quad;
    }
  }
  EXPECT_NEAR(IouBev(pred, truth, Field(), IouMode::kWhole), double(both) / either, 0.005);
}

TEST(SummarizeTest, Examples) {
  const Aggregate one = Summarize({4.5});
  EXPECT_EQ(one.mean, 4.5);
  EXPECT_EQ(one.median, 4.5);
  const Aggregate three = Summarize({3, 1, 2});
  EXPECT_EQ(three.mean, 2.0);
  EXPECT_EQ(three.median, 2.0);
  const Aggregate four = Summarize({4, 1, 3, 10});
  EXPECT_EQ(four.median, 3.5);
  EXPECT_EQ(four.mean, 4.5);
  EXPECT_EQ(four.count, 4);
}

TEST(SummarizeTest, ReportsProduceSceneAndOverallRows) {
  MetricReport a{"s1", "offline", {}, {}};
  a.views.push_back({0, 1.0, 0.1, 0.05, std::nullopt, std::nullopt});
  a.views.push_back({1, 3.0, 0.3, 0.07, std::nullopt, std::nullopt});
  MetricReport b{"s2", "offline", {}, {}};
  b.views.push_back({0, 2.0, 0.2, std::nullopt, 0.9, std::nullopt});
  const nlohmann::json summary = SummarizeReports({a, b});
  auto find = [&](const std::string& scene, const std::string& metric) {
    for (const auto& row : summary.at("rows")) {
      if (row.at("scene") == scene && row.at("metric") == metric) return row;
    }
    return nlohmann::json();
  };
  EXPECT_EQ(find("s1", "fle_px").at("mean").get<double>(), 2.0);
  EXPECT_EQ(find("s2", "fle_px").at("median").get<double>(), 2.0);
  EXPECT_EQ(find("all", "fle_px").at("mean").get<double>(), 2.0);
  EXPECT_EQ(find("all", "fle_px").at("count").get<int>(), 3);
  EXPECT_EQ(find("all", "ape_trans_m").at("count").get<int>(), 2);
  EXPECT_TRUE(find("s1", "iou_part").is_null());
  const std::string text = FormatSummary(summary);
  EXPECT_NE(text.find("fle_px.mean"), std::string::npos);
  EXPECT_NE(text.find("all"), std::string::npos);
}

}  // namespace
}  // namespace ptzcalib
