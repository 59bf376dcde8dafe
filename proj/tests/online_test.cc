#include "ptzcalib/online.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ptzcalib/synth.h"
#include "oracles.h"

namespace ptzcalib {
namespace {

constexpr double kDeg = M_PI / 180.0;

ViewParams MakeView(double pan_deg, double tilt_deg, double f, double k1 = 0.0) {
  ViewParams v;
  v.intrinsics = Intrinsics::Centered(1920, 1080, f);
  v.intrinsics.k1 = k1;
  v.pose.rotation = Eigen::AngleAxisd(tilt_deg * kDeg, Eigen::Vector3d::UnitX()) *
                    Eigen::AngleAxisd(pan_deg * kDeg, Eigen::Vector3d::UnitY());
  return v;
}

// Dense oracle on distortion-free views: plain pinhole back-projection.
double PinholeOverlap(const ViewParams& a, const ViewParams& b, int n) {
  const Eigen::Matrix3d ka_inv = a.intrinsics.K().inverse();
  const Eigen::Matrix3d kb = b.intrinsics.K();
  const Eigen::Matrix3d rel = (b.pose.rotation * a.pose.rotation.conjugate()).toRotationMatrix();
  int inside = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d px((i + 0.5) * a.intrinsics.width / n,
                               (j + 0.5) * a.intrinsics.height / n, 1.0);
      const Eigen::Vector3d c = rel * (ka_inv * px);
      if (c.z() <= 0) {
        continue;
      }
      const Eigen::Vector3d q = kb * (c / c.z());
      inside += q.x() >= 0 && q.x() < b.intrinsics.width && q.y() >= 0 &&
                q.y() < b.intrinsics.height;
    }
  }
  return static_cast<double>(inside) / (n * n);
}

// Graph between views with noise-free (optionally noisy) shared directions.
struct Planted {
  std::vector<ViewParams> views;
  MatchGraph graph;
};

Planted Plant(std::vector<ViewParams> views, int num_dirs, uint64_t seed,
              double sigma = 0.0, double outlier_fraction = 0.0) {
  Planted p;
  p.views = std::move(views);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Vector3d> dirs;
  for (int i = 0; i < num_dirs; ++i) {
    dirs.push_back(Eigen::Vector3d(normal(rng), 0.35 * normal(rng), normal(rng)).normalized());
  }
  std::vector<std::map<int, int>> keypoint_of(p.views.size());
  for (size_t v = 0; v < p.views.size(); ++v) {
    p.graph.AddView({static_cast<ViewId>(v), 1920, 1080});
    for (size_t d = 0; d < dirs.size(); ++d) {
      const Eigen::Vector3d c = p.views[v].pose.rotation * dirs[d];
      if (c.z() <= 0.3) {
        continue;
      }
      auto px = ProjectRay(p.views[v], RayLandmark{dirs[d]});
      if (!px) {
        continue;
      }
      *px += sigma * Eigen::Vector2d(normal(rng), normal(rng));
      if (px->x() >= 0 && px->x() < 1920 && px->y() >= 0 && px->y() < 1080) {
        keypoint_of[v][static_cast<int>(d)] = p.graph.AddKeypoint(static_cast<ViewId>(v), *px);
      }
    }
  }
  for (size_t a = 0; a < p.views.size(); ++a) {
    for (size_t b = a + 1; b < p.views.size(); ++b) {
      MatchSet m;
      m.view_a = static_cast<ViewId>(a);
      m.view_b = static_cast<ViewId>(b);
      for (const auto& [d, ka] : keypoint_of[a]) {
        const auto it = keypoint_of[b].find(d);
        if (it != keypoint_of[b].end()) {
          m.pairs.emplace_back(ka, it->second);
        }
      }
      if (m.pairs.size() < 40) {
        continue;
      }
      // Matched keypoint homography is exact without noise; the fitted one
      // is carried for initialization only.
      std::vector<Eigen::Vector2d> from;
      std::vector<Eigen::Vector2d> to;
      for (const auto& [ia, ib] : m.pairs) {
        from.push_back(p.graph.Keypoints(m.view_a)[ia]);
        to.push_back(p.graph.Keypoints(m.view_b)[ib]);
      }
      m.homography = FitHomography(from, to);
      const size_t outliers = static_cast<size_t>(outlier_fraction * m.pairs.size());
      const int na = static_cast<int>(p.graph.Keypoints(m.view_a).size());
      const int nb = static_cast<int>(p.graph.Keypoints(m.view_b).size());
      for (size_t k = 0; k < outliers; ++k) {
        m.pairs[k] = {static_cast<int>(unit(rng) * na), static_cast<int>(unit(rng) * nb)};
      }
      p.graph.AddMatchSet(std::move(m));
    }
  }
  return p;
}

Reconstruction ReferenceReconstruction(const std::vector<ViewParams>& views,
                                       const std::vector<ViewId>& ids) {
  Reconstruction r;
  for (const ViewId id : ids) {
    r.views[id] = views[id];
    r.registered.push_back(id);
  }
  return r;
}

TEST(FrustumOverlap, SelfIsOne) {
  EXPECT_EQ(FrustumOverlap(MakeView(10, -5, 1300), MakeView(10, -5, 1300)), 1.0);
  const ViewParams distorted = MakeView(-30, -15, 1100, -0.2);
  EXPECT_EQ(FrustumOverlap(distorted, distorted), 1.0);
  EXPECT_EQ(SymmetricOverlap(distorted, distorted), 1.0);
}

TEST(FrustumOverlap, OppositeViewsDoNotOverlap) {
  EXPECT_EQ(SymmetricOverlap(MakeView(0, 0, 1000), MakeView(180, 0, 1000)), 0.0);
}

TEST(FrustumOverlap, NinetyDegreeFovPannedFortyFive) {
  // Horizontal FOV of 90 degrees: f = W / 2.
  const ViewParams a = MakeView(0, 0, 960);
  const ViewParams b = MakeView(45, 0, 960);
  const double oracle = PinholeOverlap(a, b, 512);
  EXPECT_NEAR(oracle, 0.5, 0.05);
  EXPECT_NEAR(FrustumOverlap(a, b), oracle, 0.05);
}

TEST(FrustumOverlap, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pan(-60, 60);
  std::uniform_real_distribution<double> tilt(-20, 0);
  std::uniform_real_distribution<double> focal(800, 2500);
  for (int i = 0; i < 20; ++i) {
    const ViewParams a = MakeView(pan(rng), tilt(rng), focal(rng));
    const ViewParams b = MakeView(pan(rng), tilt(rng), focal(rng));
    EXPECT_NEAR(FrustumOverlap(a, b), PinholeOverlap(a, b, 512), 0.05);
  }
}

TEST(FrustumOverlap, MatchesDistortedGridOracle) {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    const double k1 = 0.2 * u(rng);
    const double k2 = 0.05 * u(rng);
    const ViewParams a = MakeView(30 * u(rng), -10 + 8 * u(rng), 1500 + 600 * u(rng), k1);
    const ViewParams b = MakeView(30 * u(rng), -10 + 8 * u(rng), 1500 + 600 * u(rng), k1);
    ViewParams a2 = a, b2 = b;
    a2.intrinsics.k2 = b2.intrinsics.k2 = k2;
    EXPECT_NEAR(FrustumOverlap(a2, b2), oracle::GridOverlap(a2, b2, 256), 0.05);
  }
}

TEST(FrustumOverlap, SymmetricVariantIsSymmetric) {
  const ViewParams a = MakeView(0, -10, 1200, 0.1);
  const ViewParams b = MakeView(20, -5, 2000, -0.05);
  EXPECT_EQ(SymmetricOverlap(a, b), SymmetricOverlap(b, a));
  EXPECT_EQ(SymmetricOverlap(a, b), std::min(FrustumOverlap(a, b), FrustumOverlap(b, a)));
}

TEST(SelectReference, QueryEqualToReference) {
  std::vector<ViewParams> views;
  for (int i = 0; i < 8; ++i) {
    views.push_back(MakeView(10.0 * i, -10, 1500));
  }
  views.push_back(views[5]);
  const Planted p = Plant(views, 3000, 1);
  const ReferenceDatabase db(ReferenceReconstruction(views, {0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(SelectReference(views[5], 8, p.graph, db, OnlineConfig{}), 5);
}

TEST(SelectReference, SingleViewAboveThreshold) {
  const std::vector<ViewParams> views = {MakeView(0, 0, 1500), MakeView(90, 0, 1500),
                                         MakeView(180, 0, 1500), MakeView(20, 0, 1500)};
  const ViewParams query = MakeView(10, 0, 1500);
  ASSERT_GE(SymmetricOverlap(query, views[0]), 0.3);
  const Planted p = Plant(views, 100, 2);
  const ReferenceDatabase db(ReferenceReconstruction(views, {0, 1, 2}));
  double overlap = 0.0;
  EXPECT_EQ(SelectReference(query, 3, p.graph, db, OnlineConfig{}, &overlap), 0);
  EXPECT_EQ(overlap, SymmetricOverlap(query, views[0]));
}

TEST(SelectReference, FallsBackToLargestOverlap) {
  const std::vector<ViewParams> views = {MakeView(0, 0, 1500), MakeView(90, 0, 1500),
                                         MakeView(180, 0, 1500)};
  const ViewParams query = MakeView(60, 0, 1500);
  const Planted p = Plant(views, 100, 3);
  const ReferenceDatabase db(ReferenceReconstruction(views, {0, 1, 2}));
  OnlineConfig config;
  config.overlap_threshold = 0.99;
  EXPECT_EQ(SelectReference(query, 0, p.graph, db, config), 1);
}

TEST(BootstrapEstimate, IdenticalFrame) {
  const std::vector<ViewParams> views = {MakeView(0, -10, 1500, 0.05),
                                         MakeView(0, -10, 1500, 0.05)};
  const Planted p = Plant(views, 2000, 4);
  const auto r = BootstrapEstimate(p.graph, 1, 0, views[0], OnlineConfig{});
  ASSERT_TRUE(r.has_value());
  EXPECT_NEAR(r->view.intrinsics.f, 1500, 1e-9);
  EXPECT_NEAR(r->view.intrinsics.k1, 0.05, 1e-9);
  EXPECT_LT(RotationAngle(r->view.pose.rotation, views[0].pose.rotation), 1e-9);
}

TEST(BootstrapEstimate, FiveDegreePan) {
  const std::vector<ViewParams> views = {MakeView(0, -10, 1500, 0.05),
                                         MakeView(5, -10, 1500, 0.05)};
  const Planted p = Plant(views, 3000, 5);
  OnlineConfig config;
  config.solver.max_iterations = 200;
  const auto r = BootstrapEstimate(p.graph, 1, 0, views[0], config, true);
  ASSERT_TRUE(r.has_value());
  EXPECT_LT(RotationAngle(r->view.pose.rotation, views[1].pose.rotation), 1e-6);
}

TEST(BootstrapEstimate, TooFewMatches) {
  std::vector<ViewParams> views = {MakeView(0, -10, 1500), MakeView(5, -10, 1500)};
  Planted p = Plant(views, 3000, 6);
  MatchGraph g = p.graph.WithoutEdges();
  MatchSet m = *p.graph.Find(0, 1);
  m.pairs.resize(3);
  g.AddMatchSet(m);
  EXPECT_FALSE(BootstrapEstimate(g, 1, 0, views[0], OnlineConfig{}).has_value());
}

TEST(Localize, NoiseFreeNovelView) {
  const std::vector<ViewParams> views = {MakeView(0, -10, 1500, 0.05),
                                         MakeView(7, -12, 1800, 0.05)};
  const Planted p = Plant(views, 3000, 7);
  const ReferenceDatabase db(ReferenceReconstruction(views, {0}));
  OnlineConfig config;
  config.solver.max_iterations = 200;
  ViewParams estimate = views[0];
  estimate.intrinsics.f = 1700;
  estimate.pose.rotation = views[1].pose.rotation * ExpSO3(Eigen::Vector3d(0.01, 0.02, 0));
  const auto r = Localize(p.graph, 1, 0, db, estimate, config);
  ASSERT_TRUE(r.has_value());
  EXPECT_LT(std::abs(r->view.intrinsics.f - 1800), 1e-2);
  EXPECT_LT(RotationAngle(r->view.pose.rotation, views[1].pose.rotation), 1e-4 * kDeg);
}

TEST(Localize, RobustToOutliers) {
  const std::vector<ViewParams> views = {MakeView(0, -10, 1500), MakeView(6, -11, 1600)};
  const ReferenceDatabase db(ReferenceReconstruction(views, {0}));
  OnlineConfig config;
  config.solver.max_iterations = 200;
  double errors[2];
  for (int k = 0; k < 2; ++k) {
    const Planted p = Plant(views, 3000, 8, 1.0, k == 0 ? 0.0 : 0.3);
    const auto r = Localize(p.graph, 1, 0, db, views[0], config);
    ASSERT_TRUE(r.has_value());
    errors[k] = RotationAngle(r->view.pose.rotation, views[1].pose.rotation);
  }
  EXPECT_LT(errors[1], 2.0 * errors[0]);
}

TEST(LocalizeQueries, BeatsBootstrapChainAndIsDeterministic) {
  SceneConfig sc;
  sc.seed = 4;
  sc.num_views = 60;
  sc.num_ref_views = 12;
  sc.pan_range_deg = 120;
  const Scene scene = GenerateScene(sc);
  RansacOptions ro;
  ro.seed = 4;
  const MatchGraph graph = VerifyGraph(scene.query_matches, ro);
  Reconstruction refs;
  refs.shared_distortion = true;
  for (const ViewId id : scene.truth.reference_views) {
    refs.views[id] = scene.truth.LocalView(id);
    refs.registered.push_back(id);
  }
  const ReferenceDatabase db(refs);
  OnlineConfig config;
  const auto results = LocalizeQueries(db, graph, scene.truth.query_views, config);
  ASSERT_EQ(results.size(), scene.truth.query_views.size());

  // Bootstrap-only chain from the same first estimate.
  double localized_error = 0.0;
  double chain_error = 0.0;
  int count = 0;
  ViewParams previous = results.front().params;
  for (size_t i = 0; i < results.size(); ++i) {
    const ViewId q = results[i].view_id;
    const ViewParams truth = scene.truth.LocalView(q);
    ASSERT_EQ(results[i].status, "localized") << q;
    if (i > 0) {
      const auto boot = BootstrapEstimate(graph, q, results[i - 1].view_id, previous,
                                          config, true);
      if (!boot) {
        // The chain breaks where consecutive frames lost their edge.
        previous = results[i].params;
        continue;
      }
      previous = boot->view;
      chain_error += RotationAngle(previous.pose.rotation, truth.pose.rotation);
      localized_error += RotationAngle(results[i].params.pose.rotation, truth.pose.rotation);
      ++count;
    }
  }
  ASSERT_GT(count, static_cast<int>(results.size()) / 2);
  EXPECT_LE(localized_error / count, chain_error / count);

  const auto again = LocalizeQueries(db, graph, scene.truth.query_views, config);
  for (size_t i = 0; i < results.size(); ++i) {
    EXPECT_EQ(again[i].params.pose.rotation.coeffs(), results[i].params.pose.rotation.coeffs());
    EXPECT_EQ(again[i].params.intrinsics.f, results[i].params.intrinsics.f);
    EXPECT_EQ(again[i].reference, results[i].reference);
  }
}

TEST(LocalizeQueries, StatelessModeLocalizes) {
  const std::vector<ViewParams> views = {MakeView(0, -10, 1500), MakeView(10, -10, 1500),
                                         MakeView(5, -9, 1600)};
  const Planted p = Plant(views, 3000, 9);
  const ReferenceDatabase db(ReferenceReconstruction(views, {0, 1}));
  OnlineConfig config;
  config.sequential = false;
  const auto results = LocalizeQueries(db, p.graph, {2}, config);
  ASSERT_EQ(results.size(), 1u);
  EXPECT_EQ(results[0].status, "localized");
  EXPECT_EQ(results[0].bootstrap_from, -1);
  EXPECT_LT(RotationAngle(results[0].params.pose.rotation, views[2].pose.rotation), 1e-6);
}

TEST(ReferenceDatabase, LandmarkLookupByExactPixel) {
  Reconstruction r;
  r.views[0] = MakeView(0, 0, 1000);
  r.registered = {0};
  Track t;
  t.id = 7;
  t.elements.push_back({0, 0, Eigen::Vector2d(100.25, 200.5)});
  r.tracks[7] = t;
  r.landmarks[7] = RayLandmark{Eigen::Vector3d(0, 0.6, 0.8)};
  const ReferenceDatabase db(r);
  ASSERT_EQ(db.Observations(0).size(), 1u);
  EXPECT_EQ(db.Observations(0)[0].first, 7);
  EXPECT_TRUE(db.LandmarkAt(0, {100.25, 200.5}).has_value());
  EXPECT_FALSE(db.LandmarkAt(0, {100.25, 200.75}).has_value());
  EXPECT_TRUE(db.Observations(3).empty());
}

}  // namespace
}  // namespace ptzcalib
