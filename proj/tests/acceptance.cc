// End-to-end acceptance run: one PASS/FAIL line per criterion, details
// indented below it. Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "oracles.h"
#include "ptzcalib/pipeline.h"
#include "ptzcalib/residuals.h"

using namespace ptzcalib;

namespace {

constexpr double kDeg = M_PI / 180.0;
const std::vector<uint64_t> kSeeds = {1, 2, 3};

using Clock = std::chrono::steady_clock;

double Since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct SceneRun {
  uint64_t seed = 0;
  double sigma = 0.0;
  Scene scene;
  Reconstruction recon;
  GeorefOutcome geo;
  std::vector<QueryResult> queries;
  std::vector<MetricReport> reports;
  double seconds = 0.0;
  std::string recon_text;
  std::string geo_text;
  std::string query_text;
};

PipelineConfig AcceptanceConfig(uint64_t seed, double sigma) {
  PipelineConfig config;
  config.seed = seed;
  config.ApplySeed();
  config.scene.noise_sigma_px = sigma;
  config.iba.share_distortion = true;
  config.Validate();
  return config;
}

SceneRun RunScene(uint64_t seed, double sigma, bool with_iou) {
  const auto start = Clock::now();
  SceneRun run;
  run.seed = seed;
  run.sigma = sigma;
  const PipelineConfig config = AcceptanceConfig(seed, sigma);
  run.scene = GenerateScene(config.scene);
  run.recon = Calibrate(run.scene.reference_matches, config);
  run.recon_text = SerializeReconstruction(run.recon);
  run.geo = Georeference(run.recon, run.scene.annotations, config);
  if (run.geo.result.geo) {
    const Reconstruction& db = run.geo.result.geo->reconstruction;
    run.geo_text = SerializeReconstruction(db);
    run.queries = LocalizeMatches(db, run.scene.query_matches, config);
    const CameraFile queries = QueryCameraFile(run.queries, db);
    run.query_text = SerializeCameras(queries);

    CameraFile all;
    all.cameras = db.views;
    all.cameras.insert(queries.cameras.begin(), queries.cameras.end());
    all.transform = db.transform;
    run.reports = EvaluateCameras(all, run.scene.truth, "seed" + std::to_string(seed),
                                  config.iou, with_iou);
  }
  run.seconds = Since(start);
  return run;
}

std::vector<SceneRun> RunScenes(double sigma, bool with_iou, int jobs) {
  std::vector<SceneRun> runs(kSeeds.size());
  std::vector<std::thread> pool;
  size_t next = 0;
  while (next < kSeeds.size()) {
    for (int k = 0; k < jobs && next < kSeeds.size(); ++k, ++next) {
      pool.emplace_back([&runs, next, sigma, with_iou] {
        runs[next] = RunScene(kSeeds[next], sigma, with_iou);
      });
    }
    for (auto& t : pool) t.join();
    pool.clear();
  }
  return runs;
}

int failures = 0;

void Report(int id, bool pass, const std::string& title, const std::vector<std::string>& details) {
  std::printf("[%s] %d. %s\n", pass ? "PASS" : "FAIL", id, title.c_str());
  for (const auto& d : details) std::printf("    %s\n", d.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string Format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

const MetricReport* FindReport(const SceneRun& run, const std::string& stage) {
  for (const auto& r : run.reports) {
    if (r.stage == stage) return &r;
  }
  return nullptr;
}

struct Pooled {
  std::vector<double> fle, rot, trans, iou_part, iou_whole;
  int missing = 0;
};

Pooled Pool(const std::vector<SceneRun>& runs, const std::string& stage, size_t expected_per_scene) {
  Pooled p;
  for (const auto& run : runs) {
    const MetricReport* r = FindReport(run, stage);
    if (!r) {
      p.missing += static_cast<int>(expected_per_scene);
      continue;
    }
    p.missing += static_cast<int>(r->missing.size());
    for (const auto& v : r->views) {
      p.fle.push_back(v.fle_px);
      p.rot.push_back(v.ape_rot_deg);
      if (v.ape_trans_m) p.trans.push_back(*v.ape_trans_m);
      if (v.iou_part) p.iou_part.push_back(*v.iou_part);
      if (v.iou_whole) p.iou_whole.push_back(*v.iou_whole);
    }
  }
  return p;
}

double Mean(const std::vector<double>& v) {
  return v.empty() ? NAN : Summarize(v).mean;
}

double Max(const std::vector<double>& v) {
  return v.empty() ? NAN : *std::max_element(v.begin(), v.end());
}

double StageMean(const MetricReport* r, double ViewMetrics::*field) {
  if (!r || r->views.empty()) return NAN;
  std::vector<double> v;
  for (const auto& m : r->views) v.push_back(m.*field);
  return Mean(v);
}

double StageMeanTrans(const MetricReport* r) {
  if (!r) return NAN;
  std::vector<double> v;
  for (const auto& m : r->views) {
    if (m.ape_trans_m) v.push_back(*m.ape_trans_m);
  }
  return Mean(v);
}

void Criterion1(const std::vector<SceneRun>& runs, double total_seconds) {
  std::vector<std::string> details;
  bool pass = true;
  for (const auto& run : runs) {
    const MetricReport* off = FindReport(run, "offline");
    const MetricReport* on = FindReport(run, "online");
    int localized = 0;
    for (const auto& q : run.queries) localized += q.status != "failed";
    details.push_back(Format(
        "seed %llu: registered %zu/%zu, status %s, queries %d/%zu, offline FLE %.3f rot %.4f "
        "trans %.4f | online FLE %.3f rot %.4f | %.1f s",
        (unsigned long long)run.seed, run.recon.registered.size(),
        run.scene.truth.reference_views.size(), run.recon.status.c_str(), localized,
        run.queries.size(), StageMean(off, &ViewMetrics::fle_px),
        StageMean(off, &ViewMetrics::ape_rot_deg), StageMeanTrans(off),
        StageMean(on, &ViewMetrics::fle_px), StageMean(on, &ViewMetrics::ape_rot_deg),
        run.seconds));
    if (!run.geo.result.geo) {
      details.push_back("  georeferencing failed: " + run.geo.error);
      pass = false;
    }
  }
  const Pooled off = Pool(runs, "offline", 30);
  const Pooled on = Pool(runs, "online", 150);
  const double off_fle = Mean(off.fle), off_rot = Mean(off.rot), off_trans = Mean(off.trans);
  const double on_fle = Mean(on.fle), on_rot = Mean(on.rot);
  details.push_back(Format("offline mean FLE %.3f px (<= 5), APE_rot %.4f deg (<= 0.5), "
                           "APE_trans %.4f m (<= 0.3); %d views missing",
                           off_fle, off_rot, off_trans, off.missing));
  details.push_back(Format("online mean FLE %.3f px (<= 5), APE_rot %.4f deg (<= 0.5); "
                           "%d queries missing", on_fle, on_rot, on.missing));
  details.push_back(Format("IoU_part / IoU_whole (informational): offline %.4f / %.4f, "
                           "online %.4f / %.4f", Mean(off.iou_part), Mean(off.iou_whole),
                           Mean(on.iou_part), Mean(on.iou_whole)));
  details.push_back(Format("runtime %.1f s (< 300)", total_seconds));
  pass = pass && off.missing == 0 && on.missing == 0 && off_fle <= 5.0 && off_rot <= 0.5 &&
         off_trans <= 0.3 && on_fle <= 5.0 && on_rot <= 0.5 && total_seconds < 300.0;
  Report(1, pass, "three-scene replication at sigma = 3 px (offline and online)", details);
}

void Criterion2(const std::vector<SceneRun>& runs) {
  std::vector<std::string> details;
  bool pass = true;
  for (const auto& run : runs) {
    std::vector<double> fle, rot, trans;
    int missing = 0;
    for (const auto& r : run.reports) {
      missing += static_cast<int>(r.missing.size());
      for (const auto& v : r.views) {
        fle.push_back(v.fle_px);
        rot.push_back(v.ape_rot_deg);
        trans.push_back(v.ape_trans_m.value_or(INFINITY));
      }
    }
    const size_t expected = run.scene.truth.views.size();
    const bool ok = fle.size() == expected && missing == 0 && Max(fle) < 1e-2 &&
                    Max(rot) < 1e-3 && Max(trans) < 1e-3;
    details.push_back(Format("seed %llu: %zu/%zu views, max FLE %.2e px, max APE_rot %.2e deg, "
                             "max APE_trans %.2e m, %.1f s",
                             (unsigned long long)run.seed, fle.size(), expected, Max(fle),
                             Max(rot), Max(trans), run.seconds));
    pass = pass && ok;
  }
  Report(2, pass, "noise-free exactness on every view (sigma = 0)", details);
}

void Criterion3(const std::vector<SceneRun>& runs) {
  std::vector<std::string> details;
  bool pass = true;
  for (const auto& run : runs) {
    double worst = 0.0;
    const auto& views = run.geo.result.geo ? run.geo.result.geo->reconstruction.views
                                           : run.recon.views;
    for (const auto& [id, v] : views) {
      worst = std::max(worst, std::abs(v.intrinsics.k1 - run.scene.truth.views.at(id).intrinsics.k1));
    }
    const double true_k1 = run.scene.truth.views.begin()->second.intrinsics.k1;
    details.push_back(Format("seed %llu: true k1 %+.4f, max |k1 error| %.5f (< 0.01)",
                             (unsigned long long)run.seed, true_k1, worst));
    pass = pass && !views.empty() && worst < 0.01;
  }
  Report(3, pass, "radial distortion k1 recovered at sigma = 3 px", details);
}

void Criterion4() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> focal(800.0, 4000.0);
  std::uniform_real_distribution<double> k(-0.2, 0.2);
  std::uniform_real_distribution<double> p(-0.01, 0.01);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto quat = [](const Eigen::Quaterniond& q) {
    return std::vector<double>{q.w(), q.x(), q.y(), q.z()};
  };
  double worst_ray = 0.0, worst_point = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double f = focal(rng);
    const std::vector<double> coeffs = {k(rng), 0.25 * k(rng), p(rng), p(rng)};
    const Eigen::Quaterniond r = ExpSO3(Eigen::Vector3d(n(rng), n(rng), n(rng)));
    const Eigen::Vector3d cam = Eigen::Vector3d(u(rng), 0.6 * u(rng), 1.0).normalized();

    const Eigen::Vector3d ray = r.conjugate() * cam;
    const RayReprojectionCost ray_cost({500.0, 500.0}, 960.0, 540.0);
    worst_ray = std::max(worst_ray, CheckJacobian(ray_cost, {{f}, coeffs, quat(r),
                                                             {ray.x(), ray.y(), ray.z()}}));

    RigidTransform t;
    t.rotation = ExpSO3(Eigen::Vector3d(n(rng), n(rng), n(rng)));
    t.translation = 20.0 * Eigen::Vector3d(n(rng), n(rng), n(rng));
    const Eigen::Vector3d world = t.Inverse() * (r.conjugate() * (50.0 * cam));
    const PointReprojectionCost point_cost({300.0, 400.0}, world, 960.0, 540.0);
    worst_point = std::max(
        worst_point,
        CheckJacobian(point_cost, {{f}, coeffs, quat(r), quat(t.rotation),
                                   {t.translation.x(), t.translation.y(), t.translation.z()}}));
  }
  Report(4, worst_ray < 1e-5 && worst_point < 1e-5,
         "analytic Jacobians match finite differences at 100 random points",
         {Format("ray reprojection: worst %.2e (< 1e-5)", worst_ray),
          Format("annotation reprojection: worst %.2e (< 1e-5)", worst_point)});
}

void Criterion5() {
  std::vector<std::string> details;
  std::mt19937_64 rng(505);

  int closure_ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> views(3, 12);
    const int n = views(rng);
    const MatchGraph graph = oracle::RandomGraph(rng, n, 20, std::min(12, n * (n - 1) / 2), 10);
    closure_ok += oracle::TrackComponents(BuildTracks(graph)) == oracle::ClosureComponents(graph);
  }
  details.push_back(Format("build_tracks = transitive closure on %d/50 graphs", closure_ok));

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Polygon2 field = {{-52.5, -34}, {52.5, -34}, {52.5, 34}, {-52.5, 34}};
  double worst_iou = 0.0;
  int iou_pairs = 0;
  while (iou_pairs < 100) {
    const Eigen::Vector3d center(20 * unit(rng), -55 + 5 * unit(rng), 15 + 5 * unit(rng));
    const Eigen::Vector3d target(40 * unit(rng), 20 * unit(rng), 0);
    const double f = 1400 + 300 * unit(rng);
    const double k1 = 0.15 * unit(rng);
    const double k2 = 0.03 * unit(rng);
    const ViewParams truth = oracle::LookAt(center, target, f, k1, k2);
    const ViewParams pred = oracle::LookAt(
        center + Eigen::Vector3d(unit(rng), unit(rng), 0.3 * unit(rng)),
        target + Eigen::Vector3d(8 * unit(rng), 8 * unit(rng), 0), f * (1 + 0.05 * unit(rng)),
        k1, k2);
    const double iou = IouBev(pred, truth, field, IouMode::kPart);
    worst_iou = std::max(worst_iou, std::abs(iou - oracle::RasterPartIoU(pred, truth, field)));
    ++iou_pairs;
  }
  details.push_back(Format("polygon IoU vs 2048^2 raster: worst |diff| %.4f over 100 pairs (<= 0.005)",
                           worst_iou));

  double worst_overlap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const double k1 = 0.2 * unit(rng);
    const double k2 = 0.05 * unit(rng);
    const Eigen::Vector3d c(0, 0, 10);
    const double pan_a = M_PI * unit(rng);
    const double pan_b = pan_a + 40 * kDeg * unit(rng);
    const auto view = [&](double pan) {
      const double tilt = -20 * kDeg + 15 * kDeg * unit(rng);
      const Eigen::Vector3d dir(std::cos(tilt) * std::cos(pan), std::cos(tilt) * std::sin(pan),
                                std::sin(tilt));
      return oracle::LookAt(c, c + dir, 1100 + 1700 * (0.5 + 0.5 * unit(rng)), k1, k2);
    };
    const ViewParams a = view(pan_a);
    const ViewParams b = view(pan_b);
    worst_overlap = std::max(worst_overlap,
                             std::abs(FrustumOverlap(a, b) - oracle::GridOverlap(a, b, 512)));
  }
  details.push_back(Format("frustum_overlap vs 512^2 grid: worst |diff| %.4f over 50 pairs (<= 0.05)",
                           worst_overlap));
  Report(5, closure_ok == 50 && worst_iou <= 0.005 && worst_overlap <= 0.05,
         "oracle equivalences (tracks, polygon IoU, frustum overlap)", details);
}

double WorstUnitDeviation(const Reconstruction& r) {
  double worst = 0.0;
  for (const auto& [id, v] : r.views) worst = std::max(worst, std::abs(v.pose.rotation.norm() - 1.0));
  for (const auto& [id, l] : r.landmarks) worst = std::max(worst, std::abs(l.dir.norm() - 1.0));
  if (r.transform) worst = std::max(worst, std::abs(r.transform->rotation.norm() - 1.0));
  return worst;
}

void Criterion6(const std::vector<SceneRun>& runs) {
  std::vector<std::string> details;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  double worst_distort = 0.0, worst_pixel = 0.0;
  for (const auto& run : runs) {
    const ViewParams& sample = run.scene.truth.views.begin()->second;
    for (int i = 0; i < 2000; ++i) {
      ViewParams view = sample;
      view.intrinsics.f = 1100 + 1700 * (0.5 + 0.5 * unit(rng));
      const double rmax = std::sqrt(std::min(0.9 * view.intrinsics.MonotoneRadius2(), 0.5));
      Eigen::Vector2d x(unit(rng), unit(rng));
      x *= rmax * std::sqrt(0.5 + 0.5 * unit(rng)) / std::max(x.norm(), 1e-12);
      const auto back = Undistort(Distort(x, view.intrinsics), view.intrinsics);
      worst_distort = std::max(worst_distort, back ? (*back - x).norm() : INFINITY);

      const Eigen::Vector2d px(960 + 950 * unit(rng), 540 + 530 * unit(rng));
      const auto ray = PixelToRay(view, px);
      if (!ray) continue;
      const auto again = ProjectRay(view, *ray);
      worst_pixel = std::max(worst_pixel, again ? (*again - px).norm() : INFINITY);
    }
  }
  details.push_back(Format("undistort(distort(x)) worst %.2e (< 1e-10)", worst_distort));
  details.push_back(Format("project_ray(pixel_to_ray(u)) worst %.2e px (< 1e-6)", worst_pixel));

  double worst_norm = 0.0;
  bool monotone = true;
  int ba_runs = 0;
  for (const auto& run : runs) {
    worst_norm = std::max(worst_norm, WorstUnitDeviation(run.recon));
    for (const auto& e : run.recon.ba_log) {
      monotone = monotone && e.final_cost <= e.initial_cost;
      ++ba_runs;
    }
    if (run.geo.result.geo) {
      worst_norm = std::max(worst_norm, WorstUnitDeviation(run.geo.result.geo->reconstruction));
      const auto& costs = run.geo.result.report.accepted_costs;
      for (size_t i = 1; i < costs.size(); ++i) monotone = monotone && costs[i] <= costs[i - 1];
      ++ba_runs;
    }
    for (const auto& q : run.queries) {
      if (q.status != "failed") {
        worst_norm = std::max(worst_norm, std::abs(q.params.pose.rotation.norm() - 1.0));
      }
    }
  }
  details.push_back(Format("unit quaternions/rays after calibrate, georef, localize: worst "
                           "deviation %.2e (< 1e-9)", worst_norm));
  details.push_back(Format("bundle adjustment cost non-increasing in %d logged solves: %s",
                           ba_runs, monotone ? "yes" : "no"));
  Report(6, worst_distort < 1e-10 && worst_pixel < 1e-6 && worst_norm < 1e-9 && monotone,
         "round trips and invariants", details);
}

void Criterion7(const SceneRun& first) {
  const SceneRun again = RunScene(first.seed, first.sigma, false);
  const bool recon = again.recon_text == first.recon_text;
  const bool geo = again.geo_text == first.geo_text;
  const bool query = again.query_text == first.query_text;
  const bool truth = SerializeGroundTruth(again.scene.truth) == SerializeGroundTruth(first.scene.truth) &&
                     SerializeMatches(again.scene.reference_matches) ==
                         SerializeMatches(first.scene.reference_matches);
  Report(7, recon && geo && query && truth && !first.recon_text.empty(),
         "byte-identical outputs for the same seed",
         {Format("seed %llu rerun: scene %s, reconstruction %s, georeferenced %s, queries %s",
                 (unsigned long long)first.seed, truth ? "same" : "DIFFERENT",
                 recon ? "same" : "DIFFERENT", geo ? "same" : "DIFFERENT",
                 query ? "same" : "DIFFERENT")});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  int jobs = 1;
  app.add_option("--jobs", jobs, "Scenes run in parallel")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const auto start = Clock::now();
  const auto noisy_start = Clock::now();
  const std::vector<SceneRun> noisy = RunScenes(3.0, true, jobs);
  const double noisy_seconds = Since(noisy_start);
  Criterion1(noisy, noisy_seconds);

  const std::vector<SceneRun> exact = RunScenes(0.0, false, jobs);
  Criterion2(exact);
  Criterion3(noisy);
  Criterion4();
  Criterion5();
  Criterion6(noisy);
  Criterion7(noisy.front());
  std::printf("[EXCLUDED] 8. WorldCup IoU and wall-clock timing tables: need external datasets "
              "and learned matchers; covered by criteria 1-7\n");
  std::printf("total %.1f s, %d criteria failed\n", Since(start), failures);
  return failures == 0 ? 0 : 1;
}
