#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ptzcalib/pipeline.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ptzcalib;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kAlgorithmFailure = 2;

// Raised for failures of the algorithm itself, as opposed to bad input.
struct AlgorithmError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  uint64_t seed = 1;
  bool seed_set = false;
  std::string log_path;
};

PipelineConfig MakeConfig(const Common& common) {
  PipelineConfig config;
  if (!common.config_path.empty()) config = LoadPipelineConfig(common.config_path);
  if (common.seed_set) config.seed = common.seed;
  config.ApplySeed();
  return config;
}

std::string Timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// Timings and timestamps go only to the optional log file.
void WriteLog(const Common& common, json log) {
  if (common.log_path.empty()) return;
  log["written_at"] = Timestamp();
  WriteFile(common.log_path, log.dump(1) + "\n");
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

void AddCommon(CLI::App* cmd, Common* common) {
  cmd->add_option("--config", common->config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option_function<uint64_t>(
      "--seed", [common](uint64_t s) { common->seed = s; common->seed_set = true; },
      "Global seed");
  cmd->add_option("--log", common->log_path, "Write a run log (timings) here");
}

int RunSynth(const Common& common, const std::string& out, int scenes, int jobs,
             std::optional<double> sigma) {
  PipelineConfig base = MakeConfig(common);
  if (sigma) base.scene.noise_sigma_px = *sigma;
  base.Validate();
  std::vector<uint64_t> seeds;
  for (int i = 0; i < scenes; ++i) seeds.push_back(base.seed + i);
  std::vector<std::string> errors(seeds.size());
  std::vector<std::vector<std::string>> warnings(seeds.size());
  const auto work = [&](size_t i) {
    PipelineConfig config = base;
    config.seed = seeds[i];
    config.ApplySeed();
    const fs::path dir = scenes == 1 ? fs::path(out)
                                     : fs::path(out) / ("scene_" + std::to_string(seeds[i]));
    try {
      const Scene scene = GenerateScene(config.scene);
      WriteScene(scene, dir);
      warnings[i] = scene.warnings;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  std::vector<std::thread> pool;
  size_t next = 0;
  const size_t width = std::max(1, jobs);
  while (next < seeds.size()) {
    for (size_t k = 0; k < width && next < seeds.size(); ++k) pool.emplace_back(work, next++);
    for (auto& t : pool) t.join();
    pool.clear();
  }
  for (size_t i = 0; i < seeds.size(); ++i) {
    for (const auto& w : warnings[i]) std::cerr << "warning: seed " << seeds[i] << ": " << w << "\n";
    if (!errors[i].empty()) throw std::runtime_error(errors[i]);
  }
  return kOk;
}

int RunCalibrate(const Common& common, const std::string& matches, const std::string& out,
                 bool share_distortion) {
  PipelineConfig config = MakeConfig(common);
  if (share_distortion) config.iba.share_distortion = true;
  config.Validate();
  const MatchGraph graph = LoadMatches(matches);
  const auto start = std::chrono::steady_clock::now();
  const Reconstruction recon = Calibrate(graph, config);
  const double seconds = Seconds(start);
  WriteFile(out, SerializeReconstruction(recon));
  WriteLog(common, {{"command", "calibrate"}, {"seconds", seconds}});
  std::cerr << "registered " << recon.registered.size() << "/" << graph.Views().size()
            << " views, status " << recon.status << "\n";
  if (recon.status == "failed") throw AlgorithmError("reconstruction failed");
  if (recon.status == "partial") std::cerr << "warning: partial reconstruction\n";
  return kOk;
}

int RunGeoref(const Common& common, const std::string& recon_path,
              const std::string& annotations_path, const std::string& out) {
  PipelineConfig config = MakeConfig(common);
  config.Validate();
  const Reconstruction recon = LoadReconstruction(recon_path);
  const auto annotations = LoadAnnotations(annotations_path);
  const auto start = std::chrono::steady_clock::now();
  const GeorefOutcome outcome = Georeference(recon, annotations, config);
  const double seconds = Seconds(start);
  if (!outcome.result.geo) throw AlgorithmError(outcome.error);
  WriteFile(out, SerializeReconstruction(outcome.result.geo->reconstruction));
  const auto& report = outcome.result.report;
  WriteLog(common, {{"command", "georef"},
                    {"seconds", seconds},
                    {"initial_cost", report.initial_cost},
                    {"final_cost", report.final_cost},
                    {"iterations", report.iterations},
                    {"flagged_annotations", outcome.result.flagged}});
  if (!outcome.result.flagged.empty()) {
    std::cerr << "warning: " << outcome.result.flagged.size()
              << " annotations exceed the residual threshold\n";
  }
  return kOk;
}

int RunLocalize(const Common& common, const std::string& db_path, const std::string& matches,
                const std::string& out, bool sequential, bool stateless) {
  PipelineConfig config = MakeConfig(common);
  if (sequential) config.online.sequential = true;
  if (stateless) config.online.sequential = false;
  config.Validate();
  const Reconstruction db = LoadReconstruction(db_path);
  const MatchGraph graph = LoadMatches(matches);
  const auto start = std::chrono::steady_clock::now();
  const auto results = LocalizeMatches(db, graph, config);
  const double seconds = Seconds(start);
  WriteFile(out, SerializeCameras(QueryCameraFile(results, db)));
  int failed = 0;
  for (const auto& q : results) failed += q.status == "failed";
  WriteLog(common, {{"command", "localize"}, {"seconds", seconds}, {"queries", results.size()}});
  std::cerr << "localized " << results.size() - failed << "/" << results.size() << " queries\n";
  if (!results.empty() && failed == static_cast<int>(results.size())) {
    throw AlgorithmError("no query could be localized");
  }
  return kOk;
}

Polygon2 LoadTemplate(const std::string& path) {
  json doc;
  try {
    doc = json::parse(ReadFile(path));
  } catch (const json::exception& e) {
    throw ParseError(path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("template") || !doc["template"].is_array()) {
    throw ParseError(path + ": missing 'template' array");
  }
  Polygon2 polygon;
  for (const auto& p : doc["template"]) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw ParseError(path + ": template vertices must be [x, y]");
    }
    polygon.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  if (polygon.size() < 3) throw ParseError(path + ": template needs 3 vertices");
  return polygon;
}

int RunEval(const Common& common, const std::string& pred_path, const std::string& truth_path,
            const std::string& template_path, const std::string& scene,
            const std::string& out, bool with_iou) {
  const PipelineConfig config = MakeConfig(common);
  const CameraFile pred = LoadCameras(pred_path);
  GroundTruth truth = LoadGroundTruth(truth_path);
  if (!template_path.empty()) truth.template_polygon = LoadTemplate(template_path);
  std::vector<MetricReport> reports;
  try {
    reports = EvaluateCameras(pred, truth, scene, config.iou, with_iou);
  } catch (const std::invalid_argument& e) {
    throw AlgorithmError(e.what());
  }
  if (reports.empty()) throw AlgorithmError("no predicted view matches the ground truth");
  json doc = SummarizeReports(reports);
  json per_view = json::array();
  for (const auto& r : reports) {
    for (const auto& v : r.views) {
      json row = {{"scene", r.scene}, {"stage", r.stage}, {"view_id", v.view_id},
                  {"fle_px", v.fle_px}, {"ape_rot_deg", v.ape_rot_deg}};
      if (v.ape_trans_m) row["ape_trans_m"] = *v.ape_trans_m;
      if (v.iou_part) row["iou_part"] = *v.iou_part;
      if (v.iou_whole) row["iou_whole"] = *v.iou_whole;
      per_view.push_back(row);
    }
    doc["missing"][r.stage] = r.missing;
  }
  doc["views"] = per_view;
  doc["frame"] = pred.transform ? "world" : "local-aligned";
  WriteFile(out, doc.dump(1) + "\n");
  std::cout << FormatSummary(doc);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PTZ camera calibration: synthesize, calibrate, georeference, localize, evaluate"};
  app.set_version_flag("--version", PTZCALIB_VERSION);
  app.require_subcommand(1);

  Common common;
  int exit_code = kOk;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  AddCommon(synth, &common);
  std::string synth_out;
  int scenes = 1;
  int jobs = 1;
  std::optional<double> sigma;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scenes", scenes, "Number of scenes (seeds seed..seed+N-1)")
      ->check(CLI::PositiveNumber);
  synth->add_option("--jobs", jobs, "Scenes generated in parallel")->check(CLI::PositiveNumber);
  synth->add_option_function<double>("--sigma", [&](double s) { sigma = s; },
                                     "Observation noise (pixels)");

  auto* calibrate = app.add_subcommand("calibrate", "Offline calibration from a match file");
  AddCommon(calibrate, &common);
  std::string matches, calib_out;
  bool share = false;
  calibrate->add_option("--matches", matches, "Match file")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--out", calib_out, "Reconstruction file")->required();
  calibrate->add_flag("--share-distortion", share, "One distortion model for all views");

  auto* georef = app.add_subcommand("georef", "Georeference a reconstruction");
  AddCommon(georef, &common);
  std::string recon_path, annotations_path, georef_out;
  georef->add_option("--recon", recon_path, "Reconstruction file")->required()->check(CLI::ExistingFile);
  georef->add_option("--annotations", annotations_path, "Annotation file")
      ->required()->check(CLI::ExistingFile);
  georef->add_option("--out", georef_out, "Georeferenced reconstruction file")->required();

  auto* localize = app.add_subcommand("localize", "Localize query views against a database");
  AddCommon(localize, &common);
  std::string db_path, query_matches, localize_out;
  bool sequential = false, stateless = false;
  localize->add_option("--db", db_path, "Reference reconstruction")->required()->check(CLI::ExistingFile);
  localize->add_option("--matches", query_matches, "Query match file")
      ->required()->check(CLI::ExistingFile);
  localize->add_option("--out", localize_out, "Camera file for the queries")->required();
  auto* seq_flag = localize->add_flag("--sequential", sequential, "Bootstrap from the previous frame");
  localize->add_flag("--stateless", stateless, "Match every query against references only")
      ->excludes(seq_flag);

  auto* eval = app.add_subcommand("eval", "Compare parameters with ground truth");
  AddCommon(eval, &common);
  std::string pred_path, truth_path, template_path, scene_name = "scene", eval_out;
  bool no_iou = false;
  eval->add_option("--pred", pred_path, "Camera or reconstruction file")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", truth_path, "Ground truth file")->required()->check(CLI::ExistingFile);
  eval->add_option("--template", template_path, "Ground polygon file")->check(CLI::ExistingFile);
  eval->add_option("--scene", scene_name, "Scene label for the table");
  eval->add_option("--out", eval_out, "Metric table (JSON)")->required();
  eval->add_flag("--no-iou", no_iou, "Skip the BEV IoU metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*synth) exit_code = RunSynth(common, synth_out, scenes, jobs, sigma);
    if (*calibrate) exit_code = RunCalibrate(common, matches, calib_out, share);
    if (*georef) exit_code = RunGeoref(common, recon_path, annotations_path, georef_out);
    if (*localize) {
      exit_code = RunLocalize(common, db_path, query_matches, localize_out, sequential, stateless);
    }
    if (*eval) {
      exit_code = RunEval(common, pred_path, truth_path, template_path, scene_name, eval_out,
                          !no_iou);
    }
  } catch (const AlgorithmError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAlgorithmFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return exit_code;
}
