// Command-line front end for the ISTR toolkit: corpus synthesis, dataset
// protocols, presence / region / recovery training and evaluation, reports.

#include <cstdlib>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "istr/report.hpp"

using namespace istr;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitStageFailure = 2;

PipelineConfig load_config(const std::string& config_path, uint64_t* seed_override,
                           std::string* out_override, bool deterministic,
                           int workers) {
  PipelineConfig cfg;
  if (!config_path.empty()) cfg = PipelineConfig::from_file(config_path);
  if (seed_override) cfg.seed = *seed_override;
  if (out_override && !out_override->empty()) cfg.out_dir = *out_override;
  cfg.deterministic = deterministic;
  cfg.workers = workers;
  if (const char* cache = std::getenv("ISTR_CACHE_ROOT"); cache && *cache)
    if (cfg.out_dir.is_relative()) cfg.out_dir = fs::path(cache) / cfg.out_dir;
  return cfg;
}

int run_stages(PipelineConfig cfg, std::vector<std::string> stages) {
  cfg.stages = std::move(stages);
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitValidation;
  }
  try {
    run_pipeline(cfg);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitStageFailure;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse scene text removal toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, stage_filter;
  uint64_t seed = 7;
  bool seed_set = false;
  int workers = 1;
  bool deterministic = true;
  app.add_option("--config", config_path, "pipeline config file (JSON)");
  app.add_option("--seed", seed, "master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--workers", workers, "worker count for data-parallel loops");
  app.add_option("--out", out_dir, "output bundle directory");
  app.add_flag("--deterministic,!--no-deterministic", deterministic,
               "bitwise-reproducible mode (default on)");

  auto add_stage_cmd = [&](const std::string& name, const std::string& desc,
                           std::vector<std::string> stages) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->callback([&, stages]() {
      uint64_t* seed_ptr = seed_set ? &seed : nullptr;
      PipelineConfig cfg =
          load_config(config_path, seed_ptr, &out_dir, deterministic, workers);
      std::exit(run_stages(std::move(cfg), stages));
    });
    return sub;
  };

  add_stage_cmd("build-corpus", "render the synthetic corpus", {"corpus"});
  add_stage_cmd("build-datasets", "build protocol manifests 1/2/3",
                {"corpus", "datasets"});
  add_stage_cmd("train-presence", "train the Level-1 presence classifier",
                {"corpus", "datasets", "level1"});
  add_stage_cmd("eval-presence", "evaluate the Level-1 classifier",
                {"corpus", "datasets", "level1"});
  add_stage_cmd("train-region", "train the Level-2 removed-region detector",
                {"corpus", "datasets", "level2"});
  add_stage_cmd("eval-region", "evaluate the Level-2 detector",
                {"corpus", "datasets", "level2"});
  add_stage_cmd("build-recovery", "build the Level-3 recovery dataset",
                {"corpus", "datasets", "level3"});
  add_stage_cmd("train-recovery", "train the Level-3 recognizer",
                {"corpus", "datasets", "level3"});
  add_stage_cmd("eval-recovery", "evaluate the Level-3 recognizer",
                {"corpus", "datasets", "level3"});
  add_stage_cmd("run-all", "run every stage end to end",
                {"corpus", "datasets", "level1", "level2", "level3"});

  // explain: Grad-CAM heatmap for one image and checkpoint.
  std::string explain_image, explain_ckpt, explain_out = "heatmap.png";
  CLI::App* explain_cmd =
      app.add_subcommand("explain", "write a Grad-CAM heatmap for an image");
  explain_cmd->add_option("--image", explain_image, "input image")->required();
  explain_cmd->add_option("--checkpoint", explain_ckpt, "presence checkpoint")
      ->required();
  explain_cmd->add_option("--heatmap-out", explain_out, "output heatmap path");
  explain_cmd->callback([&]() {
    try {
      cv::Mat3b image = cv::imread(explain_image, cv::IMREAD_COLOR);
      if (image.empty()) throw std::runtime_error("cannot read " + explain_image);
      PresenceModel model = PresenceModel::load(explain_ckpt);
      cv::Mat1f cam = model.explain(image);
      cv::Mat1b gray;
      cam.convertTo(gray, CV_8U, 255.0);
      cv::imwrite(explain_out, gray);
      cv::Mat3b heat, overlay;
      cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
      cv::addWeighted(image, 0.6, heat, 0.4, 0, overlay);
      const fs::path p(explain_out);
      cv::imwrite((p.parent_path() / ("overlay_" + p.filename().string())).string(),
                  overlay);
      const PresenceVerdict v = model.classify(image);
      std::cout << "score=" << v.score << " label="
                << (v.str_ed ? "str_ed" : "clean") << "\n";
      std::exit(kExitOk);
    } catch (const std::exception& e) {
      std::cerr << e.what() << "\n";
      std::exit(kExitStageFailure);
    }
  });

  // report: re-emit tables from existing report.json files.
  std::string report_format = "markdown";
  CLI::App* report_cmd =
      app.add_subcommand("report", "emit summary tables from stored reports");
  report_cmd->add_option("--format", report_format, "markdown or structured");
  report_cmd->callback([&]() {
    uint64_t* seed_ptr = seed_set ? &seed : nullptr;
    PipelineConfig cfg =
        load_config(config_path, seed_ptr, &out_dir, deterministic, workers);
    try {
      std::vector<MetricsReport> reports;
      for (const auto& e : fs::recursive_directory_iterator(cfg.out_dir))
        if (e.is_regular_file() && e.path().filename() == "report.json")
          reports.push_back(MetricsReport::load(e.path()));
      if (reports.empty()) throw std::runtime_error("no report.json under " +
                                                    cfg.out_dir.string());
      std::sort(reports.begin(), reports.end(),
                [](const MetricsReport& a, const MetricsReport& b) {
                  return a.stage < b.stage;
                });
      const fs::path out = cfg.out_dir /
                           (report_format == "markdown" ? "report.md" : "report.json");
      emit_report(reports, report_format, out);
      std::cout << "wrote " << out.string() << "\n";
      std::exit(kExitOk);
    } catch (const std::exception& e) {
      std::cerr << e.what() << "\n";
      std::exit(kExitStageFailure);
    }
  });

  CLI11_PARSE(app, argc, argv);
  return kExitOk;
}
