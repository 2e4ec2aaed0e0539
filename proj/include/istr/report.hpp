#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "istr/corpus.hpp"
#include "istr/presence.hpp"
#include "istr/recovery.hpp"
#include "istr/region.hpp"

namespace istr {

struct CorpusConfig {
  int n_scenes = 300;       // with-text scenes (each with a text-free twin)
  int n_test_scenes = 100;  // additional with-text scenes in the test pool
  int n_text_free = 300;    // standalone never-had-text scenes
  int n_text_free_test = 100;
  int canvas = 512;
  int words_min = 1, words_max = 3;
  int font_min = 28, font_max = 64;
  int word_len_min = 3, word_len_max = 6;
  std::string background = "noise";
};

struct PipelineConfig {
  uint64_t seed = 7;
  std::filesystem::path out_dir = "out";
  std::vector<std::string> stages = {"corpus", "datasets", "level1", "level2",
                                     "level3"};
  int workers = 1;
  bool deterministic = true;

  CorpusConfig corpus;

  std::vector<int> protocols = {1, 2, 3};
  StrMethod str_method = StrMethod::MeanFill;
  int mask_dilation = 2;
  double train_fraction = kDefaultTrainFraction;

  int level1_protocol = 1;
  TrainConfig level1;

  RegionTrainConfig level2;
  int level2_min_area = 25;

  RecoveryTrainConfig level3;
  double level3_val_fraction = 0.2;

  static PipelineConfig from_file(const std::filesystem::path& path);
  static PipelineConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  // Throws std::invalid_argument listing every violation, one per line.
  void validate() const;
  // FNV-1a over the canonical JSON dump.
  std::string fingerprint() const;
};

struct MetricsReport {
  std::string stage;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> details;
  std::vector<std::pair<std::string, double>> per_item;
  std::string config_fingerprint;
  std::string toolkit_version = "0.1.0";

  void save(const std::filesystem::path& path) const;
  static MetricsReport load(const std::filesystem::path& path);
};

// Deterministic synthetic corpus per CorpusConfig: with-text scenes with
// twins, a test pool, and standalone text-free scenes for protocol 2.
std::vector<ImageRecord> generate_corpus(const CorpusConfig& cfg, uint64_t seed);

// Runs the requested stages in dependency order with fingerprint caching.
// Returns paths of the reports produced (or reused).
std::vector<std::filesystem::path> run_pipeline(const PipelineConfig& config);

// Markdown tables summarizing every level, with the full-scale reference
// values printed alongside.
std::string emit_report_markdown(const std::vector<MetricsReport>& reports);
void emit_report(const std::vector<MetricsReport>& reports,
                 const std::string& format, const std::filesystem::path& out_path);

// Full-scale reference constants (printed in reports, never computed with).
namespace reference {
// presence accuracy [%], protocols 1..3
inline constexpr double kPresenceViterEraser[3] = {98.89, 99.93, 93.05};
inline constexpr double kPresenceDeepEraser[3] = {97.97, 95.91, 97.29};
inline constexpr double kRegionIouViterEraser = 0.676;
inline constexpr double kRegionIouDeepEraser = 0.707;
// recovery, test split: {text, char}
inline constexpr double kRecoveryViterEraserBestTest[2] = {2.32, 8.13};
inline constexpr double kRecoveryViterEraserLastTest[2] = {2.18, 7.90};
inline constexpr double kRecoveryDeepEraserBestTest[2] = {1.57, 7.17};
}  // namespace reference

}  // namespace istr
