#pragma once

#include <filesystem>
#include <functional>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "istr/nn/net.hpp"
#include "istr/protocols.hpp"
#include "istr/trainlog.hpp"

namespace istr {

struct Alphabet {
  std::string chars;  // index -> character; class 0 is reserved for padding

  static Alphabet latin(const std::string& punctuation = "");
  static Alphabet uppercase();
  bool contains(char c) const { return chars.find(c) != std::string::npos; }
  int index_of(char c) const;  // 1-based class id, 0 = pad
  int num_classes() const { return static_cast<int>(chars.size()) + 1; }
};

// True iff every character of text is in the alphabet.
bool filter_latin(const std::string& text, const Alphabet& alphabet);

// Axis-aligned bbox of the polygon, expanded by padding, clipped to the
// canvas, resized (aspect preserved) to target_height.
cv::Mat3b crop_region(const cv::Mat3b& image, const Polygon& polygon, int padding,
                      int target_height);

struct RecoveryInstance {
  cv::Mat3b crop;  // from the STR-ed image
  std::string pseudo_gt;
  std::string source_image_id;
  int region_index = 0;
  Split split = Split::Train;
};

// OCR stand-in: reads a crop, returns (text, confidence).
using TextReader = std::function<std::pair<std::string, double>(const cv::Mat3b&)>;

struct RecoveryBuildOptions {
  Alphabet alphabet = Alphabet::latin();
  int padding = 2;
  int target_height = 32;
  double val_fraction = 0.2;
  uint64_t seed = 0;
  // When null, synthetic-truth mode: pseudo_gt = the renderer transcript.
  TextReader reader = nullptr;
};

struct RecoveryBuildStats {
  int built = 0;
  int excluded_alphabet = 0;
  int excluded_empty = 0;
  int reader_failures = 0;
};

// Pairs each region crop of the STR-ed image with pseudo ground truth read
// from (or known for) the pre-STR image. Corpora are aligned by the
// str_ed record ids being "<with_text id>_str".
std::vector<RecoveryInstance> build_recovery_set(
    const std::vector<ImageRecord>& with_text,
    const std::vector<ImageRecord>& str_ed, const RecoveryBuildOptions& options,
    RecoveryBuildStats* stats = nullptr);

struct RecoveryTrainConfig {
  double learning_rate = 2e-3;
  int batch_size = 16;
  int epochs = 50;
  uint64_t seed = 0;
  int crop_height = 16;
  int crop_width = 32;  // crops resized to height x width before encoding
  int max_len = 8;      // decoder timesteps

  void validate() const;
};

// Conv feature extractor + per-timestep character classification head.
class RecoveryModel {
 public:
  RecoveryModel(const RecoveryTrainConfig& config, const Alphabet& alphabet,
                uint64_t init_seed);

  nn::Net& net() { return net_; }
  const Alphabet& alphabet() const { return alphabet_; }
  const RecoveryTrainConfig& config() const { return cfg_; }

  nn::Tensor to_tensor(const cv::Mat3b& crop) const;
  std::pair<std::string, double> read(const cv::Mat3b& crop);

  void save(const std::filesystem::path& path,
            const std::map<std::string, std::string>& extra_meta = {});
  static RecoveryModel load(const std::filesystem::path& path);

 private:
  RecoveryTrainConfig cfg_;
  Alphabet alphabet_;
  nn::Net net_;
};

struct RecoveryTrainResult {
  TrainLog log;  // metrics are Text-Accuracy
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

RecoveryTrainResult train_recovery(const std::vector<RecoveryInstance>& instances,
                                   const RecoveryTrainConfig& config,
                                   const std::filesystem::path& out_dir);

struct RecoveryScores {
  double text_accuracy = 0.0;
  double char_accuracy = 0.0;
};

struct RecoveryReport {
  // split -> {best, last} -> scores
  std::map<std::string, std::map<std::string, RecoveryScores>> cells;
};

RecoveryReport evaluate_recovery(const std::vector<RecoveryInstance>& instances,
                                 RecoveryModel& best, RecoveryModel& last);

// Directory of crop images plus a line-delimited index:
// crops/<n>.png<TAB>pseudo_gt<TAB>source_id<TAB>region_index<TAB>split
void save_recovery_set(const std::vector<RecoveryInstance>& instances,
                       const std::filesystem::path& root);
std::vector<RecoveryInstance> load_recovery_set(const std::filesystem::path& root);

}  // namespace istr
