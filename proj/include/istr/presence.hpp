#pragma once

#include <filesystem>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "istr/nn/net.hpp"
#include "istr/protocols.hpp"
#include "istr/trainlog.hpp"

namespace istr {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  int epochs = 50;
  std::string optimizer = "adaptive_moment";  // or adaptive_moment_decoupled_decay
  uint64_t seed = 0;
  std::string backbone = "small_cnn";
  bool pretrained = false;
  int input_size = 64;  // images resized to input_size x input_size
  bool augment_hflip = false;

  void validate() const;
};

struct PresenceVerdict {
  bool str_ed = false;
  double score = 0.0;  // probability of the str_ed class
};

// Small conv net: three conv+pool stages, one trailing conv block whose
// activation feeds Grad-CAM, then GAP + linear head.
class PresenceModel {
 public:
  PresenceModel(const TrainConfig& config, uint64_t init_seed);

  nn::Net& net() { return net_; }
  int feature_layer() const { return feature_layer_; }  // index of the CAM tap
  const TrainConfig& config() const { return cfg_; }

  // Per-channel normalization applied before inference, stored in checkpoints.
  cv::Scalar norm_mean{0.5, 0.5, 0.5}, norm_std{0.25, 0.25, 0.25};

  nn::Tensor to_tensor(const cv::Mat3b& image) const;
  PresenceVerdict classify(const cv::Mat3b& image, double threshold = 0.5);
  // Grad-CAM for the positive class, input-sized, min-max normalized to [0,1].
  cv::Mat1f explain(const cv::Mat3b& image);

  void save(const std::filesystem::path& path,
            const std::map<std::string, std::string>& extra_meta = {});
  static PresenceModel load(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  nn::Net net_;
  int feature_layer_ = 0;
};

struct LabeledImage {
  const ImageRecord* record;
  int label;  // 1 = positive (STR-ed)
};

std::vector<LabeledImage> collect_split(const DatasetManifest& manifest,
                                        const std::vector<ImageRecord>& records,
                                        Split split);

struct PresenceTrainResult {
  TrainLog log;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

PresenceTrainResult train_presence(const DatasetManifest& manifest,
                                   const std::vector<ImageRecord>& records,
                                   const TrainConfig& config,
                                   const std::filesystem::path& out_dir);

struct PresenceEval {
  double accuracy = 0.0;
  int tp = 0, tn = 0, fp = 0, fn = 0;
};

PresenceEval evaluate_presence(const DatasetManifest& manifest,
                               const std::vector<ImageRecord>& records,
                               PresenceModel& model, Split split = Split::Test,
                               double threshold = 0.5);

}  // namespace istr
