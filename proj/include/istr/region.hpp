#pragma once

#include <filesystem>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "istr/metrics.hpp"
#include "istr/nn/net.hpp"
#include "istr/record.hpp"
#include "istr/trainlog.hpp"

namespace istr {

struct ScoredRegion {
  Polygon polygon;
  double confidence = 0.0;  // mean in-component probability
};

struct DetectionResult {
  std::string image_id;
  std::vector<ScoredRegion> regions;  // sorted by descending confidence
};

struct RegionTrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 24;
  int epochs = 100;  // full-scale runs use 1000
  uint64_t seed = 0;
  double mask_threshold = 0.5;
  int train_size = 96;  // training resolution; predictions upsample to canvas
  double pos_weight = 4.0;

  void validate() const;
};

// Fully convolutional per-pixel removed-region scorer.
class RegionModel {
 public:
  RegionModel(const RegionTrainConfig& config, uint64_t init_seed);

  nn::Net& net() { return net_; }
  const RegionTrainConfig& config() const { return cfg_; }
  cv::Scalar norm_mean{0.5, 0.5, 0.5}, norm_std{0.25, 0.25, 0.25};

  nn::Tensor to_tensor(const cv::Mat3b& image) const;
  // Removed-probability map at full canvas resolution.
  cv::Mat1f probability_map(const cv::Mat3b& image);

  void save(const std::filesystem::path& path,
            const std::map<std::string, std::string>& extra_meta = {});
  static RegionModel load(const std::filesystem::path& path);

 private:
  RegionTrainConfig cfg_;
  nn::Net net_;
};

struct RegionSample {
  const ImageRecord* record;         // STR-ed image
  std::vector<Polygon> gt_polygons;  // pre-removal text regions
};

// Training pairs from STR-ed records; throws if a record's provenance does
// not end in STR_APPLIED (it would still show visible text).
std::vector<RegionSample> make_region_samples(const std::vector<ImageRecord>& strd);

struct RegionTrainResult {
  TrainLog log;  // val_metric = mean union IoU
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

RegionTrainResult train_region(const std::vector<RegionSample>& train_set,
                               const std::vector<RegionSample>& val_set,
                               const RegionTrainConfig& config,
                               const std::filesystem::path& out_dir);

// Threshold the probability map, extract connected components, drop those
// below min_area, trace each component's boundary polygon.
DetectionResult detect_regions(const cv::Mat3b& image, RegionModel& model,
                               double mask_threshold, int min_area = 25,
                               const std::string& image_id = "");
// Same post-processing applied to an externally supplied probability map.
DetectionResult postprocess_probability_map(const cv::Mat1f& prob,
                                            double mask_threshold, int min_area,
                                            const std::string& image_id = "");

struct RegionEval {
  double mean_iou = 0.0;
  std::vector<std::pair<std::string, double>> per_image;  // id -> IoU
  std::vector<std::string> best_ids, worst_ids;
};

RegionEval evaluate_region(const std::vector<RegionSample>& test_set,
                           RegionModel& model, double mask_threshold = 0.5,
                           int min_area = 25, int k_exemplars = 3);

// One region per line: image_id<TAB>confidence<TAB>x0,y0,x1,y1,...
void save_detections(const std::vector<DetectionResult>& results,
                     const std::filesystem::path& path);

// GT red, prediction green overlay for qualitative inspection.
cv::Mat3b overlay_detection(const cv::Mat3b& image, const std::vector<Polygon>& gt,
                            const std::vector<ScoredRegion>& pred);

}  // namespace istr
