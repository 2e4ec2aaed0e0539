#pragma once

#include <string>
#include <utility>
#include <vector>

#include "istr/geometry.hpp"

namespace istr {

struct RegionSetPair {
  std::vector<Polygon> gt;
  std::vector<Polygon> pred;
  cv::Size canvas{512, 512};
};

// Per-image IoU between the union of all GT regions and the union of all
// predicted regions. Both unions empty -> 1.0; exactly one empty -> 0.0.
double union_iou(const RegionSetPair& pair);

// IoU between two precomputed binary masks (nonzero = inside).
double mask_iou(const cv::Mat1b& a, const cv::Mat1b& b);

double mean_iou(const std::vector<RegionSetPair>& pairs);

// Levenshtein distance, unit insert/delete/substitute.
int edit_distance(const std::string& a, const std::string& b);

// (1 - NED) * 100 with NED = edit_distance / max(|gt|, |pred|).
// Both empty -> 100.0 by convention.
double char_accuracy(const std::string& gt, const std::string& pred);

// 100 * exact case-sensitive matches / N.
double text_accuracy(const std::vector<std::pair<std::string, std::string>>& pairs);

double binary_accuracy(const std::vector<int>& labels, const std::vector<int>& predictions);

}  // namespace istr
