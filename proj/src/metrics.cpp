#include "istr/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace istr {

double mask_iou(const cv::Mat1b& a, const cv::Mat1b& b) {
  cv::Mat1b inter, uni;
  cv::bitwise_and(a, b, inter);
  cv::bitwise_or(a, b, uni);
  const int u = cv::countNonZero(uni);
  if (u == 0) return 1.0;
  return static_cast<double>(cv::countNonZero(inter)) / u;
}

double union_iou(const RegionSetPair& pair) {
  const cv::Mat1b g = rasterize_union(pair.gt, pair.canvas);
  const cv::Mat1b p = rasterize_union(pair.pred, pair.canvas);
  return mask_iou(g, p);
}

double mean_iou(const std::vector<RegionSetPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_iou: empty pair list");
  double sum = 0.0;
  for (const auto& pr : pairs) sum += union_iou(pr);
  return sum / pairs.size();
}

int edit_distance(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double char_accuracy(const std::string& gt, const std::string& pred) {
  const size_t denom = std::max(gt.size(), pred.size());
  if (denom == 0) return 100.0;  // both empty: identity
  const double ned = static_cast<double>(edit_distance(gt, pred)) / denom;
  return (1.0 - ned) * 100.0;
}

double text_accuracy(const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("text_accuracy: empty input");
  size_t hits = 0;
  for (const auto& [gt, pred] : pairs)
    if (gt == pred) ++hits;
  return 100.0 * hits / pairs.size();
}

double binary_accuracy(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.empty() || labels.size() != predictions.size())
    throw std::invalid_argument("binary_accuracy: empty or mismatched inputs");
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == predictions[i]) ++hits;
  return 100.0 * hits / labels.size();
}

}  // namespace istr
