#pragma once

#include <map>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "istr/geometry.hpp"

namespace istr {

enum class ProvenanceKind {
  RenderedWithText,
  RenderedTextFree,
  ManualErase,
  StrApplied,
};

std::string to_string(ProvenanceKind k);
ProvenanceKind provenance_kind_from_string(const std::string& s);

struct ProvenanceStep {
  ProvenanceKind kind;
  std::map<std::string, std::string> params;
};

struct TextRegion {
  Polygon polygon;
  std::string transcript;  // empty when unknown
  bool erased = false;     // manually erased; kept as a historical annotation
};

struct ImageRecord {
  std::string id;
  cv::Mat3b pixels;  // BGR, canvas-sized (512x512 default)
  std::vector<TextRegion> regions;
  std::vector<ProvenanceStep> provenance;
  std::string twin_id;     // text-free twin, when rendered as a pair
  bool test_pool = false;  // fixed evaluation pool, never enters train/val

  bool has_step(ProvenanceKind k) const;
  ProvenanceKind last_step() const;
  std::vector<TextRegion> active_regions() const;  // not flagged erased
};

}  // namespace istr
