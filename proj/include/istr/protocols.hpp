#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "istr/corpus.hpp"

namespace istr {

enum class Label { Positive, Negative };
enum class Split { Train, Val, Test, Unassigned };

std::string to_string(Label l);
std::string to_string(Split s);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string image_id;
  Label label;
  Split split = Split::Unassigned;
  int protocol = 1;
};

struct DatasetManifest {
  int protocol = 1;
  uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  int count(Label l, Split s) const;
};

// Derived records produced while building a protocol (STR-ed positives,
// manual-erase or STR-twice negatives); keyed by id, referenced from the
// manifest entries.
struct ProtocolBuildResult {
  DatasetManifest manifest;
  std::vector<ImageRecord> derived;  // records not present in the input corpus
};

// Protocol 1: positives = with-text -> STR; negatives = manual-erase twins.
// Protocol 2: negatives = scenes that never contained text.
// Protocol 3: negatives = manual-erase twins additionally passed through STR.
ProtocolBuildResult build_protocol(const std::vector<ImageRecord>& corpus,
                                   int protocol, StrMethod method,
                                   int mask_dilation, uint64_t seed);

// Stratified per-class split of non-test-pool entries; entries whose source
// record is test-pool flagged land in Test. train count per class =
// floor(fraction * class size), remainder to Val.
DatasetManifest split_manifest(const DatasetManifest& manifest,
                               const std::vector<ImageRecord>& all_records,
                               double train_fraction, uint64_t seed);

// Integrity report; empty iff all invariants hold.
std::vector<std::string> verify_manifest(const DatasetManifest& manifest,
                                         const std::vector<ImageRecord>& all_records);

// Line format: image_id<TAB>label<TAB>split<TAB>protocol
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

constexpr double kDefaultTrainFraction = 2199.0 / 2749.0;

}  // namespace istr
