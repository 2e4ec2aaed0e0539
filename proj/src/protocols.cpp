#include "istr/protocols.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace istr {

std::string to_string(Label l) {
  return l == Label::Positive ? "positive" : "negative";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  throw std::logic_error("bad Split");
}

Label label_from_string(const std::string& s) {
  if (s == "positive") return Label::Positive;
  if (s == "negative") return Label::Negative;
  throw std::invalid_argument("unknown label: " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unassigned") return Split::Unassigned;
  throw std::invalid_argument("unknown split: " + s);
}

int DatasetManifest::count(Label l, Split s) const {
  int n = 0;
  for (const auto& e : entries)
    if (e.label == l && e.split == s) ++n;
  return n;
}

ProtocolBuildResult build_protocol(const std::vector<ImageRecord>& corpus,
                                   int protocol, StrMethod method,
                                   int mask_dilation, uint64_t seed) {
  if (protocol < 1 || protocol > 3)
    throw std::invalid_argument("protocol must be 1, 2 or 3");

  std::vector<const ImageRecord*> with_text, text_free;
  for (const auto& rec : corpus) {
    if (rec.provenance.empty()) continue;
    if (rec.last_step() == ProvenanceKind::RenderedWithText && !rec.regions.empty())
      with_text.push_back(&rec);
    // Never-contained-text scenes: standalone renders, not twins of a
    // with-text record.
    if (rec.last_step() == ProvenanceKind::RenderedTextFree && rec.twin_id.empty())
      text_free.push_back(&rec);
  }
  if (with_text.empty())
    throw std::invalid_argument("build_protocol: corpus has no with-text records");

  ProtocolBuildResult out;
  out.manifest.protocol = protocol;
  out.manifest.seed = seed;

  size_t n_pos = with_text.size();

  if (protocol == 2 && text_free.size() < n_pos) {
    if (text_free.empty())
      throw std::invalid_argument(
          "build_protocol: protocol 2 needs never-had-text records, found 0");
    n_pos = text_free.size();  // balance down to the scarcer class
  }

  for (size_t i = 0; i < n_pos; ++i) {
    const ImageRecord* src = with_text[i];
    ImageRecord pos = apply_str_oracle(*src, method, mask_dilation, seed + i);
    out.manifest.entries.push_back({pos.id, Label::Positive, Split::Unassigned, protocol});
    out.derived.push_back(std::move(pos));

    ImageRecord neg;
    if (protocol == 2) {
      out.manifest.entries.push_back(
          {text_free[i]->id, Label::Negative, Split::Unassigned, protocol});
      continue;
    }
    const ImageRecord* twin =
        src->twin_id.empty() ? nullptr : find_record(corpus, src->twin_id);
    if (!twin)
      throw std::invalid_argument(
          "build_protocol: with-text record lacks a text-free twin: " + src->id);
    neg = erase_manual(*src, *twin);
    if (protocol == 3)
      neg = apply_str_oracle(neg, method, mask_dilation, seed + 1000003 + i);
    out.manifest.entries.push_back({neg.id, Label::Negative, Split::Unassigned, protocol});
    out.derived.push_back(std::move(neg));
  }
  return out;
}

DatasetManifest split_manifest(const DatasetManifest& manifest,
                               const std::vector<ImageRecord>& all_records,
                               double train_fraction, uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  DatasetManifest out = manifest;
  std::mt19937_64 rng(seed);
  for (Label label : {Label::Positive, Label::Negative}) {
    std::vector<size_t> pool;
    for (size_t i = 0; i < out.entries.size(); ++i) {
      auto& e = out.entries[i];
      if (e.label != label) continue;
      const ImageRecord* rec = find_record(all_records, e.image_id);
      if (rec && rec->test_pool) {
        e.split = Split::Test;
      } else {
        pool.push_back(i);
      }
    }
    if (pool.empty()) continue;
    std::shuffle(pool.begin(), pool.end(), rng);
    const size_t n_train =
        static_cast<size_t>(std::floor(train_fraction * pool.size()));
    if (n_train == 0 || n_train == pool.size())
      throw std::invalid_argument("split_manifest: fraction produces an empty split");
    for (size_t i = 0; i < pool.size(); ++i)
      out.entries[pool[i]].split = (i < n_train) ? Split::Train : Split::Val;
  }
  return out;
}

std::vector<std::string> verify_manifest(const DatasetManifest& manifest,
                                         const std::vector<ImageRecord>& all_records) {
  std::vector<std::string> violations;
  // class balance per split
  for (Split s : {Split::Train, Split::Val, Split::Test, Split::Unassigned}) {
    const int p = manifest.count(Label::Positive, s);
    const int n = manifest.count(Label::Negative, s);
    if (p != n)
      violations.push_back("class imbalance in split " + to_string(s) + ": " +
                           std::to_string(p) + " positive vs " + std::to_string(n) +
                           " negative");
  }
  // split disjointness by image_id
  std::map<std::string, std::set<Split>> seen;
  for (const auto& e : manifest.entries) seen[e.image_id].insert(e.split);
  for (const auto& [id, splits] : seen)
    if (splits.size() > 1) violations.push_back("split overlap for image " + id);
  // provenance-protocol consistency
  for (const auto& e : manifest.entries) {
    if (e.protocol != manifest.protocol)
      violations.push_back("protocol mismatch on entry " + e.image_id);
    const ImageRecord* rec = find_record(all_records, e.image_id);
    if (!rec) {
      violations.push_back("missing record for " + e.image_id);
      continue;
    }
    if (e.label == Label::Positive) {
      const bool ok = rec->last_step() == ProvenanceKind::StrApplied &&
                      rec->has_step(ProvenanceKind::RenderedWithText) &&
                      !rec->has_step(ProvenanceKind::ManualErase);
      if (!ok)
        violations.push_back("provenance mismatch on positive " + e.image_id);
    } else {
      bool ok = false;
      switch (manifest.protocol) {
        case 1:
          ok = rec->last_step() == ProvenanceKind::ManualErase;
          break;
        case 2:
          ok = rec->last_step() == ProvenanceKind::RenderedTextFree &&
               rec->regions.empty();
          break;
        case 3:
          ok = rec->has_step(ProvenanceKind::ManualErase) &&
               rec->last_step() == ProvenanceKind::StrApplied;
          break;
      }
      if (!ok)
        violations.push_back("provenance mismatch on negative " + e.image_id);
    }
  }
  return violations;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << "# protocol=" << manifest.protocol << " seed=" << manifest.seed << '\n';
  for (const auto& e : manifest.entries)
    out << e.image_id << '\t' << to_string(e.label) << '\t' << to_string(e.split)
        << '\t' << e.protocol << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
  DatasetManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::sscanf(line.c_str(), "# protocol=%d seed=%llu", &m.protocol,
                  reinterpret_cast<unsigned long long*>(&m.seed));
      continue;
    }
    std::istringstream is(line);
    ManifestEntry e;
    std::string label, split;
    if (!(is >> e.image_id >> label >> split >> e.protocol))
      throw std::runtime_error("bad manifest line: " + line);
    e.label = label_from_string(label);
    e.split = split_from_string(split);
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace istr
