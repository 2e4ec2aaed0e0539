#include "istr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace istr {

std::string to_string(ProvenanceKind k) {
  switch (k) {
    case ProvenanceKind::RenderedWithText: return "RENDERED_WITH_TEXT";
    case ProvenanceKind::RenderedTextFree: return "RENDERED_TEXT_FREE";
    case ProvenanceKind::ManualErase: return "MANUAL_ERASE";
    case ProvenanceKind::StrApplied: return "STR_APPLIED";
  }
  throw std::logic_error("bad ProvenanceKind");
}

ProvenanceKind provenance_kind_from_string(const std::string& s) {
  if (s == "RENDERED_WITH_TEXT") return ProvenanceKind::RenderedWithText;
  if (s == "RENDERED_TEXT_FREE") return ProvenanceKind::RenderedTextFree;
  if (s == "MANUAL_ERASE") return ProvenanceKind::ManualErase;
  if (s == "STR_APPLIED") return ProvenanceKind::StrApplied;
  throw std::invalid_argument("unknown provenance kind: " + s);
}

bool ImageRecord::has_step(ProvenanceKind k) const {
  for (const auto& s : provenance)
    if (s.kind == k) return true;
  return false;
}

ProvenanceKind ImageRecord::last_step() const {
  if (provenance.empty()) throw std::logic_error("record has empty provenance: " + id);
  return provenance.back().kind;
}

std::vector<TextRegion> ImageRecord::active_regions() const {
  std::vector<TextRegion> out;
  for (const auto& r : regions)
    if (!r.erased) out.push_back(r);
  return out;
}

std::string to_string(StrMethod m) {
  switch (m) {
    case StrMethod::MeanFill: return "mean_fill";
    case StrMethod::DiffusionFill: return "diffusion_fill";
    case StrMethod::PatchCopy: return "patch_copy";
  }
  throw std::logic_error("bad StrMethod");
}

StrMethod str_method_from_string(const std::string& s) {
  if (s == "mean_fill") return StrMethod::MeanFill;
  if (s == "diffusion_fill") return StrMethod::DiffusionFill;
  if (s == "patch_copy") return StrMethod::PatchCopy;
  throw std::invalid_argument("unknown STR method: " + s);
}

namespace {

constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

cv::Mat3b render_background(const RenderSpec& spec, std::mt19937_64& rng) {
  if (spec.background.rfind("flat:", 0) == 0) {
    int b, g, r;
    if (std::sscanf(spec.background.c_str(), "flat:%d,%d,%d", &b, &g, &r) != 3)
      throw std::invalid_argument("bad background spec: " + spec.background);
    return cv::Mat3b(spec.canvas, cv::Vec3b(static_cast<uchar>(b), static_cast<uchar>(g),
                                            static_cast<uchar>(r)));
  }
  if (spec.background != "noise")
    throw std::invalid_argument("unknown background spec: " + spec.background);
  // Coarse random color grid upsampled to smooth blotches, plus fine grain.
  std::uniform_real_distribution<float> uc(0.f, 255.f);
  cv::Mat3f coarse(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      coarse(r, c) = {uc(rng), uc(rng), uc(rng)};
  cv::Mat3f smooth;
  cv::resize(coarse, smooth, spec.canvas, 0, 0, cv::INTER_CUBIC);
  std::normal_distribution<float> grain(0.f, 7.f);
  cv::Mat3b out(spec.canvas);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) {
      const cv::Vec3f& s = smooth(r, c);
      cv::Vec3b& o = out(r, c);
      for (int k = 0; k < 3; ++k)
        o[k] = cv::saturate_cast<uchar>(s[k] + grain(rng));
    }
  return out;
}

struct PlacedText {
  std::string text;
  cv::Point org;
  double scale;
  int thickness;
  cv::Scalar color;
  cv::Rect box;
};

// Picks a color contrasting with the background patch under the text box.
cv::Scalar pick_text_color(const cv::Mat3b& bg, const cv::Rect& box,
                           std::mt19937_64& rng) {
  const cv::Rect clipped = box & cv::Rect(0, 0, bg.cols, bg.rows);
  const cv::Scalar mean = cv::mean(bg(clipped));
  const double lum = (mean[0] + mean[1] + mean[2]) / 3.0;
  std::uniform_int_distribution<int> lo(0, 70), hi(185, 255);
  if (lum > 127.0) return {double(lo(rng)), double(lo(rng)), double(lo(rng))};
  return {double(hi(rng)), double(hi(rng)), double(hi(rng))};
}

std::optional<PlacedText> place_one(const Placement& p, const cv::Mat3b& bg,
                                    const std::vector<cv::Rect>& occupied,
                                    std::mt19937_64& rng) {
  if (p.text.empty()) throw std::invalid_argument("empty placement text");
  std::uniform_int_distribution<int> hdist(p.font_size_min, p.font_size_max);
  int target_h = hdist(rng);
  int base_baseline = 0;
  const cv::Size base = cv::getTextSize(p.text, kFont, 1.0, 2, &base_baseline);
  const int margin = 4;
  constexpr int kMinFontPx = 8;
  double scale;
  int thickness, baseline;
  cv::Size sz;
  for (;;) {
    scale = static_cast<double>(target_h) / std::max(1, base.height);
    thickness = std::max(1, static_cast<int>(std::lround(scale * 2.0)));
    baseline = 0;
    sz = cv::getTextSize(p.text, kFont, scale, thickness, &baseline);
    if (sz.width + 2 * margin <= bg.cols &&
        sz.height + baseline + 2 * margin <= bg.rows)
      break;
    // shrink oversized text toward the smallest legible size before giving up
    if (--target_h < kMinFontPx) return std::nullopt;
  }
  const int box_w = sz.width, box_h = sz.height + baseline;

  const int attempts = (p.position == "center") ? 1 : 50;
  for (int a = 0; a < attempts; ++a) {
    cv::Point org;
    if (p.position == "center") {
      org = {(bg.cols - box_w) / 2, (bg.rows - box_h) / 2 + sz.height};
    } else if (p.position == "random") {
      std::uniform_int_distribution<int> xd(margin, bg.cols - margin - box_w);
      std::uniform_int_distribution<int> yd(margin + sz.height,
                                            bg.rows - margin - baseline);
      org = {xd(rng), yd(rng)};
    } else {
      throw std::invalid_argument("unknown position policy: " + p.position);
    }
    const cv::Rect box(org.x, org.y - sz.height, box_w, box_h);
    bool clash = false;
    for (const auto& oc : occupied)
      if ((box & oc).area() > 0) clash = true;
    if (clash) continue;
    PlacedText out{p.text, org, scale, thickness, pick_text_color(bg, box, rng), box};
    return out;
  }
  return std::nullopt;
}

}  // namespace

RenderedPair render_scene(const RenderSpec& spec, const std::string& id,
                          uint64_t seed) {
  if (spec.placements.empty())
    throw std::invalid_argument("render_scene: at least one placement required");
  std::mt19937_64 rng(seed);
  cv::Mat3b bg = render_background(spec, rng);

  std::vector<PlacedText> placed;
  std::vector<cv::Rect> occupied;
  for (const auto& p : spec.placements) {
    auto pt = place_one(p, bg, occupied, rng);
    if (!pt) {
      std::cerr << "render_scene[" << id << "]: placement '" << p.text
                << "' does not fit the canvas, rejected\n";
      continue;
    }
    occupied.push_back(pt->box);
    placed.push_back(*pt);
  }
  if (placed.empty())
    throw std::invalid_argument("render_scene: no valid placement for " + id);

  RenderedPair pair;
  pair.text_free.id = id + "_tf";
  pair.text_free.pixels = bg.clone();
  pair.text_free.provenance = {{ProvenanceKind::RenderedTextFree,
                                {{"seed", std::to_string(seed)}}}};
  pair.text_free.twin_id = id;

  pair.with_text.id = id;
  pair.with_text.pixels = bg.clone();
  pair.with_text.twin_id = pair.text_free.id;
  pair.with_text.provenance = {{ProvenanceKind::RenderedWithText,
                                {{"seed", std::to_string(seed)}}}};
  for (const auto& pt : placed) {
    cv::putText(pair.with_text.pixels, pt.text, pt.org, kFont, pt.scale,
                pt.color, pt.thickness, cv::LINE_8);
    // Exact region: bounding box of the rendered strokes, 1 px margin.
    cv::Mat1b strokes = cv::Mat1b::zeros(spec.canvas);
    cv::putText(strokes, pt.text, pt.org, kFont, pt.scale, 255, pt.thickness,
                cv::LINE_8);
    cv::Rect bb = cv::boundingRect(strokes);
    bb &= cv::Rect(1, 1, spec.canvas.width - 2, spec.canvas.height - 2);
    TextRegion region;
    region.polygon = Polygon::rect(bb.x - 1, bb.y - 1, bb.x + bb.width + 1,
                                   bb.y + bb.height + 1);
    region.transcript = pt.text;
    pair.with_text.regions.push_back(region);
  }
  return pair;
}

ImageRecord render_text_free(const RenderSpec& spec, const std::string& id,
                             uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageRecord rec;
  rec.id = id;
  rec.pixels = render_background(spec, rng);
  rec.provenance = {{ProvenanceKind::RenderedTextFree,
                     {{"seed", std::to_string(seed)}}}};
  return rec;
}

ImageRecord erase_manual(const ImageRecord& record, const ImageRecord& twin) {
  if (record.provenance.empty() ||
      record.last_step() != ProvenanceKind::RenderedWithText)
    throw std::invalid_argument("erase_manual: record must end in RENDERED_WITH_TEXT: " +
                                record.id);
  if (twin.pixels.size() != record.pixels.size())
    throw std::invalid_argument("erase_manual: twin canvas mismatch for " + record.id);
  ImageRecord out;
  out.id = record.id + "_me";
  out.pixels = twin.pixels.clone();
  out.regions = record.regions;
  for (auto& r : out.regions) r.erased = true;
  out.provenance = record.provenance;
  out.provenance.push_back({ProvenanceKind::ManualErase, {{"tool", "twin_render"}}});
  out.test_pool = record.test_pool;
  return out;
}

cv::Mat1b removal_mask(const ImageRecord& record, int mask_dilation) {
  if (mask_dilation < 0)
    throw std::invalid_argument("removal_mask: negative dilation");
  std::vector<Polygon> polys;
  for (const auto& r : record.active_regions()) polys.push_back(r.polygon);
  cv::Mat1b mask = rasterize_union(polys, record.pixels.size());
  if (mask_dilation > 0) {
    const int k = 2 * mask_dilation + 1;
    cv::dilate(mask, mask,
               cv::getStructuringElement(cv::MORPH_ELLIPSE, {k, k}));
  }
  return mask;
}

namespace {

cv::Vec3d ring_mean(const cv::Mat3b& img, const cv::Mat1b& region_mask) {
  cv::Mat1b ring;
  cv::dilate(region_mask, ring,
             cv::getStructuringElement(cv::MORPH_ELLIPSE, {9, 9}));
  ring.setTo(0, region_mask);
  cv::Scalar m = cv::countNonZero(ring) > 0 ? cv::mean(img, ring) : cv::mean(img);
  return {m[0], m[1], m[2]};
}

void fill_mean(cv::Mat3b& img, const ImageRecord& src, int dilation) {
  for (const auto& region : src.active_regions()) {
    cv::Mat1b m = rasterize(region.polygon, img.size()).mask;
    if (dilation > 0) {
      const int k = 2 * dilation + 1;
      cv::dilate(m, m, cv::getStructuringElement(cv::MORPH_ELLIPSE, {k, k}));
    }
    const cv::Vec3d mean = ring_mean(src.pixels, m);
    img.setTo(cv::Vec3b(cv::saturate_cast<uchar>(mean[0]),
                        cv::saturate_cast<uchar>(mean[1]),
                        cv::saturate_cast<uchar>(mean[2])),
              m);
  }
}

void fill_diffusion(cv::Mat3b& img, const cv::Mat1b& mask) {
  if (cv::countNonZero(mask) == 0) return;
  cv::Mat3f cur;
  img.convertTo(cur, CV_32FC3);
  // Seed the hole with the boundary-ring mean, then Jacobi-relax towards
  // the fixed surrounding pixels.
  const cv::Vec3d seed_mean = ring_mean(img, mask);
  cur.setTo(cv::Vec3f(static_cast<float>(seed_mean[0]), static_cast<float>(seed_mean[1]),
                      static_cast<float>(seed_mean[2])),
            mask);
  cv::Mat3f next = cur.clone();
  const int iters = 80;
  for (int it = 0; it < iters; ++it) {
    for (int r = 0; r < img.rows; ++r) {
      const uchar* mrow = mask.ptr<uchar>(r);
      for (int c = 0; c < img.cols; ++c) {
        if (!mrow[c]) continue;
        cv::Vec3f acc(0, 0, 0);
        int n = 0;
        const int rr[4] = {r - 1, r + 1, r, r};
        const int cc[4] = {c, c, c - 1, c + 1};
        for (int k = 0; k < 4; ++k) {
          if (rr[k] < 0 || rr[k] >= img.rows || cc[k] < 0 || cc[k] >= img.cols)
            continue;
          acc += cur(rr[k], cc[k]);
          ++n;
        }
        if (n > 0) next(r, c) = acc / static_cast<float>(n);
      }
    }
    std::swap(cur, next);
  }
  for (int r = 0; r < img.rows; ++r) {
    const uchar* mrow = mask.ptr<uchar>(r);
    for (int c = 0; c < img.cols; ++c)
      if (mrow[c]) {
        const cv::Vec3f& v = cur(r, c);
        img(r, c) = {cv::saturate_cast<uchar>(v[0]), cv::saturate_cast<uchar>(v[1]),
                     cv::saturate_cast<uchar>(v[2])};
      }
  }
}

void fill_patch_copy(cv::Mat3b& img, const cv::Mat1b& mask) {
  // Row-wise mirror copy from the nearest unmasked span.
  for (int r = 0; r < img.rows; ++r) {
    const uchar* mrow = mask.ptr<uchar>(r);
    int c = 0;
    while (c < img.cols) {
      if (!mrow[c]) {
        ++c;
        continue;
      }
      int b = c;
      while (b < img.cols && mrow[b]) ++b;  // run [c, b)
      const int left_avail = c;             // columns [0, c) are outside the run
      const int right_avail = img.cols - b;
      for (int x = c; x < b; ++x) {
        int src = -1;
        if (left_avail > 0) {
          const int d = x - c + 1;
          const int m = 2 * left_avail;
          int off = d % m;
          if (off == 0) off = m;
          src = (off <= left_avail) ? c - off : c - (m - off) - 1;
        } else if (right_avail > 0) {
          const int d = b - x;
          const int m = 2 * right_avail;
          int off = d % m;
          if (off == 0) off = m;
          src = (off <= right_avail) ? b + off - 1 : b + (m - off);
        }
        if (src >= 0 && src < img.cols && !mrow[src]) img(r, x) = img(r, src);
        // Source may itself be masked by another region's run; fall back to
        // leaving the pixel for the diffusion of the next row pass.
      }
      c = b;
    }
  }
}

}  // namespace

ImageRecord apply_str_oracle(const ImageRecord& record, StrMethod method,
                             int mask_dilation, uint64_t seed) {
  if (mask_dilation < 0)
    throw std::invalid_argument("apply_str_oracle: negative mask dilation");
  ImageRecord out = record;
  out.id = record.id + "_str";
  out.pixels = record.pixels.clone();
  out.twin_id.clear();
  const cv::Mat1b mask = removal_mask(record, mask_dilation);
  switch (method) {
    case StrMethod::MeanFill:
      fill_mean(out.pixels, record, mask_dilation);
      break;
    case StrMethod::DiffusionFill:
      fill_diffusion(out.pixels, mask);
      break;
    case StrMethod::PatchCopy:
      fill_patch_copy(out.pixels, mask);
      break;
  }
  out.provenance.push_back({ProvenanceKind::StrApplied,
                            {{"method", to_string(method)},
                             {"dilation", std::to_string(mask_dilation)},
                             {"seed", std::to_string(seed)}}});
  return out;
}

ImageRecord apply_str_external(const ImageRecord& record,
                               const std::string& command_template,
                               int mask_dilation,
                               const std::filesystem::path& work_dir) {
  fs::create_directories(work_dir);
  const fs::path img_path = work_dir / (record.id + "_in.png");
  const fs::path mask_path = work_dir / (record.id + "_mask.png");
  const fs::path out_path = work_dir / (record.id + "_out.png");
  cv::imwrite(img_path.string(), record.pixels);
  cv::imwrite(mask_path.string(), removal_mask(record, mask_dilation));

  std::string cmd = command_template;
  auto subst = [&cmd](const std::string& key, const std::string& val) {
    size_t pos;
    while ((pos = cmd.find(key)) != std::string::npos) cmd.replace(pos, key.size(), val);
  };
  subst("{image}", img_path.string());
  subst("{mask}", mask_path.string());
  subst("{out}", out_path.string());
  const int rc = std::system(cmd.c_str());
  if (rc != 0)
    throw std::runtime_error("external STR command failed (" + std::to_string(rc) +
                             "): " + cmd);
  cv::Mat result = cv::imread(out_path.string(), cv::IMREAD_COLOR);
  if (result.empty() || result.size() != record.pixels.size())
    throw std::runtime_error("external STR produced no usable output: " +
                             out_path.string());
  ImageRecord out = record;
  out.id = record.id + "_str";
  out.pixels = result;
  out.twin_id.clear();
  out.provenance.push_back({ProvenanceKind::StrApplied,
                            {{"method", "external"},
                             {"dilation", std::to_string(mask_dilation)}}});
  return out;
}

namespace {

std::vector<TextRegion> parse_annotation_file(const fs::path& path, int* bad_lines) {
  std::vector<TextRegion> regions;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      TextRegion region;
      const size_t semi = line.find(';');
      region.polygon = polygon_from_string(line.substr(0, semi));
      if (semi != std::string::npos) region.transcript = line.substr(semi + 1);
      regions.push_back(std::move(region));
    } catch (const std::exception& e) {
      std::cerr << "warning: bad annotation line in " << path << ": " << e.what()
                << "\n";
      if (bad_lines) ++*bad_lines;
    }
  }
  return regions;
}

bool is_image_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

std::vector<ImageRecord> import_external(const std::filesystem::path& root,
                                         ImportStats* stats) {
  ImportStats local;
  std::vector<ImageRecord> records;
  const fs::path img_dir = root / "images";
  const fs::path ann_dir = root / "annotations";
  std::vector<fs::path> files;
  if (fs::exists(img_dir))
    for (const auto& e : fs::directory_iterator(img_dir))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    cv::Mat img = cv::imread(f.string(), cv::IMREAD_COLOR);
    if (img.empty()) {
      std::cerr << "warning: unreadable image skipped: " << f << "\n";
      ++local.skipped_images;
      continue;
    }
    ImageRecord rec;
    rec.id = f.stem().string();
    rec.pixels = img;
    const fs::path ann = ann_dir / (rec.id + ".txt");
    if (fs::exists(ann))
      rec.regions = parse_annotation_file(ann, &local.bad_annotation_lines);
    rec.provenance = {{ProvenanceKind::RenderedWithText, {{"source", "external"}}}};
    records.push_back(std::move(rec));
    ++local.imported;
  }
  if (stats) *stats = local;
  return records;
}

void save_corpus(const std::vector<ImageRecord>& records,
                 const std::filesystem::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "annotations");
  std::ofstream manifest(root / "corpus.manifest");
  for (const auto& rec : records) {
    const std::string img_rel = "images/" + rec.id + ".png";
    const std::string ann_rel = "annotations/" + rec.id + ".txt";
    if (!cv::imwrite((root / img_rel).string(), rec.pixels))
      throw std::runtime_error("failed to write " + (root / img_rel).string());
    std::ofstream ann(root / ann_rel);
    json erased = json::array();
    for (const auto& region : rec.regions) {
      ann << polygon_to_string(region.polygon);
      if (!region.transcript.empty()) ann << ';' << region.transcript;
      ann << '\n';
      erased.push_back(region.erased);
    }
    json prov = json::array();
    for (const auto& step : rec.provenance)
      prov.push_back({{"kind", to_string(step.kind)}, {"params", step.params}});
    json line = {{"id", rec.id},          {"image", img_rel},
                 {"annotations", ann_rel}, {"provenance", prov},
                 {"twin_id", rec.twin_id}, {"test_pool", rec.test_pool},
                 {"erased", erased}};
    manifest << line.dump() << '\n';
  }
}

std::vector<ImageRecord> load_corpus(const std::filesystem::path& root) {
  std::ifstream manifest(root / "corpus.manifest");
  if (!manifest)
    throw std::runtime_error("no corpus.manifest under " + root.string());
  std::vector<ImageRecord> records;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    ImageRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.pixels = cv::imread((root / j.at("image").get<std::string>()).string(),
                            cv::IMREAD_COLOR);
    if (rec.pixels.empty())
      throw std::runtime_error("missing corpus image for " + rec.id);
    int bad = 0;
    rec.regions =
        parse_annotation_file(root / j.at("annotations").get<std::string>(), &bad);
    const auto& erased = j.at("erased");
    for (size_t i = 0; i < rec.regions.size() && i < erased.size(); ++i)
      rec.regions[i].erased = erased[i].get<bool>();
    for (const auto& step : j.at("provenance")) {
      ProvenanceStep s;
      s.kind = provenance_kind_from_string(step.at("kind").get<std::string>());
      s.params = step.at("params").get<std::map<std::string, std::string>>();
      rec.provenance.push_back(std::move(s));
    }
    rec.twin_id = j.at("twin_id").get<std::string>();
    rec.test_pool = j.at("test_pool").get<bool>();
    records.push_back(std::move(rec));
  }
  return records;
}

const ImageRecord* find_record(const std::vector<ImageRecord>& corpus,
                               const std::string& id) {
  for (const auto& rec : corpus)
    if (rec.id == id) return &rec;
  return nullptr;
}

}  // namespace istr
