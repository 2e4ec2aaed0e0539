#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "istr/corpus.hpp"

using namespace istr;
namespace fs = std::filesystem;

namespace {

RenderSpec small_spec(int words = 2) {
  RenderSpec spec;
  spec.canvas = {256, 256};
  for (int i = 0; i < words; ++i) {
    Placement p;
    p.text = (i == 0) ? "TEA" : "SHOP";
    p.font_size_min = 20;
    p.font_size_max = 32;
    spec.placements.push_back(p);
  }
  return spec;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("istr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_pixels(const cv::Mat3b& a, const cv::Mat3b& b) {
  if (a.size() != b.size()) return false;
  cv::Mat diff;
  cv::absdiff(a, b, diff);
  return cv::countNonZero(diff.reshape(1)) == 0;
}

}  // namespace

TEST_CASE("render_scene is deterministic for a fixed seed") {
  const auto a = render_scene(small_spec(), "s0", 7);
  const auto b = render_scene(small_spec(), "s0", 7);
  CHECK(same_pixels(a.with_text.pixels, b.with_text.pixels));
  CHECK(same_pixels(a.text_free.pixels, b.text_free.pixels));
  const auto c = render_scene(small_spec(), "s0", 8);
  CHECK_FALSE(same_pixels(a.with_text.pixels, c.with_text.pixels));
}

TEST_CASE("render_scene produces one region per placement and a clean twin") {
  const auto pair = render_scene(small_spec(2), "s1", 11);
  CHECK(pair.with_text.regions.size() == 2);
  CHECK(pair.text_free.regions.empty());
  CHECK(pair.with_text.twin_id == pair.text_free.id);
  CHECK(pair.with_text.last_step() == ProvenanceKind::RenderedWithText);
  CHECK(pair.text_free.last_step() == ProvenanceKind::RenderedTextFree);
  // transcripts carried through
  CHECK(pair.with_text.regions[0].transcript == "TEA");
  CHECK(pair.with_text.regions[1].transcript == "SHOP");
  // twins differ only inside region bounding boxes
  cv::Mat1b changed(pair.with_text.pixels.size(), uint8_t{0});
  cv::Mat diff;
  cv::absdiff(pair.with_text.pixels, pair.text_free.pixels, diff);
  cv::Mat ch[3];
  cv::split(diff, ch);
  cv::Mat1b any = ch[0] | ch[1] | ch[2];
  cv::Mat1b in_regions = cv::Mat1b::zeros(any.size());
  for (const auto& reg : pair.with_text.regions)
    in_regions |= rasterize(reg.polygon, any.size()).mask;
  CHECK(cv::countNonZero(any & ~in_regions) == 0);
  // text actually changed pixels
  CHECK(cv::countNonZero(any) > 0);
}

TEST_CASE("render_scene region polygons cover the drawn strokes") {
  const auto pair = render_scene(small_spec(1), "s2", 3);
  REQUIRE(pair.with_text.regions.size() == 1);
  const auto mask = rasterize(pair.with_text.regions[0].polygon,
                              pair.with_text.pixels.size()).mask;
  cv::Mat diff;
  cv::absdiff(pair.with_text.pixels, pair.text_free.pixels, diff);
  cv::Mat ch[3];
  cv::split(diff, ch);
  const cv::Mat1b any = ch[0] | ch[1] | ch[2];
  CHECK(cv::countNonZero(any & ~mask) == 0);
}

TEST_CASE("render_scene rejects placements that cannot fit") {
  RenderSpec spec;
  spec.canvas = {40, 40};
  Placement p;
  p.text = "ABCDEFGHIJKLMNOPQRSTUVWX";
  p.font_size_min = 30;
  p.font_size_max = 30;
  spec.placements = {p};
  CHECK_THROWS_AS(render_scene(spec, "toobig", 1), std::invalid_argument);
}

TEST_CASE("render_text_free has no regions and the right provenance") {
  const auto rec = render_text_free(small_spec(0), "c0", 5);
  CHECK(rec.regions.empty());
  CHECK(rec.twin_id.empty());
  REQUIRE(rec.provenance.size() == 1);
  CHECK(rec.provenance[0].kind == ProvenanceKind::RenderedTextFree);
}

TEST_CASE("erase_manual swaps in twin pixels and flags regions erased") {
  const auto pair = render_scene(small_spec(), "s3", 17);
  const ImageRecord erased = erase_manual(pair.with_text, pair.text_free);
  CHECK(same_pixels(erased.pixels, pair.text_free.pixels));
  CHECK(erased.regions.size() == pair.with_text.regions.size());
  for (const auto& r : erased.regions) CHECK(r.erased);
  CHECK(erased.active_regions().empty());
  CHECK(erased.last_step() == ProvenanceKind::ManualErase);
  CHECK(erased.has_step(ProvenanceKind::RenderedWithText));
  // only with-text records can be manually erased
  CHECK_THROWS(erase_manual(pair.text_free, pair.text_free));
}

TEST_CASE("apply_str_oracle only changes pixels inside the dilated mask") {
  const auto pair = render_scene(small_spec(), "s4", 23);
  for (StrMethod m : {StrMethod::MeanFill, StrMethod::DiffusionFill,
                      StrMethod::PatchCopy}) {
    const ImageRecord out = apply_str_oracle(pair.with_text, m, 2, 99);
    CHECK(out.last_step() == ProvenanceKind::StrApplied);
    CHECK(out.pixels.size() == pair.with_text.pixels.size());
    const cv::Mat1b mask = removal_mask(pair.with_text, 2);
    for (int r = 0; r < out.pixels.rows; ++r)
      for (int c = 0; c < out.pixels.cols; ++c)
        if (!mask(r, c)) {
          if (out.pixels(r, c) != pair.with_text.pixels(r, c)) {
            CAPTURE(r);
            CAPTURE(c);
            CHECK(out.pixels(r, c) == pair.with_text.pixels(r, c));
          }
        }
    // the text strokes themselves must change
    cv::Mat diff;
    cv::absdiff(out.pixels, pair.with_text.pixels, diff);
    cv::Mat chs[3];
    cv::split(diff, chs);
    CHECK(cv::countNonZero(chs[0] | chs[1] | chs[2]) > 0);
  }
}

TEST_CASE("apply_str_oracle on a record with no active regions is identity") {
  const auto pair = render_scene(small_spec(), "s5", 31);
  const ImageRecord erased = erase_manual(pair.with_text, pair.text_free);
  const ImageRecord out = apply_str_oracle(erased, StrMethod::MeanFill, 2, 1);
  CHECK(same_pixels(out.pixels, erased.pixels));
  CHECK(out.last_step() == ProvenanceKind::StrApplied);
  CHECK(out.provenance.size() == erased.provenance.size() + 1);
}

TEST_CASE("mean fill on a flat background reproduces the background color") {
  RenderSpec spec = small_spec(1);
  spec.background = "flat:40,90,160";
  const auto pair = render_scene(spec, "s6", 41);
  const ImageRecord out = apply_str_oracle(pair.with_text, StrMethod::MeanFill, 2, 1);
  // every pixel inside the mask must be the flat background color
  const cv::Mat1b mask = removal_mask(pair.with_text, 2);
  for (int r = 0; r < out.pixels.rows; ++r)
    for (int c = 0; c < out.pixels.cols; ++c)
      if (mask(r, c)) {
        const cv::Vec3b px = out.pixels(r, c);
        CHECK(static_cast<int>(px[0]) == 40);
        CHECK(static_cast<int>(px[1]) == 90);
        CHECK(static_cast<int>(px[2]) == 160);
      }
}

TEST_CASE("str method string round-trip") {
  for (StrMethod m : {StrMethod::MeanFill, StrMethod::DiffusionFill,
                      StrMethod::PatchCopy})
    CHECK(str_method_from_string(to_string(m)) == m);
  CHECK_THROWS(str_method_from_string("nope"));
}

TEST_CASE("apply_str_external runs the command template") {
  const fs::path dir = temp_dir("external");
  const auto pair = render_scene(small_spec(1), "s7", 51);
  // trivial external tool: copies the input image unchanged
  const ImageRecord out =
      apply_str_external(pair.with_text, "cp {image} {out} # {mask}", 2, dir);
  CHECK(same_pixels(out.pixels, pair.with_text.pixels));
  CHECK(out.last_step() == ProvenanceKind::StrApplied);
  // failing command throws
  CHECK_THROWS(apply_str_external(pair.with_text, "false # {image} {mask} {out}",
                                  2, dir));
  fs::remove_all(dir);
}

TEST_CASE("save and load corpus round-trips records") {
  const fs::path dir = temp_dir("corpus_rt");
  const auto pair = render_scene(small_spec(), "rt0", 61);
  ImageRecord clean = render_text_free(small_spec(0), "rt1", 62);
  clean.test_pool = true;
  const ImageRecord erased = erase_manual(pair.with_text, pair.text_free);
  ImageRecord erased_named = erased;
  erased_named.id = "rt0_me";
  std::vector<ImageRecord> corpus = {pair.with_text, pair.text_free, clean,
                                     erased_named};
  save_corpus(corpus, dir);
  CHECK(fs::exists(dir / "corpus.manifest"));
  CHECK(fs::exists(dir / "images" / "rt0.png"));
  CHECK(fs::exists(dir / "annotations" / "rt0.txt"));

  const auto back = load_corpus(dir);
  REQUIRE(back.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].id == corpus[i].id);
    CHECK(same_pixels(back[i].pixels, corpus[i].pixels));
    CHECK(back[i].twin_id == corpus[i].twin_id);
    CHECK(back[i].test_pool == corpus[i].test_pool);
    REQUIRE(back[i].regions.size() == corpus[i].regions.size());
    for (size_t j = 0; j < corpus[i].regions.size(); ++j) {
      CHECK(back[i].regions[j].transcript == corpus[i].regions[j].transcript);
      CHECK(back[i].regions[j].erased == corpus[i].regions[j].erased);
      REQUIRE(back[i].regions[j].polygon.vertices.size() ==
              corpus[i].regions[j].polygon.vertices.size());
    }
    REQUIRE(back[i].provenance.size() == corpus[i].provenance.size());
    for (size_t j = 0; j < corpus[i].provenance.size(); ++j)
      CHECK(back[i].provenance[j].kind == corpus[i].provenance[j].kind);
  }
  CHECK(find_record(back, "rt1") != nullptr);
  CHECK(find_record(back, "missing") == nullptr);
  fs::remove_all(dir);
}

TEST_CASE("import_external reads the images/annotations layout") {
  const fs::path dir = temp_dir("import");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "annotations");
  cv::Mat3b img(32, 48, cv::Vec3b(10, 20, 30));
  cv::imwrite((dir / "images" / "a.png").string(), img);
  cv::imwrite((dir / "images" / "b.png").string(), img);
  {
    std::ofstream f(dir / "annotations" / "a.txt");
    f << "2,2,20,2,20,12,2,12;HELLO\n";
    f << "5,20,30,20,30,30,5,30\n";       // no transcript
    f << "not a polygon line\n";          // malformed: counted, skipped
  }
  // b has no annotation file: imported with zero regions
  std::ofstream(dir / "images" / "broken.png") << "not an image";

  ImportStats stats;
  const auto records = import_external(dir, &stats);
  REQUIRE(records.size() == 2);
  CHECK(stats.imported == 2);
  CHECK(stats.skipped_images == 1);
  CHECK(stats.bad_annotation_lines == 1);
  const ImageRecord* a = find_record(records, "a");
  REQUIRE(a != nullptr);
  REQUIRE(a->regions.size() == 2);
  CHECK(a->regions[0].transcript == "HELLO");
  CHECK(a->regions[1].transcript.empty());
  CHECK(a->regions[0].polygon.vertices.size() == 4);
  const ImageRecord* b = find_record(records, "b");
  REQUIRE(b != nullptr);
  CHECK(b->regions.empty());
  CHECK(b->pixels.size() == cv::Size(48, 32));
  fs::remove_all(dir);
}

TEST_CASE("provenance chains are append-only through the pipeline") {
  const auto pair = render_scene(small_spec(), "pv", 71);
  const ImageRecord str1 = apply_str_oracle(pair.with_text, StrMethod::MeanFill, 2, 1);
  REQUIRE(str1.provenance.size() == 2);
  CHECK(str1.provenance[0].kind == ProvenanceKind::RenderedWithText);
  CHECK(str1.provenance[1].kind == ProvenanceKind::StrApplied);
  const ImageRecord erased = erase_manual(pair.with_text, pair.text_free);
  const ImageRecord str2 = apply_str_oracle(erased, StrMethod::MeanFill, 2, 1);
  REQUIRE(str2.provenance.size() == 3);
  CHECK(str2.provenance[1].kind == ProvenanceKind::ManualErase);
  CHECK(str2.provenance[2].kind == ProvenanceKind::StrApplied);
}
