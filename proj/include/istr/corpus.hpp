#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "istr/record.hpp"

namespace istr {

struct Placement {
  std::string text;
  int font_size_min = 24;  // glyph pixel height range
  int font_size_max = 48;
  // Position policy: "center" pins the text block to the canvas center,
  // "random" samples a location uniformly among the ones that fit.
  std::string position = "random";
};

struct RenderSpec {
  cv::Size canvas{512, 512};
  // Procedural background: "noise" (value-noise blotches + grain) or
  // "flat:<b>,<g>,<r>" for a constant color.
  std::string background = "noise";
  std::vector<Placement> placements;
};

struct RenderedPair {
  ImageRecord with_text;
  ImageRecord text_free;  // twin: identical pixels except text strokes
};

// Renders a with-text image and its text-free twin from the same background.
// Throws std::invalid_argument when no placement fits the canvas.
RenderedPair render_scene(const RenderSpec& spec, const std::string& id,
                          uint64_t seed);

// Standalone scene that never contained text (protocol-2 negatives).
ImageRecord render_text_free(const RenderSpec& spec, const std::string& id,
                             uint64_t seed);

// Returns the twin's pixels with provenance [..., MANUAL_ERASE]; region
// annotations are preserved and flagged erased.
ImageRecord erase_manual(const ImageRecord& record, const ImageRecord& twin);

enum class StrMethod { MeanFill, DiffusionFill, PatchCopy };
std::string to_string(StrMethod m);
StrMethod str_method_from_string(const std::string& s);

// Mask-based removal oracle: fills every active region (dilated by
// mask_dilation px) with the chosen method; pixels outside the dilated
// mask union are bit-identical to the input.
ImageRecord apply_str_oracle(const ImageRecord& record, StrMethod method,
                             int mask_dilation, uint64_t seed);

// External STR hook: subprocess taking (image path, mask path, output path).
// The command is run via the shell with {image} {mask} {out} placeholders.
ImageRecord apply_str_external(const ImageRecord& record,
                               const std::string& command_template,
                               int mask_dilation,
                               const std::filesystem::path& work_dir);

struct ImportStats {
  int imported = 0;
  int skipped_images = 0;
  int bad_annotation_lines = 0;
};

// SCUT-EnsText-style layout: images/ plus annotations/ with one text file
// per image, one region per line: x0,y0,x1,y1,...[;transcript]
std::vector<ImageRecord> import_external(const std::filesystem::path& root,
                                         ImportStats* stats = nullptr);

// Corpus directory: images/<id>.png, annotations/<id>.txt, corpus.manifest
// (JSON lines: id, paths, provenance, twin, test_pool).
void save_corpus(const std::vector<ImageRecord>& records,
                 const std::filesystem::path& root);
std::vector<ImageRecord> load_corpus(const std::filesystem::path& root);

const ImageRecord* find_record(const std::vector<ImageRecord>& corpus,
                               const std::string& id);

// Union of active-region masks, each dilated by mask_dilation px.
cv::Mat1b removal_mask(const ImageRecord& record, int mask_dilation);

}  // namespace istr
