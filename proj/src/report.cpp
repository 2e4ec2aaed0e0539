#include "istr/report.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <sstream>

#include "json.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace istr {

namespace {

std::string fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

json corpus_to_json(const CorpusConfig& c) {
  return {{"n_scenes", c.n_scenes},
          {"n_test_scenes", c.n_test_scenes},
          {"n_text_free", c.n_text_free},
          {"n_text_free_test", c.n_text_free_test},
          {"canvas", c.canvas},
          {"words_min", c.words_min},
          {"words_max", c.words_max},
          {"font_min", c.font_min},
          {"font_max", c.font_max},
          {"word_len_min", c.word_len_min},
          {"word_len_max", c.word_len_max},
          {"background", c.background}};
}

CorpusConfig corpus_from_json(const json& j) {
  CorpusConfig c;
  c.n_scenes = j.value("n_scenes", c.n_scenes);
  c.n_test_scenes = j.value("n_test_scenes", c.n_test_scenes);
  c.n_text_free = j.value("n_text_free", c.n_text_free);
  c.n_text_free_test = j.value("n_text_free_test", c.n_text_free_test);
  c.canvas = j.value("canvas", c.canvas);
  c.words_min = j.value("words_min", c.words_min);
  c.words_max = j.value("words_max", c.words_max);
  c.font_min = j.value("font_min", c.font_min);
  c.font_max = j.value("font_max", c.font_max);
  c.word_len_min = j.value("word_len_min", c.word_len_min);
  c.word_len_max = j.value("word_len_max", c.word_len_max);
  c.background = j.value("background", c.background);
  return c;
}

json level1_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"optimizer", c.optimizer},
          {"backbone", c.backbone},           {"pretrained", c.pretrained},
          {"input_size", c.input_size},       {"augment_hflip", c.augment_hflip}};
}

TrainConfig level1_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.backbone = j.value("backbone", c.backbone);
  c.pretrained = j.value("pretrained", c.pretrained);
  c.input_size = j.value("input_size", c.input_size);
  c.augment_hflip = j.value("augment_hflip", c.augment_hflip);
  return c;
}

json level2_to_json(const RegionTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"mask_threshold", c.mask_threshold},
          {"train_size", c.train_size},       {"pos_weight", c.pos_weight}};
}

RegionTrainConfig level2_from_json(const json& j) {
  RegionTrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.mask_threshold = j.value("mask_threshold", c.mask_threshold);
  c.train_size = j.value("train_size", c.train_size);
  c.pos_weight = j.value("pos_weight", c.pos_weight);
  return c;
}

json level3_to_json(const RecoveryTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"crop_height", c.crop_height},
          {"crop_width", c.crop_width},       {"max_len", c.max_len}};
}

RecoveryTrainConfig level3_from_json(const json& j) {
  RecoveryTrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.crop_height = j.value("crop_height", c.crop_height);
  c.crop_width = j.value("crop_width", c.crop_width);
  c.max_len = j.value("max_len", c.max_len);
  return c;
}

json pipeline_to_json(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"out_dir", c.out_dir.string()},
          {"stages", c.stages},
          {"workers", c.workers},
          {"deterministic", c.deterministic},
          {"corpus", corpus_to_json(c.corpus)},
          {"protocols", c.protocols},
          {"str_method", to_string(c.str_method)},
          {"mask_dilation", c.mask_dilation},
          {"train_fraction", c.train_fraction},
          {"level1_protocol", c.level1_protocol},
          {"level1", level1_to_json(c.level1)},
          {"level2", level2_to_json(c.level2)},
          {"level2_min_area", c.level2_min_area},
          {"level3", level3_to_json(c.level3)},
          {"level3_val_fraction", c.level3_val_fraction}};
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir.string());
  c.stages = j.value("stages", c.stages);
  c.workers = j.value("workers", c.workers);
  c.deterministic = j.value("deterministic", c.deterministic);
  if (j.contains("corpus")) c.corpus = corpus_from_json(j.at("corpus"));
  c.protocols = j.value("protocols", c.protocols);
  c.str_method = str_method_from_string(j.value("str_method", to_string(c.str_method)));
  c.mask_dilation = j.value("mask_dilation", c.mask_dilation);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.level1_protocol = j.value("level1_protocol", c.level1_protocol);
  if (j.contains("level1")) c.level1 = level1_from_json(j.at("level1"));
  if (j.contains("level2")) c.level2 = level2_from_json(j.at("level2"));
  c.level2_min_area = j.value("level2_min_area", c.level2_min_area);
  if (j.contains("level3")) c.level3 = level3_from_json(j.at("level3"));
  c.level3_val_fraction = j.value("level3_val_fraction", c.level3_val_fraction);
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string PipelineConfig::to_json_text() const {
  return pipeline_to_json(*this).dump(2);
}

void PipelineConfig::validate() const {
  std::vector<std::string> violations;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) violations.push_back(msg);
  };
  check(corpus.n_scenes > 0, "corpus.n_scenes must be > 0");
  check(corpus.canvas >= 64, "corpus.canvas must be >= 64");
  check(corpus.words_min >= 1 && corpus.words_max >= corpus.words_min,
        "corpus word count range invalid");
  check(corpus.font_min > 0 && corpus.font_max >= corpus.font_min,
        "corpus font size range invalid");
  check(mask_dilation >= 0, "mask_dilation must be >= 0");
  check(train_fraction > 0 && train_fraction < 1, "train_fraction must be in (0,1)");
  check(level1.learning_rate > 0, "level1.learning_rate must be > 0");
  check(level1.batch_size >= 1, "level1.batch_size must be >= 1");
  check(level1.epochs >= 1, "level1.epochs must be >= 1");
  check(level2.learning_rate > 0, "level2.learning_rate must be > 0");
  check(level2.epochs >= 1, "level2.epochs must be >= 1");
  check(level2.mask_threshold > 0 && level2.mask_threshold < 1,
        "level2.mask_threshold must be in (0,1)");
  check(level3.learning_rate > 0, "level3.learning_rate must be > 0");
  check(level3.epochs >= 1, "level3.epochs must be >= 1");
  check(level3_val_fraction > 0 && level3_val_fraction < 1,
        "level3_val_fraction must be in (0,1)");
  for (int p : protocols)
    check(p >= 1 && p <= 3, "protocol out of range: " + std::to_string(p));
  check(level1_protocol >= 1 && level1_protocol <= 3, "level1_protocol out of range");
  for (const auto& s : stages)
    check(s == "corpus" || s == "datasets" || s == "level1" || s == "level2" ||
              s == "level3" || s == "report",
          "unknown stage: " + s);
  if (!violations.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw std::invalid_argument(msg);
  }
}

std::string PipelineConfig::fingerprint() const {
  return fnv1a(pipeline_to_json(*this).dump());
}

void MetricsReport::save(const std::filesystem::path& path) const {
  json j = {{"stage", stage},
            {"metrics", metrics},
            {"details", details},
            {"config_fingerprint", config_fingerprint},
            {"toolkit_version", toolkit_version}};
  json items = json::array();
  for (const auto& [k, v] : per_item) items.push_back({{"id", k}, {"value", v}});
  j["per_item"] = items;
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

MetricsReport MetricsReport::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report: " + path.string());
  const json j = json::parse(in);
  MetricsReport r;
  r.stage = j.at("stage").get<std::string>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.details = j.at("details").get<std::map<std::string, std::string>>();
  for (const auto& item : j.at("per_item"))
    r.per_item.push_back({item.at("id").get<std::string>(),
                          item.at("value").get<double>()});
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  r.toolkit_version = j.at("toolkit_version").get<std::string>();
  return r;
}

std::vector<ImageRecord> generate_corpus(const CorpusConfig& cfg, uint64_t seed) {
  std::vector<ImageRecord> corpus;
  const int total_scenes = cfg.n_scenes + cfg.n_test_scenes;
  for (int i = 0; i < total_scenes; ++i) {
    std::mt19937_64 word_rng(seed * 1000003ull + i);
    RenderSpec spec;
    spec.canvas = {cfg.canvas, cfg.canvas};
    spec.background = cfg.background;
    std::uniform_int_distribution<int> nwords(cfg.words_min, cfg.words_max);
    std::uniform_int_distribution<int> wlen(cfg.word_len_min, cfg.word_len_max);
    std::uniform_int_distribution<int> letter(0, 25);
    const int n = nwords(word_rng);
    for (int w = 0; w < n; ++w) {
      Placement p;
      const int len = wlen(word_rng);
      for (int k = 0; k < len; ++k)
        p.text.push_back(static_cast<char>('A' + letter(word_rng)));
      p.font_size_min = cfg.font_min;
      p.font_size_max = cfg.font_max;
      spec.placements.push_back(p);
    }
    char id[32];
    std::snprintf(id, sizeof(id), "scene%04d", i);
    RenderedPair pair = render_scene(spec, id, seed + 10007ull * i);
    pair.with_text.test_pool = pair.text_free.test_pool = (i >= cfg.n_scenes);
    corpus.push_back(std::move(pair.with_text));
    corpus.push_back(std::move(pair.text_free));
  }
  const int total_free = cfg.n_text_free + cfg.n_text_free_test;
  for (int i = 0; i < total_free; ++i) {
    RenderSpec spec;
    spec.canvas = {cfg.canvas, cfg.canvas};
    spec.background = cfg.background;
    char id[32];
    std::snprintf(id, sizeof(id), "clean%04d", i);
    ImageRecord rec = render_text_free(spec, id, seed + 777777ull + 10007ull * i);
    rec.test_pool = (i >= cfg.n_text_free);
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

namespace {

bool stage_cached(const fs::path& dir, const std::string& fp) {
  std::ifstream in(dir / "fingerprint.txt");
  std::string existing;
  return in && std::getline(in, existing) && existing == fp;
}

void write_fingerprint(const fs::path& dir, const std::string& fp) {
  std::ofstream(dir / "fingerprint.txt") << fp << '\n';
}

struct StageContext {
  const PipelineConfig& cfg;
  std::string fp;

  fs::path dir(const std::string& name) const { return cfg.out_dir / name; }
};

void stage_corpus(const StageContext& ctx) {
  const fs::path dir = ctx.dir("corpus");
  if (stage_cached(dir, ctx.fp)) {
    std::cout << "[corpus] cached, skipping\n";
    return;
  }
  std::cout << "[corpus] generating " << std::flush;
  const auto corpus = generate_corpus(ctx.cfg.corpus, ctx.cfg.seed);
  save_corpus(corpus, dir);
  write_fingerprint(dir, ctx.fp);
  std::cout << corpus.size() << " records\n";
}

void stage_datasets(const StageContext& ctx) {
  const fs::path dir = ctx.dir("datasets");
  if (stage_cached(dir, ctx.fp)) {
    std::cout << "[datasets] cached, skipping\n";
    return;
  }
  const auto corpus = load_corpus(ctx.dir("corpus"));
  fs::create_directories(dir);
  for (int p : ctx.cfg.protocols) {
    std::cout << "[datasets] protocol " << p << std::flush;
    ProtocolBuildResult built = build_protocol(corpus, p, ctx.cfg.str_method,
                                               ctx.cfg.mask_dilation, ctx.cfg.seed);
    std::vector<ImageRecord> all = corpus;
    for (auto& rec : built.derived) all.push_back(rec);
    DatasetManifest manifest =
        split_manifest(built.manifest, all, ctx.cfg.train_fraction, ctx.cfg.seed + p);
    const auto violations = verify_manifest(manifest, all);
    if (!violations.empty()) {
      std::string msg = "protocol " + std::to_string(p) + " manifest invalid:";
      for (const auto& v : violations) msg += "\n  " + v;
      throw std::runtime_error(msg);
    }
    save_corpus(built.derived, ctx.dir("derived_p" + std::to_string(p)));
    save_manifest(manifest, dir / ("protocol" + std::to_string(p) + ".manifest"));
    std::cout << ": " << manifest.entries.size() << " entries\n";
  }
  write_fingerprint(dir, ctx.fp);
}

std::pair<std::vector<ImageRecord>, DatasetManifest> load_protocol(
    const StageContext& ctx, int protocol) {
  auto records = load_corpus(ctx.dir("corpus"));
  const auto derived = load_corpus(ctx.dir("derived_p" + std::to_string(protocol)));
  records.insert(records.end(), derived.begin(), derived.end());
  const auto manifest =
      load_manifest(ctx.dir("datasets") / ("protocol" + std::to_string(protocol) +
                                           ".manifest"));
  return {std::move(records), manifest};
}

void stage_level1(const StageContext& ctx) {
  for (int p : ctx.cfg.protocols) {
    const fs::path dir = ctx.dir("level1_p" + std::to_string(p));
    if (stage_cached(dir, ctx.fp)) {
      std::cout << "[level1] protocol " << p << " cached, skipping\n";
      continue;
    }
    std::cout << "[level1] protocol " << p << ": training\n";
    auto [records, manifest] = load_protocol(ctx, p);
    TrainConfig tc = ctx.cfg.level1;
    tc.seed = ctx.cfg.seed + 100 + p;
    const auto trained = train_presence(manifest, records, tc, dir);
    PresenceModel best = PresenceModel::load(trained.best_checkpoint);
    const PresenceEval ev = evaluate_presence(manifest, records, best, Split::Test);

    MetricsReport report;
    report.stage = "level1_p" + std::to_string(p);
    report.metrics["test_accuracy"] = ev.accuracy;
    report.metrics["tp"] = ev.tp;
    report.metrics["tn"] = ev.tn;
    report.metrics["fp"] = ev.fp;
    report.metrics["fn"] = ev.fn;
    report.metrics["best_epoch"] = select_checkpoint(trained.log);
    report.details["protocol"] = std::to_string(p);
    report.config_fingerprint = ctx.fp;
    report.save(dir / "report.json");

    // A few Grad-CAM heatmaps over test positives (grayscale + overlay).
    int emitted = 0;
    for (const auto& e : manifest.entries) {
      if (e.split != Split::Test || e.label != Label::Positive || emitted >= 4)
        continue;
      const ImageRecord* rec = find_record(records, e.image_id);
      if (!rec) continue;
      cv::Mat1f cam = best.explain(rec->pixels);
      cv::Mat1b gray;
      cam.convertTo(gray, CV_8U, 255.0);
      cv::imwrite((dir / ("heatmap_" + rec->id + ".png")).string(), gray);
      cv::Mat3b heat, overlay;
      cv::applyColorMap(gray, heat, cv::COLORMAP_JET);
      cv::addWeighted(rec->pixels, 0.6, heat, 0.4, 0, overlay);
      cv::imwrite((dir / ("overlay_" + rec->id + ".png")).string(), overlay);
      ++emitted;
    }
    write_fingerprint(dir, ctx.fp);
    std::cout << "[level1] protocol " << p << " test accuracy " << ev.accuracy
              << "%\n";
  }
}

void split_region_samples(const std::vector<RegionSample>& all, uint64_t seed,
                          std::vector<RegionSample>* train,
                          std::vector<RegionSample>* val,
                          std::vector<RegionSample>* test) {
  std::vector<size_t> pool;
  for (size_t i = 0; i < all.size(); ++i) {
    if (all[i].record->test_pool)
      test->push_back(all[i]);
    else
      pool.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const size_t n_train = pool.size() * 4 / 5;
  for (size_t k = 0; k < pool.size(); ++k)
    (k < n_train ? train : val)->push_back(all[pool[k]]);
}

void stage_level2(const StageContext& ctx) {
  const fs::path dir = ctx.dir("level2");
  if (stage_cached(dir, ctx.fp)) {
    std::cout << "[level2] cached, skipping\n";
    return;
  }
  std::cout << "[level2] training\n";
  // STR-ed positives with pre-removal GT come from the protocol-1 build.
  const auto derived = load_corpus(ctx.dir("derived_p1"));
  std::vector<ImageRecord> strd;
  for (const auto& rec : derived)
    if (rec.last_step() == ProvenanceKind::StrApplied &&
        !rec.has_step(ProvenanceKind::ManualErase))
      strd.push_back(rec);
  const auto samples = make_region_samples(strd);
  std::vector<RegionSample> train, val, test;
  split_region_samples(samples, ctx.cfg.seed + 200, &train, &val, &test);

  RegionTrainConfig rc = ctx.cfg.level2;
  rc.seed = ctx.cfg.seed + 201;
  const auto trained = train_region(train, val, rc, dir);
  RegionModel best = RegionModel::load(trained.best_checkpoint);
  const RegionEval ev = evaluate_region(test, best, rc.mask_threshold,
                                        ctx.cfg.level2_min_area);

  MetricsReport report;
  report.stage = "level2";
  report.metrics["test_mean_iou"] = ev.mean_iou;
  report.metrics["best_epoch"] = select_checkpoint(trained.log);
  report.config_fingerprint = ctx.fp;
  for (const auto& [id, iou] : ev.per_image) report.per_item.push_back({id, iou});
  report.save(dir / "report.json");

  std::vector<DetectionResult> detections;
  auto emit_overlay = [&](const std::string& id) {
    for (const auto& s : test)
      if (s.record->id == id) {
        const DetectionResult det = detect_regions(
            s.record->pixels, best, rc.mask_threshold, ctx.cfg.level2_min_area, id);
        cv::imwrite((dir / ("overlay_" + id + ".png")).string(),
                    overlay_detection(s.record->pixels, s.gt_polygons, det.regions));
      }
  };
  for (const auto& id : ev.best_ids) emit_overlay(id);
  for (const auto& id : ev.worst_ids) emit_overlay(id);
  for (const auto& s : test)
    detections.push_back(detect_regions(s.record->pixels, best, rc.mask_threshold,
                                        ctx.cfg.level2_min_area, s.record->id));
  save_detections(detections, dir / "detections.tsv");
  write_fingerprint(dir, ctx.fp);
  std::cout << "[level2] test mean IoU " << ev.mean_iou << "\n";
}

void stage_level3(const StageContext& ctx) {
  const fs::path dir = ctx.dir("level3");
  if (stage_cached(dir, ctx.fp)) {
    std::cout << "[level3] cached, skipping\n";
    return;
  }
  std::cout << "[level3] building recovery set\n";
  const auto corpus = load_corpus(ctx.dir("corpus"));
  const auto derived = load_corpus(ctx.dir("derived_p1"));
  std::vector<ImageRecord> with_text, strd;
  for (const auto& rec : corpus)
    if (rec.last_step() == ProvenanceKind::RenderedWithText) with_text.push_back(rec);
  for (const auto& rec : derived)
    if (rec.last_step() == ProvenanceKind::StrApplied &&
        !rec.has_step(ProvenanceKind::ManualErase))
      strd.push_back(rec);

  RecoveryBuildOptions opts;
  opts.alphabet = Alphabet::uppercase();
  opts.val_fraction = ctx.cfg.level3_val_fraction;
  opts.seed = ctx.cfg.seed + 300;
  const auto instances = build_recovery_set(with_text, strd, opts);
  save_recovery_set(instances, dir / "recovery_set");

  std::cout << "[level3] training on " << instances.size() << " instances\n";
  RecoveryTrainConfig rc = ctx.cfg.level3;
  rc.seed = ctx.cfg.seed + 301;
  const auto trained = train_recovery(instances, rc, dir);
  RecoveryModel best = RecoveryModel::load(trained.best_checkpoint);
  RecoveryModel last = RecoveryModel::load(trained.last_checkpoint);
  const RecoveryReport rec_report = evaluate_recovery(instances, best, last);

  MetricsReport report;
  report.stage = "level3";
  for (const auto& [split, cells] : rec_report.cells)
    for (const auto& [ckpt, scores] : cells) {
      report.metrics[split + "_" + ckpt + "_text_acc"] = scores.text_accuracy;
      report.metrics[split + "_" + ckpt + "_char_acc"] = scores.char_accuracy;
    }
  report.metrics["best_epoch"] = select_checkpoint(trained.log);
  report.config_fingerprint = ctx.fp;
  report.save(dir / "report.json");
  write_fingerprint(dir, ctx.fp);
  std::cout << "[level3] done\n";
}

void collect_reports(const fs::path& out_dir, std::vector<MetricsReport>* reports,
                     std::vector<std::string>* paths) {
  if (!fs::exists(out_dir)) return;
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(out_dir))
    if (e.is_regular_file() && e.path().filename() == "report.json")
      found.push_back(e.path());
  std::sort(found.begin(), found.end());
  for (const auto& p : found) {
    reports->push_back(MetricsReport::load(p));
    if (paths) paths->push_back(fs::relative(p, out_dir).string());
  }
}

void stage_report(const StageContext& ctx) {
  std::vector<MetricsReport> reports;
  std::vector<std::string> report_paths;
  collect_reports(ctx.cfg.out_dir, &reports, &report_paths);
  if (!reports.empty())
    emit_report(reports, "markdown", ctx.cfg.out_dir / "report.md");

  // Bundle index: every artifact reachable from here.
  json index;
  index["config_fingerprint"] = ctx.fp;
  index["reports"] = report_paths;
  json files = json::array();
  for (const auto& e : fs::recursive_directory_iterator(ctx.cfg.out_dir))
    if (e.is_regular_file() && e.path().filename() != "index.json")
      files.push_back(fs::relative(e.path(), ctx.cfg.out_dir).string());
  std::sort(files.begin(), files.end());
  index["files"] = files;
  std::ofstream(ctx.cfg.out_dir / "index.json") << index.dump(2) << '\n';
}

}  // namespace

std::vector<std::filesystem::path> run_pipeline(const PipelineConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  StageContext ctx{config, config.fingerprint()};
  {
    std::ofstream cfg_out(config.out_dir / "config.json");
    cfg_out << config.to_json_text() << '\n';
  }
  const std::vector<std::string> order = {"corpus", "datasets", "level1",
                                          "level2", "level3"};
  auto requested = [&](const std::string& s) {
    return std::find(config.stages.begin(), config.stages.end(), s) !=
           config.stages.end();
  };
  for (const auto& stage : order) {
    if (!requested(stage)) continue;
    try {
      if (stage == "corpus") stage_corpus(ctx);
      else if (stage == "datasets") stage_datasets(ctx);
      else if (stage == "level1") stage_level1(ctx);
      else if (stage == "level2") stage_level2(ctx);
      else if (stage == "level3") stage_level3(ctx);
    } catch (const std::exception& e) {
      throw std::runtime_error("stage '" + stage + "' failed: " + e.what());
    }
  }
  stage_report(ctx);
  std::vector<fs::path> produced;
  std::vector<MetricsReport> reports;
  std::vector<std::string> rel;
  collect_reports(config.out_dir, &reports, &rel);
  for (const auto& r : rel) produced.push_back(config.out_dir / r);
  return produced;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

std::string emit_report_markdown(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("emit_report: no reports");
  std::ostringstream md;
  md << "# ISTR toolkit report\n\n";

  // Level 1: one column per protocol, reference rows alongside.
  std::map<int, const MetricsReport*> l1;
  for (const auto& r : reports)
    if (r.stage.rfind("level1_p", 0) == 0)
      l1[std::stoi(r.stage.substr(8))] = &r;
  if (!l1.empty()) {
    md << "## STR presence detection accuracy (%)\n\n";
    md << "| model | dataset 1 | dataset 2 | dataset 3 |\n";
    md << "|---|---|---|---|\n";
    md << "| this toolkit (desk scale) |";
    for (int p = 1; p <= 3; ++p) {
      auto it = l1.find(p);
      md << ' '
         << (it != l1.end() ? fmt(it->second->metrics.at("test_accuracy")) : "-")
         << " |";
    }
    md << "\n| ViTEraser (full scale, reference) |";
    for (double v : reference::kPresenceViterEraser) md << ' ' << fmt(v) << " |";
    md << "\n| DeepEraser (full scale, reference) |";
    for (double v : reference::kPresenceDeepEraser) md << ' ' << fmt(v) << " |";
    md << "\n\n";
  }

  for (const auto& r : reports) {
    if (r.stage != "level2") continue;
    md << "## STR region detection (mean IoU)\n\n";
    md << "| model | mean IoU |\n|---|---|\n";
    md << "| this toolkit (desk scale) | " << fmt(r.metrics.at("test_mean_iou"))
       << " |\n";
    md << "| ViTEraser (full scale, reference) | "
       << fmt(reference::kRegionIouViterEraser) << " |\n";
    md << "| DeepEraser (full scale, reference) | "
       << fmt(reference::kRegionIouDeepEraser) << " |\n\n";
  }

  for (const auto& r : reports) {
    if (r.stage != "level3") continue;
    md << "## STR text recovery accuracy (%)\n\n";
    md << "| checkpoint | split | Text-Acc | Char-Acc |\n|---|---|---|---|\n";
    for (const std::string ckpt : {"best", "last"})
      for (const std::string split : {"train", "val", "test"}) {
        const auto t = r.metrics.find(split + "_" + ckpt + "_text_acc");
        const auto c = r.metrics.find(split + "_" + ckpt + "_char_acc");
        if (t == r.metrics.end() || c == r.metrics.end()) continue;
        md << "| " << ckpt << " | " << split << " | " << fmt(t->second) << " | "
           << fmt(c->second) << " |\n";
      }
    md << "| reference: ViTEraser best | test | "
       << fmt(reference::kRecoveryViterEraserBestTest[0]) << " | "
       << fmt(reference::kRecoveryViterEraserBestTest[1]) << " |\n";
    md << "| reference: ViTEraser last | test | "
       << fmt(reference::kRecoveryViterEraserLastTest[0]) << " | "
       << fmt(reference::kRecoveryViterEraserLastTest[1]) << " |\n";
    md << "| reference: DeepEraser best | test | "
       << fmt(reference::kRecoveryDeepEraserBestTest[0]) << " | "
       << fmt(reference::kRecoveryDeepEraserBestTest[1]) << " |\n\n";
  }
  return md.str();
}

void emit_report(const std::vector<MetricsReport>& reports,
                 const std::string& format, const std::filesystem::path& out_path) {
  if (reports.empty()) throw std::invalid_argument("emit_report: no reports");
  if (format == "markdown") {
    std::ofstream(out_path) << emit_report_markdown(reports);
  } else if (format == "structured") {
    json arr = json::array();
    for (const auto& r : reports) {
      json j = {{"stage", r.stage},
                {"metrics", r.metrics},
                {"config_fingerprint", r.config_fingerprint},
                {"toolkit_version", r.toolkit_version}};
      arr.push_back(j);
    }
    std::ofstream(out_path) << arr.dump(2) << '\n';
  } else {
    throw std::invalid_argument("unknown report format: " + format);
  }
}

}  // namespace istr
