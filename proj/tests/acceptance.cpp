// Acceptance gate: ten criteria, one pass/fail line each. Exit code 0 only
// when every criterion passes. Desk-scale experiments are sized for a single
// CPU core.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "istr/report.hpp"

using namespace istr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void run_criterion(int number, const std::string& name,
                   const std::function<void()>& body) {
  const auto t0 = Clock::now();
  std::string error;
  try {
    body();
  } catch (const std::exception& e) {
    error = e.what();
  } catch (...) {
    error = "unknown exception";
  }
  const double secs =
      std::chrono::duration<double>(Clock::now() - t0).count();
  if (error.empty()) {
    std::printf("PASS  criterion %2d  %-38s (%.1fs)\n", number, name.c_str(),
                secs);
  } else {
    std::printf("FAIL  criterion %2d  %-38s (%.1fs): %s\n", number,
                name.c_str(), secs, error.c_str());
    ++g_failures;
  }
  std::fflush(stdout);
}

void require(bool cond, const std::string& what) {
  if (!cond) throw std::runtime_error(what);
}

// ---------------------------------------------------------------- criterion 1

bool oracle_inside(const std::vector<Polygon>& polys, double xc, double yc) {
  for (const auto& poly : polys) {
    int crossings = 0;
    const auto& v = poly.vertices;
    for (size_t i = 0; i < v.size(); ++i) {
      const Vec2& p = v[i];
      const Vec2& q = v[(i + 1) % v.size()];
      const double ylo = std::min(p.y, q.y), yhi = std::max(p.y, q.y);
      if (ylo <= yc && yc < yhi) {
        const double x = p.x + (yc - p.y) / (q.y - p.y) * (q.x - p.x);
        if (x <= xc) ++crossings;
      }
    }
    if (crossings % 2 == 1) return true;
  }
  return false;
}

double brute_force_union_iou(const RegionSetPair& pair) {
  long inter = 0, uni = 0;
  for (int r = 0; r < pair.canvas.height; ++r)
    for (int c = 0; c < pair.canvas.width; ++c) {
      const bool g = oracle_inside(pair.gt, c + 0.5, r + 0.5);
      const bool p = oracle_inside(pair.pred, c + 0.5, r + 0.5);
      inter += g && p;
      uni += g || p;
    }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

void criterion_iou_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(0, 90), len(2, 40);
  std::uniform_int_distribution<int> nboxes(0, 4);
  int cases = 0;
  for (int trial = 0; trial < 110; ++trial) {
    RegionSetPair pair;
    pair.canvas = {128, 128};
    auto gen = [&](std::vector<Polygon>* out) {
      for (int i = nboxes(rng); i > 0; --i) {
        const double x = pos(rng), y = pos(rng);
        out->push_back(Polygon::rect(x, y, x + len(rng), y + len(rng)));
      }
    };
    gen(&pair.gt);
    gen(&pair.pred);
    const double got = union_iou(pair), want = brute_force_union_iou(pair);
    require(std::abs(got - want) < 1e-6, "IoU off brute force: " +
                                             std::to_string(got) + " vs " +
                                             std::to_string(want));
    ++cases;
  }
  // one prediction merged over two disjoint GT boxes
  RegionSetPair merged;
  merged.gt = {Polygon::rect(10, 10, 40, 25), Polygon::rect(55, 10, 85, 25)};
  merged.pred = {Polygon::rect(10, 10, 85, 25)};
  const double got = union_iou(merged);
  require(std::abs(got - brute_force_union_iou(merged)) < 1e-6,
          "merged-region case off brute force");
  require(std::abs(got - (30.0 * 15 * 2) / (75.0 * 15)) < 1e-6,
          "merged-region case has the wrong value");
  ++cases;
  require(cases >= 100, "fewer than 100 randomized cases");
}

// ---------------------------------------------------------------- criterion 2

int memo_edit_distance(const std::string& a, const std::string& b,
                       std::vector<int>& memo, size_t i, size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  int& slot = memo[i * (b.size() + 1) + j];
  if (slot >= 0) return slot;
  const int sub =
      memo_edit_distance(a, b, memo, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
  const int del = memo_edit_distance(a, b, memo, i + 1, j) + 1;
  const int ins = memo_edit_distance(a, b, memo, i, j + 1) + 1;
  return slot = std::min({sub, del, ins});
}

void criterion_ned_oracle() {
  std::vector<std::string> words = {""};
  for (int len = 1; len <= 6; ++len) {
    const size_t start = words.size();
    std::vector<std::string> next;
    for (const auto& w : words)
      if (static_cast<int>(w.size()) == len - 1)
        for (char c : {'a', 'b', 'c'}) next.push_back(w + c);
    (void)start;
    words.insert(words.end(), next.begin(), next.end());
  }
  for (const auto& a : words)
    for (const auto& b : words) {
      std::vector<int> memo((a.size() + 1) * (b.size() + 1), -1);
      const int want = memo_edit_distance(a, b, memo, 0, 0);
      require(edit_distance(a, b) == want,
              "edit_distance(" + a + "," + b + ") != oracle");
    }
  require(std::abs(char_accuracy("TEA", "SEA") - 66.67) <= 0.01,
          "char_accuracy(TEA,SEA) not 66.67 +/- 0.01");
}

// -------------------------------------------------------- shared desk corpus

struct DeskLevel1 {
  std::vector<ImageRecord> records;  // corpus + protocol-1 derived
  DatasetManifest manifest_p1;
  double accuracy_p1 = 0.0;
  fs::path best_checkpoint_p1;
  std::vector<ImageRecord> corpus;  // renders only
};

CorpusConfig desk_corpus_config() {
  CorpusConfig cfg;
  cfg.n_scenes = 350;
  cfg.n_test_scenes = 100;
  cfg.n_text_free = 0;
  cfg.n_text_free_test = 0;
  cfg.canvas = 256;
  cfg.words_min = 2;
  cfg.words_max = 3;
  cfg.font_min = 28;
  cfg.font_max = 48;
  return cfg;
}

TrainConfig desk_level1_config() {
  TrainConfig cfg;
  cfg.epochs = 12;  // criterion allows up to 20
  cfg.batch_size = 16;
  cfg.learning_rate = 3e-3;
  cfg.input_size = 96;
  cfg.seed = 11;
  return cfg;
}

DeskLevel1 g_desk;

void criterion_level1(const fs::path& work) {
  g_desk.corpus = generate_corpus(desk_corpus_config(), 2026);
  auto built = build_protocol(g_desk.corpus, 1, StrMethod::MeanFill, 2, 5);
  g_desk.records = g_desk.corpus;
  g_desk.records.insert(g_desk.records.end(), built.derived.begin(),
                        built.derived.end());
  g_desk.manifest_p1 =
      split_manifest(built.manifest, g_desk.records, 0.9, 5);
  require(verify_manifest(g_desk.manifest_p1, g_desk.records).empty(),
          "protocol-1 manifest failed verification");

  int train_n = 0, test_n = 0;
  for (const auto& e : g_desk.manifest_p1.entries) {
    train_n += e.split == Split::Train;
    test_n += e.split == Split::Test;
  }
  require(train_n >= 600, "train split below 600 images");
  require(test_n >= 200, "test split below 200 images");

  const TrainConfig cfg = desk_level1_config();
  require(cfg.epochs <= 20, "epoch budget exceeded");
  const fs::path out = work / "level1_p1";
  fs::create_directories(out);
  const auto result =
      train_presence(g_desk.manifest_p1, g_desk.records, cfg, out);
  g_desk.best_checkpoint_p1 = result.best_checkpoint;
  PresenceModel best = PresenceModel::load(result.best_checkpoint);
  const auto eval =
      evaluate_presence(g_desk.manifest_p1, g_desk.records, best, Split::Test);
  g_desk.accuracy_p1 = eval.accuracy;
  std::printf("      level1 protocol 1 test accuracy: %.2f%% (n=%d)\n",
              eval.accuracy, test_n);
  require(eval.accuracy >= 85.0, "test accuracy below 85%: " +
                                     std::to_string(eval.accuracy));
}

void criterion_protocol3(const fs::path& work) {
  require(!g_desk.corpus.empty(), "desk corpus missing (criterion 3 failed)");
  auto built = build_protocol(g_desk.corpus, 3, StrMethod::MeanFill, 2, 5);
  std::vector<ImageRecord> all = g_desk.corpus;
  all.insert(all.end(), built.derived.begin(), built.derived.end());
  const auto manifest = split_manifest(built.manifest, all, 0.9, 5);
  require(verify_manifest(manifest, all).empty(),
          "protocol-3 manifest failed verification");

  const TrainConfig cfg = desk_level1_config();
  const fs::path out = work / "level1_p3";
  fs::create_directories(out);
  const auto result = train_presence(manifest, all, cfg, out);
  PresenceModel best = PresenceModel::load(result.best_checkpoint);
  const auto eval = evaluate_presence(manifest, all, best, Split::Test);
  std::printf("      level1 protocol 3 test accuracy: %.2f%% (protocol 1: %.2f%%)\n",
              eval.accuracy, g_desk.accuracy_p1);
  require(eval.accuracy >= 75.0, "protocol-3 accuracy below 75%: " +
                                     std::to_string(eval.accuracy));
  require(std::abs(eval.accuracy - g_desk.accuracy_p1) <= 15.0,
          "protocol-3 accuracy more than 15 points from protocol 1");
}

// ---------------------------------------------------------------- criterion 5

void criterion_level2(const fs::path& work) {
  require(!g_desk.records.empty(), "desk corpus missing (criterion 3 failed)");
  std::vector<ImageRecord> strd_train_pool, strd_test_pool;
  for (const auto& r : g_desk.records)
    if (r.last_step() == ProvenanceKind::StrApplied &&
        !r.active_regions().empty())
      (r.test_pool ? strd_test_pool : strd_train_pool).push_back(r);
  require(strd_train_pool.size() >= 300, "fewer than 300 STR-ed train images");
  require(strd_test_pool.size() >= 50, "too few STR-ed test images");

  const auto train_samples = make_region_samples(strd_train_pool);
  const auto test_samples = make_region_samples(strd_test_pool);
  const size_t n_val = 30;
  std::vector<RegionSample> train(train_samples.begin(),
                                  train_samples.end() - n_val);
  std::vector<RegionSample> val(train_samples.end() - n_val,
                                train_samples.end());

  RegionTrainConfig cfg;
  cfg.epochs = 30;  // criterion allows up to 100
  cfg.batch_size = 16;
  cfg.learning_rate = 2e-3;
  cfg.train_size = 96;
  cfg.seed = 13;
  require(cfg.epochs <= 100, "epoch budget exceeded");
  const fs::path out = work / "level2";
  fs::create_directories(out);
  const auto result = train_region(train, val, cfg, out);
  RegionModel best = RegionModel::load(result.best_checkpoint);
  const auto eval = evaluate_region(test_samples, best, cfg.mask_threshold, 25);
  std::printf("      level2 test mean union IoU: %.3f (n=%zu)\n", eval.mean_iou,
              test_samples.size());
  require(eval.mean_iou >= 0.40,
          "mean IoU below 0.40: " + std::to_string(eval.mean_iou));
}

// ---------------------------------------------------------------- criterion 6

void criterion_level3(const fs::path& work) {
  CorpusConfig cfg = desk_corpus_config();
  cfg.n_scenes = 1010;
  cfg.n_test_scenes = 0;
  cfg.canvas = 128;
  cfg.words_min = 2;
  cfg.words_max = 2;
  cfg.font_min = 14;
  cfg.font_max = 22;
  const auto corpus = generate_corpus(cfg, 31);

  std::vector<ImageRecord> with_text, strd;
  for (const auto& r : corpus)
    if (r.last_step() == ProvenanceKind::RenderedWithText) {
      ImageRecord s = apply_str_oracle(r, StrMethod::MeanFill, 2, 1);
      s.id = r.id + "_str";
      with_text.push_back(r);
      strd.push_back(std::move(s));
    }

  RecoveryBuildOptions opt;
  opt.alphabet = Alphabet::uppercase();
  opt.val_fraction = 0.15;
  opt.seed = 4;
  const auto set = build_recovery_set(with_text, strd, opt);
  require(set.size() >= 2000,
          "fewer than 2000 instances: " + std::to_string(set.size()));

  RecoveryTrainConfig tcfg;
  tcfg.epochs = 50;
  tcfg.batch_size = 16;
  tcfg.learning_rate = 2e-3;
  tcfg.crop_height = 16;
  tcfg.crop_width = 32;
  tcfg.seed = 17;
  require(tcfg.epochs <= 50, "epoch budget exceeded");
  const fs::path out = work / "level3";
  fs::create_directories(out);
  const auto result = train_recovery(set, tcfg, out);

  const auto& last = result.log.epochs.back();
  std::printf("      level3 last epoch: train Text-Acc %.2f%%, val %.2f%%\n",
              last.train_metric, last.val_metric);
  require(last.train_metric >= 50.0, "final train Text-Acc below 50%");
  for (const auto& e : result.log.epochs)
    require(e.val_metric <= 15.0, "val Text-Acc exceeded 15% at epoch " +
                                      std::to_string(e.epoch));
  require(last.train_metric - last.val_metric >= 30.0,
          "train/val gap below 30 points at the last epoch");
}

// ---------------------------------------------------------------- criterion 7

void criterion_checkpoint_selection() {
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> nlen(1, 40);
  std::uniform_real_distribution<double> metric(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 4);  // force ties
  for (int trial = 0; trial < 500; ++trial) {
    TrainLog log;
    const int n = nlen(rng);
    for (int i = 0; i < n; ++i) {
      EpochRecord e;
      e.epoch = i + 1;
      e.val_metric = trial % 2 == 0 ? metric(rng) : coarse(rng) / 4.0;
      log.epochs.push_back(e);
    }
    // independent earliest-argmax scan
    int want = 1;
    double best = log.epochs[0].val_metric;
    for (int i = 1; i < n; ++i)
      if (log.epochs[i].val_metric > best) {
        best = log.epochs[i].val_metric;
        want = i + 1;
      }
    require(select_checkpoint(log) == want, "select_checkpoint != earliest argmax");
  }
  bool threw = false;
  try {
    select_checkpoint(TrainLog{});
  } catch (const std::exception&) {
    threw = true;
  }
  require(threw, "select_checkpoint accepted an empty log");
}

// ---------------------------------------------------------------- criterion 8

void criterion_gradcam(const fs::path&) {
  require(!g_desk.best_checkpoint_p1.empty(),
          "no trained model (criterion 3 failed)");
  PresenceModel model = PresenceModel::load(g_desk.best_checkpoint_p1);
  int evaluated = 0, localized = 0;
  for (const auto& e : g_desk.manifest_p1.entries) {
    if (e.label != Label::Positive || e.split != Split::Test) continue;
    const ImageRecord* rec = find_record(g_desk.records, e.image_id);
    require(rec != nullptr, "missing record " + e.image_id);
    const cv::Mat1f cam = model.explain(rec->pixels);
    cv::Mat1b inside = cv::Mat1b::zeros(rec->pixels.size());
    for (const auto& reg : rec->active_regions())
      inside |= rasterize(reg.polygon, rec->pixels.size()).mask;
    const int n_in = cv::countNonZero(inside);
    if (n_in == 0 || n_in == inside.total()) continue;
    const double mean_in = cv::mean(cam, inside)[0];
    const double mean_out = cv::mean(cam, ~inside)[0];
    localized += mean_in > mean_out;
    if (++evaluated == 80) break;
  }
  require(evaluated >= 50, "fewer than 50 positives evaluated");
  const double frac = 100.0 * localized / evaluated;
  std::printf("      grad-cam localization: %.1f%% of %d positives\n", frac,
              evaluated);
  require(frac >= 70.0, "attribution localized in under 70% of positives");
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_determinism(const fs::path& work) {
  PipelineConfig cfg;
  cfg.seed = 3;
  cfg.corpus.n_scenes = 16;
  cfg.corpus.n_test_scenes = 4;
  cfg.corpus.n_text_free = 16;
  cfg.corpus.n_text_free_test = 4;
  cfg.corpus.canvas = 128;
  cfg.corpus.font_min = 12;
  cfg.corpus.font_max = 18;
  cfg.corpus.words_min = 2;
  cfg.corpus.words_max = 2;
  cfg.train_fraction = 0.75;
  cfg.level1.epochs = 2;
  cfg.level1.batch_size = 4;
  cfg.level1.input_size = 32;
  cfg.level2.epochs = 2;
  cfg.level2.batch_size = 4;
  cfg.level2.train_size = 48;
  cfg.level3.epochs = 2;
  cfg.level3.batch_size = 4;

  auto run_once = [&](const fs::path& out) {
    PipelineConfig c = cfg;
    c.out_dir = out;
    run_pipeline(c);
  };
  const fs::path out_a = work / "det_a", out_b = work / "det_b";
  run_once(out_a);
  run_once(out_b);

  // manifests byte-identical
  for (int p : {1, 2, 3}) {
    const fs::path rel = fs::path("datasets") /
                         ("protocol" + std::to_string(p) + ".manifest");
    const std::string a = slurp(out_a / rel), b = slurp(out_b / rel);
    require(!a.empty(), "missing manifest for protocol " + std::to_string(p));
    require(a == b, "manifest differs for protocol " + std::to_string(p));
  }
  // every metric identical to full precision
  std::vector<fs::path> reports;
  for (const auto& e : fs::recursive_directory_iterator(out_a))
    if (e.is_regular_file() && e.path().filename() == "report.json")
      reports.push_back(fs::relative(e.path(), out_a));
  require(!reports.empty(), "no reports produced");
  for (const auto& rel : reports) {
    const MetricsReport a = MetricsReport::load(out_a / rel);
    const MetricsReport b = MetricsReport::load(out_b / rel);
    require(a.metrics.size() == b.metrics.size(),
            "metric count differs in " + rel.string());
    for (const auto& [k, v] : a.metrics)
      require(b.metrics.count(k) == 1 && b.metrics.at(k) == v,
              "metric " + k + " differs in " + rel.string());
  }
}

// --------------------------------------------------------------- criterion 10

void criterion_str_locality() {
  RenderSpec spec;
  spec.canvas = {128, 128};
  Placement p;
  p.text = "MARKET";
  p.font_size_min = 14;
  p.font_size_max = 24;
  spec.placements = {p};
  const StrMethod methods[] = {StrMethod::MeanFill, StrMethod::DiffusionFill,
                               StrMethod::PatchCopy};
  for (int i = 0; i < 100; ++i) {
    const auto pair = render_scene(spec, "loc" + std::to_string(i), 9000 + i);
    const StrMethod m = methods[i % 3];
    const ImageRecord out = apply_str_oracle(pair.with_text, m, 2, i);
    const cv::Mat1b mask = removal_mask(pair.with_text, 2);
    for (int r = 0; r < out.pixels.rows; ++r)
      for (int c = 0; c < out.pixels.cols; ++c)
        if (!mask(r, c))
          require(out.pixels(r, c) == pair.with_text.pixels(r, c),
                  "pixel outside the dilated mask changed in image " +
                      std::to_string(i));
  }
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "istr_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  run_criterion(1, "union IoU vs brute force", criterion_iou_oracle);
  run_criterion(2, "edit distance vs recursive oracle", criterion_ned_oracle);
  run_criterion(3, "desk level-1 accuracy >= 85%",
                [&] { criterion_level1(work); });
  run_criterion(4, "protocol-3 accuracy holds up",
                [&] { criterion_protocol3(work); });
  run_criterion(5, "desk level-2 mean IoU >= 0.40",
                [&] { criterion_level2(work); });
  run_criterion(6, "level-3 overfitting signature",
                [&] { criterion_level3(work); });
  run_criterion(7, "checkpoint selection property",
                criterion_checkpoint_selection);
  run_criterion(8, "grad-cam localization >= 70%",
                [&] { criterion_gradcam(work); });
  run_criterion(9, "end-to-end determinism",
                [&] { criterion_determinism(work); });
  run_criterion(10, "STR locality, 100 images exhaustive",
                criterion_str_locality);

  fs::remove_all(work);
  if (g_failures == 0) {
    std::printf("ALL 10 CRITERIA PASSED\n");
    return 0;
  }
  std::printf("%d CRITERIA FAILED\n", g_failures);
  return 1;
}
