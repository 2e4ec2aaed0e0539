#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "istr/presence.hpp"

using namespace istr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("istr_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny protocol-1 style dataset on a small canvas for fast training smoke
// tests.
struct TinyDataset {
  std::vector<ImageRecord> records;
  DatasetManifest manifest;
};

TinyDataset make_tiny_dataset(int scenes, uint64_t seed) {
  RenderSpec spec;
  spec.canvas = {128, 128};
  Placement p;
  p.text = "TEA";
  p.font_size_min = 20;
  p.font_size_max = 30;
  spec.placements = {p};
  std::vector<ImageRecord> corpus;
  for (int i = 0; i < scenes; ++i) {
    auto pair = render_scene(spec, "t" + std::to_string(i), seed + i);
    const bool test = i >= scenes - scenes / 4;
    pair.with_text.test_pool = test;
    pair.text_free.test_pool = test;
    corpus.push_back(pair.with_text);
    corpus.push_back(pair.text_free);
  }
  auto built = build_protocol(corpus, 1, StrMethod::MeanFill, 2, seed);
  std::vector<ImageRecord> all = corpus;
  all.insert(all.end(), built.derived.begin(), built.derived.end());
  TinyDataset ds;
  ds.manifest = split_manifest(built.manifest, all, 0.75, seed);
  ds.records = std::move(all);
  return ds;
}

TrainConfig tiny_config(int epochs, uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.learning_rate = 5e-4;
  cfg.input_size = 32;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint selection picks the earliest best validation metric") {
  TrainLog log;
  log.epochs = {{1, 0, 0, 0, 0.7}, {2, 0, 0, 0, 0.9}, {3, 0, 0, 0, 0.8}};
  CHECK(select_checkpoint(log) == 2);
  // ties go to the earlier epoch
  log.epochs = {{1, 0, 0, 0, 0.9}, {2, 0, 0, 0, 0.9}, {3, 0, 0, 0, 0.9}};
  CHECK(select_checkpoint(log) == 1);
  log.epochs = {{1, 0, 0, 0, 0.2}};
  CHECK(select_checkpoint(log) == 1);
  CHECK_THROWS(select_checkpoint(TrainLog{}));
}

TEST_CASE("train log round-trip") {
  TrainLog log;
  log.epochs = {{1, 1.5, 50.0, 1.4, 52.5}, {2, 0.9, 75.0, 1.0, 70.0}};
  const fs::path path = fs::temp_directory_path() / "istr_test_trainlog.tsv";
  log.save(path);
  const TrainLog back = TrainLog::load(path);
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[1].epoch == 2);
  CHECK(back.epochs[1].train_loss == doctest::Approx(0.9));
  CHECK(back.epochs[1].val_metric == doctest::Approx(70.0));
  fs::remove(path);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.learning_rate = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.optimizer = "sgd_with_rumors";
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.input_size = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("classify threshold edge cases") {
  TrainConfig cfg = tiny_config(1, 5);
  PresenceModel model(cfg, 5);
  cv::Mat3b img(64, 64, cv::Vec3b(128, 128, 128));
  // threshold 0.0: every score qualifies as positive
  CHECK(model.classify(img, 0.0).str_ed);
  // threshold 1.0: score can never strictly exceed it
  CHECK_FALSE(model.classify(img, 1.0).str_ed);
  const auto v = model.classify(img, 0.5);
  CHECK(v.score >= 0.0);
  CHECK(v.score <= 1.0);
}

TEST_CASE("explain returns an input-sized normalized heatmap") {
  PresenceModel model(tiny_config(1, 6), 6);
  cv::Mat3b img(96, 80);
  cv::randu(img, 0, 255);
  const cv::Mat1f cam = model.explain(img);
  CHECK(cam.rows == 96);
  CHECK(cam.cols == 80);
  double lo, hi;
  cv::minMaxLoc(cam, &lo, &hi);
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
}

TEST_CASE("collect_split filters by split membership") {
  const TinyDataset ds = make_tiny_dataset(8, 42);
  const auto train = collect_split(ds.manifest, ds.records, Split::Train);
  const auto val = collect_split(ds.manifest, ds.records, Split::Val);
  const auto test = collect_split(ds.manifest, ds.records, Split::Test);
  CHECK(train.size() + val.size() + test.size() == ds.manifest.entries.size());
  CHECK(!train.empty());
  CHECK(!test.empty());
  for (const auto& item : train) {
    CHECK(item.record != nullptr);
    CHECK((item.label == 0 || item.label == 1));
  }
}

TEST_CASE("a short training run learns, is deterministic, and checkpoints") {
  const TinyDataset ds = make_tiny_dataset(12, 7);
  const TrainConfig cfg = tiny_config(6, 7);
  const fs::path out1 = temp_dir("presence_a"), out2 = temp_dir("presence_b");

  const auto r1 = train_presence(ds.manifest, ds.records, cfg, out1);
  REQUIRE(static_cast<int>(r1.log.epochs.size()) == cfg.epochs);
  CHECK(fs::exists(r1.best_checkpoint));
  CHECK(fs::exists(r1.last_checkpoint));
  CHECK(fs::exists(out1 / "presence_trainlog.tsv"));
  // loss went down over training
  CHECK(r1.log.epochs.back().train_loss < r1.log.epochs.front().train_loss);

  // bitwise determinism: identical logs from an identical run
  const auto r2 = train_presence(ds.manifest, ds.records, cfg, out2);
  REQUIRE(r2.log.epochs.size() == r1.log.epochs.size());
  for (size_t i = 0; i < r1.log.epochs.size(); ++i) {
    CHECK(r1.log.epochs[i].train_loss == r2.log.epochs[i].train_loss);
    CHECK(r1.log.epochs[i].val_metric == r2.log.epochs[i].val_metric);
  }

  // the saved best checkpoint matches the logged best epoch
  PresenceModel best = PresenceModel::load(r1.best_checkpoint);
  const auto eval = evaluate_presence(ds.manifest, ds.records, best, Split::Val);
  const int best_epoch = select_checkpoint(r1.log);
  double best_val = 0;
  for (const auto& e : r1.log.epochs)
    if (e.epoch == best_epoch) best_val = e.val_metric;
  CHECK(eval.accuracy == doctest::Approx(best_val).epsilon(1e-9));
  CHECK(eval.tp + eval.tn + eval.fp + eval.fn ==
        static_cast<int>(collect_split(ds.manifest, ds.records, Split::Val).size()));

  // reloaded model classifies identically to a second load
  PresenceModel again = PresenceModel::load(r1.best_checkpoint);
  const auto va = best.classify(ds.records.front().pixels);
  const auto vb = again.classify(ds.records.front().pixels);
  CHECK(va.score == vb.score);

  fs::remove_all(out1);
  fs::remove_all(out2);
}
