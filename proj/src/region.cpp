#include "istr/region.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <opencv2/imgproc.hpp>
#include <random>
#include <stdexcept>

#include "istr/corpus.hpp"
#include "json.hpp"

using json = nlohmann::json;

namespace istr {

void RegionTrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (mask_threshold <= 0 || mask_threshold >= 1)
    throw std::invalid_argument("mask_threshold must be in (0,1)");
  if (train_size < 32) throw std::invalid_argument("train_size too small");
}

RegionModel::RegionModel(const RegionTrainConfig& config, uint64_t init_seed)
    : cfg_(config) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  auto& L = net_.layers;
  L.push_back(std::make_unique<nn::Conv2d>(3, 10, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::Conv2d>(10, 10, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::Conv2d>(10, 10, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::Conv2d>(10, 1, rng));
}

nn::Tensor RegionModel::to_tensor(const cv::Mat3b& image) const {
  cv::Mat3b resized;
  cv::resize(image, resized, {cfg_.train_size, cfg_.train_size}, 0, 0,
             cv::INTER_AREA);
  const int s = cfg_.train_size;
  nn::Tensor t({3, s, s});
  for (int ch = 0; ch < 3; ++ch) {
    const float mean = static_cast<float>(norm_mean[ch]);
    const float stdv = static_cast<float>(std::max(norm_std[ch], 1e-6));
    float* dst = t.ptr() + static_cast<size_t>(ch) * s * s;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c)
        dst[r * s + c] = (resized(r, c)[ch] / 255.f - mean) / stdv;
  }
  return t;
}

cv::Mat1f RegionModel::probability_map(const cv::Mat3b& image) {
  const nn::Tensor logits = net_.forward(to_tensor(image));
  const int s = cfg_.train_size;
  cv::Mat1f prob(s, s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c)
      prob(r, c) = 1.f / (1.f + std::exp(-logits.data[r * s + c]));
  cv::Mat1f up;
  cv::resize(prob, up, image.size(), 0, 0, cv::INTER_LINEAR);
  return up;
}

void RegionModel::save(const std::filesystem::path& path,
                       const std::map<std::string, std::string>& extra_meta) {
  std::map<std::string, std::string> meta = extra_meta;
  meta["config"] = json({{"learning_rate", cfg_.learning_rate},
                         {"batch_size", cfg_.batch_size},
                         {"epochs", cfg_.epochs},
                         {"seed", cfg_.seed},
                         {"mask_threshold", cfg_.mask_threshold},
                         {"train_size", cfg_.train_size},
                         {"pos_weight", cfg_.pos_weight}})
                      .dump();
  meta["norm"] = json({norm_mean[0], norm_mean[1], norm_mean[2], norm_std[0],
                       norm_std[1], norm_std[2]})
                     .dump();
  nn::save_checkpoint(path, "region_fcn", meta, net_);
}

RegionModel RegionModel::load(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  const json j = json::parse(meta.at("config"));
  RegionTrainConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.mask_threshold = j.at("mask_threshold").get<double>();
  cfg.train_size = j.at("train_size").get<int>();
  cfg.pos_weight = j.at("pos_weight").get<double>();
  RegionModel model(cfg, 0);
  nn::load_checkpoint(path, "region_fcn", model.net_);
  const json norm = json::parse(meta.at("norm"));
  model.norm_mean = {norm[0], norm[1], norm[2]};
  model.norm_std = {norm[3], norm[4], norm[5]};
  return model;
}

std::vector<RegionSample> make_region_samples(const std::vector<ImageRecord>& strd) {
  std::vector<RegionSample> out;
  for (const auto& rec : strd) {
    if (rec.provenance.empty() || rec.last_step() != ProvenanceKind::StrApplied)
      throw std::invalid_argument(
          "make_region_samples: record without STR provenance would expose visible "
          "text: " + rec.id);
    RegionSample s;
    s.record = &rec;
    for (const auto& region : rec.regions)
      if (!region.erased) s.gt_polygons.push_back(region.polygon);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::vector<float> gt_target(const RegionSample& s, int size) {
  const cv::Mat1b full = rasterize_union(s.gt_polygons, s.record->pixels.size());
  cv::Mat1b small;
  cv::resize(full, small, {size, size}, 0, 0, cv::INTER_AREA);
  std::vector<float> t(static_cast<size_t>(size) * size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) t[r * size + c] = small(r, c) >= 128 ? 1.f : 0.f;
  return t;
}

double val_mean_iou(const std::vector<RegionSample>& set, RegionModel& model,
                    double threshold, int min_area) {
  if (set.empty()) return 0.0;
  double sum = 0;
  for (const auto& s : set) {
    const DetectionResult det =
        detect_regions(s.record->pixels, model, threshold, min_area, s.record->id);
    RegionSetPair pair;
    pair.gt = s.gt_polygons;
    for (const auto& r : det.regions) pair.pred.push_back(r.polygon);
    pair.canvas = s.record->pixels.size();
    sum += union_iou(pair);
  }
  return sum / set.size();
}

}  // namespace

RegionTrainResult train_region(const std::vector<RegionSample>& train_set,
                               const std::vector<RegionSample>& val_set,
                               const RegionTrainConfig& config,
                               const std::filesystem::path& out_dir) {
  config.validate();
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train_region: empty train or val set");
  std::filesystem::create_directories(out_dir);

  RegionModel model(config, config.seed);

  cv::Vec3d sum(0, 0, 0), sumsq(0, 0, 0);
  long npix = 0;
  for (const auto& s : train_set) {
    cv::Mat3b resized;
    cv::resize(s.record->pixels, resized, {config.train_size, config.train_size}, 0,
               0, cv::INTER_AREA);
    for (int r = 0; r < resized.rows; ++r)
      for (int c = 0; c < resized.cols; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          const double v = resized(r, c)[ch] / 255.0;
          sum[ch] += v;
          sumsq[ch] += v * v;
        }
    npix += resized.rows * resized.cols;
  }
  for (int ch = 0; ch < 3; ++ch) {
    model.norm_mean[ch] = sum[ch] / npix;
    model.norm_std[ch] = std::sqrt(
        std::max(1e-8, sumsq[ch] / npix - model.norm_mean[ch] * model.norm_mean[ch]));
  }

  std::vector<nn::Tensor> xs;
  std::vector<std::vector<float>> ys;
  for (const auto& s : train_set) {
    xs.push_back(model.to_tensor(s.record->pixels));
    ys.push_back(gt_target(s, config.train_size));
  }

  nn::AdamConfig ocfg;
  ocfg.lr = static_cast<float>(config.learning_rate);
  nn::Adam opt(ocfg);
  std::mt19937_64 rng(config.seed + 1);
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  RegionTrainResult result;
  double best_val = -1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    model.net().zero_grads();
    int in_batch = 0;
    for (size_t k = 0; k < order.size(); ++k) {
      const size_t i = order[k];
      const nn::Tensor logits = model.net().forward(xs[i]);
      nn::Tensor dlogits;
      const float loss = nn::bce_logits(logits, ys[i],
                                        static_cast<float>(config.pos_weight),
                                        &dlogits);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_region: non-finite loss at epoch " +
                                 std::to_string(epoch));
      loss_sum += loss;
      model.net().backward(dlogits);
      if (++in_batch == config.batch_size || k + 1 == order.size()) {
        model.net().scale_grads(1.f / in_batch);
        opt.step(model.net().params(), model.net().grads());
        model.net().zero_grads();
        in_batch = 0;
      }
    }
    const double viou = val_mean_iou(val_set, model, config.mask_threshold, 25);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / train_set.size();
    rec.train_metric = 0.0;
    rec.val_metric = viou;
    result.log.epochs.push_back(rec);

    result.last_checkpoint = out_dir / "region_last.bin";
    model.save(result.last_checkpoint, {{"epoch", std::to_string(epoch)}});
    if (viou > best_val) {
      best_val = viou;
      result.best_checkpoint = out_dir / "region_best.bin";
      model.save(result.best_checkpoint, {{"epoch", std::to_string(epoch)}});
    }
  }
  result.log.save(out_dir / "region_trainlog.tsv");
  return result;
}

DetectionResult postprocess_probability_map(const cv::Mat1f& prob,
                                            double mask_threshold, int min_area,
                                            const std::string& image_id) {
  cv::Mat1b bin(prob.size());
  for (int r = 0; r < prob.rows; ++r)
    for (int c = 0; c < prob.cols; ++c)
      bin(r, c) = prob(r, c) >= mask_threshold ? 255 : 0;
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(bin, labels, stats, centroids, 4);
  DetectionResult out;
  out.image_id = image_id;
  for (int comp = 1; comp < n; ++comp) {
    if (stats.at<int>(comp, cv::CC_STAT_AREA) < min_area) continue;
    cv::Mat1b comp_mask = (labels == comp);
    auto loops = trace_boundary_loops(comp_mask);
    if (loops.empty()) continue;
    // Outer boundary = longest loop; interior holes are counted as filled.
    size_t biggest = 0;
    for (size_t i = 1; i < loops.size(); ++i)
      if (loops[i].vertices.size() > loops[biggest].vertices.size()) biggest = i;
    ScoredRegion region;
    region.polygon = std::move(loops[biggest]);
    double psum = 0;
    int pcount = 0;
    for (int r = 0; r < prob.rows; ++r)
      for (int c = 0; c < prob.cols; ++c)
        if (comp_mask(r, c)) {
          psum += prob(r, c);
          ++pcount;
        }
    region.confidence = pcount ? psum / pcount : 0.0;
    out.regions.push_back(std::move(region));
  }
  std::sort(out.regions.begin(), out.regions.end(),
            [](const ScoredRegion& a, const ScoredRegion& b) {
              return a.confidence > b.confidence;
            });
  return out;
}

DetectionResult detect_regions(const cv::Mat3b& image, RegionModel& model,
                               double mask_threshold, int min_area,
                               const std::string& image_id) {
  if (mask_threshold <= 0 || mask_threshold >= 1)
    throw std::invalid_argument("detect_regions: threshold must be in (0,1)");
  return postprocess_probability_map(model.probability_map(image), mask_threshold,
                                     min_area, image_id);
}

RegionEval evaluate_region(const std::vector<RegionSample>& test_set,
                           RegionModel& model, double mask_threshold, int min_area,
                           int k_exemplars) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_region: empty test set");
  RegionEval ev;
  for (const auto& s : test_set) {
    const DetectionResult det =
        detect_regions(s.record->pixels, model, mask_threshold, min_area, s.record->id);
    RegionSetPair pair;
    pair.gt = s.gt_polygons;
    for (const auto& r : det.regions) pair.pred.push_back(r.polygon);
    pair.canvas = s.record->pixels.size();
    ev.per_image.push_back({s.record->id, union_iou(pair)});
  }
  double sum = 0;
  for (const auto& [id, iou] : ev.per_image) sum += iou;
  ev.mean_iou = sum / ev.per_image.size();
  auto sorted = ev.per_image;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  for (int i = 0; i < k_exemplars && i < static_cast<int>(sorted.size()); ++i)
    ev.best_ids.push_back(sorted[i].first);
  for (int i = 0; i < k_exemplars && i < static_cast<int>(sorted.size()); ++i)
    ev.worst_ids.push_back(sorted[sorted.size() - 1 - i].first);
  return ev;
}

void save_detections(const std::vector<DetectionResult>& results,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  for (const auto& res : results)
    for (const auto& r : res.regions)
      out << res.image_id << '\t' << r.confidence << '\t'
          << polygon_to_string(r.polygon) << '\n';
}

cv::Mat3b overlay_detection(const cv::Mat3b& image, const std::vector<Polygon>& gt,
                            const std::vector<ScoredRegion>& pred) {
  cv::Mat3b out = image.clone();
  auto draw = [&out](const Polygon& poly, const cv::Scalar& color) {
    std::vector<cv::Point> pts;
    for (const auto& v : poly.vertices)
      pts.push_back({static_cast<int>(std::lround(v.x)),
                     static_cast<int>(std::lround(v.y))});
    cv::polylines(out, pts, true, color, 2);
  };
  for (const auto& p : gt) draw(p, {0, 0, 255});                 // GT red
  for (const auto& r : pred) draw(r.polygon, {0, 255, 0});       // prediction green
  return out;
}

}  // namespace istr
