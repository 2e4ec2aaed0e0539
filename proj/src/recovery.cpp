#include "istr/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <sstream>
#include <stdexcept>

#include "istr/metrics.hpp"
#include "json.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace istr {

Alphabet Alphabet::latin(const std::string& punctuation) {
  Alphabet a;
  for (char c = 'A'; c <= 'Z'; ++c) a.chars.push_back(c);
  for (char c = 'a'; c <= 'z'; ++c) a.chars.push_back(c);
  for (char c = '0'; c <= '9'; ++c) a.chars.push_back(c);
  a.chars += punctuation;
  return a;
}

Alphabet Alphabet::uppercase() {
  Alphabet a;
  for (char c = 'A'; c <= 'Z'; ++c) a.chars.push_back(c);
  return a;
}

int Alphabet::index_of(char c) const {
  const auto pos = chars.find(c);
  if (pos == std::string::npos)
    throw std::invalid_argument(std::string("character outside alphabet: ") + c);
  return static_cast<int>(pos) + 1;
}

bool filter_latin(const std::string& text, const Alphabet& alphabet) {
  return std::all_of(text.begin(), text.end(),
                     [&](char c) { return alphabet.contains(c); });
}

cv::Mat3b crop_region(const cv::Mat3b& image, const Polygon& polygon, int padding,
                      int target_height) {
  const cv::Rect2d bb = polygon.bbox();
  int x0 = static_cast<int>(std::floor(bb.x)) - padding;
  int y0 = static_cast<int>(std::floor(bb.y)) - padding;
  int x1 = static_cast<int>(std::ceil(bb.x + bb.width)) + padding;
  int y1 = static_cast<int>(std::ceil(bb.y + bb.height)) + padding;
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, image.cols);
  y1 = std::min(y1, image.rows);
  if (x1 - x0 < 1 || y1 - y0 < 1)
    throw std::invalid_argument("crop_region: degenerate box after clipping");
  const cv::Mat3b box = image(cv::Rect(x0, y0, x1 - x0, y1 - y0));
  const double scale = static_cast<double>(target_height) / box.rows;
  const int out_w = std::max(1, static_cast<int>(std::lround(box.cols * scale)));
  cv::Mat3b out;
  cv::resize(box, out, {out_w, target_height}, 0, 0, cv::INTER_AREA);
  return out;
}

std::vector<RecoveryInstance> build_recovery_set(
    const std::vector<ImageRecord>& with_text,
    const std::vector<ImageRecord>& str_ed, const RecoveryBuildOptions& options,
    RecoveryBuildStats* stats) {
  RecoveryBuildStats local;
  std::vector<RecoveryInstance> out;
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution to_val(options.val_fraction);
  for (const auto& strd : str_ed) {
    if (strd.provenance.empty() || strd.last_step() != ProvenanceKind::StrApplied)
      throw std::invalid_argument("build_recovery_set: record not STR-ed: " + strd.id);
    // aligned source: "<id>_str" naming
    std::string src_id = strd.id;
    if (src_id.size() > 4 && src_id.ends_with("_str")) src_id.resize(src_id.size() - 4);
    const ImageRecord* src = find_record(with_text, src_id);
    if (!src)
      throw std::invalid_argument("build_recovery_set: no aligned with-text record for " +
                                  strd.id);
    if (src->regions.size() != strd.regions.size())
      throw std::invalid_argument("build_recovery_set: region mismatch for " + strd.id);
    for (size_t ri = 0; ri < strd.regions.size(); ++ri) {
      const TextRegion& region = strd.regions[ri];
      std::string pseudo_gt;
      if (options.reader) {
        try {
          cv::Mat3b pre_crop = crop_region(src->pixels, src->regions[ri].polygon,
                                           options.padding, options.target_height);
          pseudo_gt = options.reader(pre_crop).first;
        } catch (const std::exception& e) {
          std::cerr << "warning: reader failed on " << strd.id << " region " << ri
                    << ": " << e.what() << "\n";
          ++local.reader_failures;
          continue;
        }
      } else {
        pseudo_gt = src->regions[ri].transcript;
      }
      if (pseudo_gt.empty()) {
        ++local.excluded_empty;
        continue;
      }
      if (!filter_latin(pseudo_gt, options.alphabet)) {
        ++local.excluded_alphabet;
        continue;
      }
      RecoveryInstance inst;
      inst.crop = crop_region(strd.pixels, region.polygon, options.padding,
                              options.target_height);
      inst.pseudo_gt = pseudo_gt;
      inst.source_image_id = strd.id;
      inst.region_index = static_cast<int>(ri);
      inst.split = strd.test_pool ? Split::Test : (to_val(rng) ? Split::Val : Split::Train);
      out.push_back(std::move(inst));
      ++local.built;
    }
  }
  if (stats) *stats = local;
  return out;
}

void RecoveryTrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (max_len < 1 || crop_height < 8 || crop_width < 8)
    throw std::invalid_argument("bad recovery geometry");
}

RecoveryModel::RecoveryModel(const RecoveryTrainConfig& config,
                             const Alphabet& alphabet, uint64_t init_seed)
    : cfg_(config), alphabet_(alphabet) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  auto& L = net_.layers;
  // Single conv stage only: the residue that distinguishes one erased crop
  // from another is fine-grained background texture, which deeper pooling
  // stacks average away before the head can key on it.
  L.push_back(std::make_unique<nn::Conv2d>(3, 8, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::MaxPool2>());
  L.push_back(std::make_unique<nn::Flatten>());
  const int feat = 8 * (cfg_.crop_height / 2) * (cfg_.crop_width / 2);
  L.push_back(std::make_unique<nn::Linear>(feat, 1024, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::Linear>(1024, cfg_.max_len * alphabet_.num_classes(), rng));
}

nn::Tensor RecoveryModel::to_tensor(const cv::Mat3b& crop) const {
  cv::Mat3b resized;
  cv::resize(crop, resized, {cfg_.crop_width, cfg_.crop_height}, 0, 0,
             cv::INTER_AREA);
  nn::Tensor t({3, cfg_.crop_height, cfg_.crop_width});
  for (int ch = 0; ch < 3; ++ch) {
    float* dst = t.ptr() + static_cast<size_t>(ch) * cfg_.crop_height * cfg_.crop_width;
    for (int r = 0; r < cfg_.crop_height; ++r)
      for (int c = 0; c < cfg_.crop_width; ++c)
        dst[r * cfg_.crop_width + c] = resized(r, c)[ch] / 255.f - 0.5f;
  }
  // Per-crop standardization. Erased crops are near-constant fills whose
  // informative content is low-amplitude residual texture; rescaling each
  // crop to zero mean / unit variance brings that texture to a scale the
  // network can separate.
  double sum = 0, sq = 0;
  for (float v : t.data) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(t.data.size());
  const float mean = static_cast<float>(sum / n);
  const float stdev =
      static_cast<float>(std::sqrt(std::max(sq / n - (sum / n) * (sum / n), 0.0)));
  const float inv = 1.f / std::max(stdev, 1e-4f);
  for (float& v : t.data) v = (v - mean) * inv;
  return t;
}

std::pair<std::string, double> RecoveryModel::read(const cv::Mat3b& crop) {
  const nn::Tensor logits = net_.forward(to_tensor(crop));
  const int nc = alphabet_.num_classes();
  std::string text;
  double conf = 1.0;
  for (int t = 0; t < cfg_.max_len; ++t) {
    std::vector<float> step(logits.data.begin() + t * nc,
                            logits.data.begin() + (t + 1) * nc);
    const auto p = nn::softmax(step);
    const int arg =
        static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    conf *= p[arg];
    if (arg > 0) text.push_back(alphabet_.chars[arg - 1]);
  }
  return {text, conf};
}

void RecoveryModel::save(const std::filesystem::path& path,
                         const std::map<std::string, std::string>& extra_meta) {
  std::map<std::string, std::string> meta = extra_meta;
  meta["config"] = json({{"learning_rate", cfg_.learning_rate},
                         {"batch_size", cfg_.batch_size},
                         {"epochs", cfg_.epochs},
                         {"seed", cfg_.seed},
                         {"crop_height", cfg_.crop_height},
                         {"crop_width", cfg_.crop_width},
                         {"max_len", cfg_.max_len}})
                      .dump();
  meta["alphabet"] = alphabet_.chars;
  nn::save_checkpoint(path, "recovery_conv_seq", meta, net_);
}

RecoveryModel RecoveryModel::load(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  const json j = json::parse(meta.at("config"));
  RecoveryTrainConfig cfg;
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.crop_height = j.at("crop_height").get<int>();
  cfg.crop_width = j.at("crop_width").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  Alphabet alphabet;
  alphabet.chars = meta.at("alphabet");
  RecoveryModel model(cfg, alphabet, 0);
  nn::load_checkpoint(path, "recovery_conv_seq", model.net_);
  return model;
}

namespace {

std::vector<int> encode_target(const std::string& text, const Alphabet& alphabet,
                               int max_len) {
  if (static_cast<int>(text.size()) > max_len)
    throw std::invalid_argument("target longer than decoder: " + text);
  std::vector<int> t(max_len, 0);  // 0 = pad
  for (size_t i = 0; i < text.size(); ++i) t[i] = alphabet.index_of(text[i]);
  return t;
}

struct SplitScores {
  double text_acc = 0.0;
  double char_acc = 0.0;
};

SplitScores score_split(const std::vector<const RecoveryInstance*>& set,
                        RecoveryModel& model) {
  SplitScores s;
  if (set.empty()) return s;
  std::vector<std::pair<std::string, std::string>> pairs;
  double char_sum = 0;
  for (const auto* inst : set) {
    const auto [pred, conf] = model.read(inst->crop);
    pairs.push_back({inst->pseudo_gt, pred});
    char_sum += char_accuracy(inst->pseudo_gt, pred);
  }
  s.text_acc = text_accuracy(pairs);
  s.char_acc = char_sum / set.size();
  return s;
}

}  // namespace

RecoveryTrainResult train_recovery(const std::vector<RecoveryInstance>& instances,
                                   const RecoveryTrainConfig& config,
                                   const std::filesystem::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  std::vector<const RecoveryInstance*> train, val;
  for (const auto& inst : instances) {
    if (inst.split == Split::Train) train.push_back(&inst);
    if (inst.split == Split::Val) val.push_back(&inst);
  }
  if (train.size() < 2 || val.size() < 2)
    throw std::invalid_argument("train_recovery: need >= 2 instances per split");

  // Alphabet coverage check up front; names the offending instance.
  Alphabet alphabet = Alphabet::uppercase();
  {
    std::string all;
    for (const auto& inst : instances) all += inst.pseudo_gt;
    Alphabet latin = Alphabet::latin();
    bool upper_only = true;
    for (char c : all)
      if (!(c >= 'A' && c <= 'Z')) upper_only = false;
    if (!upper_only) alphabet = latin;
    for (const auto& inst : instances)
      for (char c : inst.pseudo_gt)
        if (!alphabet.contains(c))
          throw std::invalid_argument(
              "train_recovery: out-of-alphabet character in instance from " +
              inst.source_image_id + ": '" + std::string(1, c) + "'");
  }

  RecoveryModel model(config, alphabet, config.seed);
  std::vector<nn::Tensor> xs;
  std::vector<std::vector<int>> ts;
  for (const auto* inst : train) {
    xs.push_back(model.to_tensor(inst->crop));
    ts.push_back(encode_target(inst->pseudo_gt, alphabet, config.max_len));
  }

  nn::AdamConfig ocfg;
  ocfg.lr = static_cast<float>(config.learning_rate);
  // No weight decay: the point of this level is to measure how far the
  // model memorizes the training set, and decay suppresses exactly that.
  ocfg.weight_decay = 0.0f;
  nn::Adam opt(ocfg);
  std::mt19937_64 rng(config.seed + 1);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  const int nc = alphabet.num_classes();
  RecoveryTrainResult result;
  double best_val = -1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    model.net().zero_grads();
    int in_batch = 0;
    for (size_t k = 0; k < order.size(); ++k) {
      const size_t i = order[k];
      const nn::Tensor logits = model.net().forward(xs[i]);
      nn::Tensor dlogits(logits.shape);
      float loss = 0;
      for (int t = 0; t < config.max_len; ++t) {
        nn::Tensor step({nc});
        std::copy(logits.data.begin() + t * nc, logits.data.begin() + (t + 1) * nc,
                  step.data.begin());
        nn::Tensor dstep;
        loss += nn::softmax_ce(step, ts[i][t], &dstep) / config.max_len;
        for (int c = 0; c < nc; ++c)
          dlogits.data[t * nc + c] = dstep.data[c] / config.max_len;
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("train_recovery: non-finite loss at epoch " +
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
    const SplitScores tr = score_split(train, model);
    const SplitScores va = score_split(val, model);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / train.size();
    rec.train_metric = tr.text_acc;
    rec.val_metric = va.text_acc;
    result.log.epochs.push_back(rec);

    result.last_checkpoint = out_dir / "recovery_last.bin";
    model.save(result.last_checkpoint, {{"epoch", std::to_string(epoch)}});
    if (va.text_acc > best_val) {
      best_val = va.text_acc;
      result.best_checkpoint = out_dir / "recovery_best.bin";
      model.save(result.best_checkpoint, {{"epoch", std::to_string(epoch)}});
    }
  }
  result.log.save(out_dir / "recovery_trainlog.tsv");
  return result;
}

RecoveryReport evaluate_recovery(const std::vector<RecoveryInstance>& instances,
                                 RecoveryModel& best, RecoveryModel& last) {
  RecoveryReport report;
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    std::vector<const RecoveryInstance*> set;
    for (const auto& inst : instances)
      if (inst.split == split) set.push_back(&inst);
    if (set.empty()) continue;
    const SplitScores b = score_split(set, best);
    const SplitScores l = score_split(set, last);
    report.cells[to_string(split)]["best"] = {b.text_acc, b.char_acc};
    report.cells[to_string(split)]["last"] = {l.text_acc, l.char_acc};
  }
  return report;
}

void save_recovery_set(const std::vector<RecoveryInstance>& instances,
                       const std::filesystem::path& root) {
  fs::create_directories(root / "crops");
  std::ofstream index(root / "recovery.index");
  for (size_t i = 0; i < instances.size(); ++i) {
    const std::string rel = "crops/" + std::to_string(i) + ".png";
    cv::imwrite((root / rel).string(), instances[i].crop);
    index << rel << '\t' << instances[i].pseudo_gt << '\t'
          << instances[i].source_image_id << '\t' << instances[i].region_index
          << '\t' << to_string(instances[i].split) << '\n';
  }
}

std::vector<RecoveryInstance> load_recovery_set(const std::filesystem::path& root) {
  std::ifstream index(root / "recovery.index");
  if (!index) throw std::runtime_error("no recovery.index under " + root.string());
  std::vector<RecoveryInstance> out;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string rel, gt, src, split;
    int region_index;
    if (!(is >> rel >> gt >> src >> region_index >> split))
      throw std::runtime_error("bad recovery index line: " + line);
    RecoveryInstance inst;
    inst.crop = cv::imread((root / rel).string(), cv::IMREAD_COLOR);
    if (inst.crop.empty()) throw std::runtime_error("missing crop " + rel);
    inst.pseudo_gt = gt;
    inst.source_image_id = src;
    inst.region_index = region_index;
    inst.split = split_from_string(split);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace istr
