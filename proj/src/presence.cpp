#include "istr/presence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <opencv2/imgproc.hpp>
#include <random>
#include <stdexcept>

#include "json.hpp"

using json = nlohmann::json;

namespace istr {

void TrainLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << "epoch\ttrain_loss\ttrain_metric\tval_loss\tval_metric\n";
  for (const auto& e : epochs)
    out << e.epoch << '\t' << e.train_loss << '\t' << e.train_metric << '\t'
        << e.val_loss << '\t' << e.val_metric << '\n';
}

TrainLog TrainLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read train log: " + path.string());
  TrainLog log;
  std::string header;
  std::getline(in, header);
  EpochRecord e;
  while (in >> e.epoch >> e.train_loss >> e.train_metric >> e.val_loss >> e.val_metric)
    log.epochs.push_back(e);
  return log;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (optimizer != "adaptive_moment" && optimizer != "adaptive_moment_decoupled_decay")
    throw std::invalid_argument("unknown optimizer: " + optimizer);
  if (input_size < 16) throw std::invalid_argument("input_size too small");
}

PresenceModel::PresenceModel(const TrainConfig& config, uint64_t init_seed)
    : cfg_(config) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  auto& L = net_.layers;
  L.push_back(std::make_unique<nn::Conv2d>(3, 12, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::MaxPool2>());
  L.push_back(std::make_unique<nn::Conv2d>(12, 16, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::MaxPool2>());
  L.push_back(std::make_unique<nn::Conv2d>(16, 24, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  L.push_back(std::make_unique<nn::MaxPool2>());
  L.push_back(std::make_unique<nn::Conv2d>(24, 24, rng));
  L.push_back(std::make_unique<nn::ReLU>());
  feature_layer_ = static_cast<int>(L.size()) - 1;
  L.push_back(std::make_unique<nn::GlobalAvgPool>());
  L.push_back(std::make_unique<nn::Linear>(24, 2, rng));
}

nn::Tensor PresenceModel::to_tensor(const cv::Mat3b& image) const {
  if (image.empty()) throw std::invalid_argument("classify: empty image");
  cv::Mat3b resized;
  cv::resize(image, resized, {cfg_.input_size, cfg_.input_size}, 0, 0,
             cv::INTER_AREA);
  const int s = cfg_.input_size;
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

PresenceVerdict PresenceModel::classify(const cv::Mat3b& image, double threshold) {
  const nn::Tensor logits = net_.forward(to_tensor(image));
  const auto p = nn::softmax(logits.data);
  PresenceVerdict v;
  v.score = p[1];
  v.str_ed = v.score >= threshold;
  return v;
}

cv::Mat1f PresenceModel::explain(const cv::Mat3b& image) {
  const auto acts = net_.forward_all(to_tensor(image));
  nn::Tensor dy(acts.back().shape);
  dy.data[1] = 1.f;  // d(positive logit)
  nn::Tensor dfeat;
  net_.backward_capture(dy, feature_layer_, &dfeat);
  net_.zero_grads();
  const nn::Tensor& feat = acts[feature_layer_];
  const int c = feat.shape[0], h = feat.shape[1], w = feat.shape[2];
  cv::Mat1f cam = cv::Mat1f::zeros(h, w);
  for (int ci = 0; ci < c; ++ci) {
    float alpha = 0.f;
    const float* g = dfeat.ptr() + static_cast<size_t>(ci) * h * w;
    for (int i = 0; i < h * w; ++i) alpha += g[i];
    alpha /= h * w;
    const float* a = feat.ptr() + static_cast<size_t>(ci) * h * w;
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) cam(r, col) += alpha * a[r * w + col];
  }
  cv::max(cam, 0.f, cam);
  cv::Mat1f up;
  cv::resize(cam, up, image.size(), 0, 0, cv::INTER_LINEAR);
  double mn, mx;
  cv::minMaxLoc(up, &mn, &mx);
  if (mx - mn > 1e-12)
    up = (up - mn) / (mx - mn);
  else
    up.setTo(0.f);
  return up;
}

namespace {

json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"optimizer", c.optimizer},
          {"seed", c.seed},                   {"backbone", c.backbone},
          {"pretrained", c.pretrained},       {"input_size", c.input_size},
          {"augment_hflip", c.augment_hflip}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.optimizer = j.at("optimizer").get<std::string>();
  c.seed = j.at("seed").get<uint64_t>();
  c.backbone = j.at("backbone").get<std::string>();
  c.pretrained = j.at("pretrained").get<bool>();
  c.input_size = j.at("input_size").get<int>();
  c.augment_hflip = j.at("augment_hflip").get<bool>();
  return c;
}

}  // namespace

void PresenceModel::save(const std::filesystem::path& path,
                         const std::map<std::string, std::string>& extra_meta) {
  std::map<std::string, std::string> meta = extra_meta;
  meta["config"] = config_to_json(cfg_).dump();
  meta["norm"] = json({norm_mean[0], norm_mean[1], norm_mean[2], norm_std[0],
                       norm_std[1], norm_std[2]})
                     .dump();
  nn::save_checkpoint(path, "presence_small_cnn", meta, net_);
}

PresenceModel PresenceModel::load(const std::filesystem::path& path) {
  const auto meta = nn::read_checkpoint_meta(path);
  PresenceModel model(config_from_json(json::parse(meta.at("config"))), 0);
  nn::load_checkpoint(path, "presence_small_cnn", model.net_);
  const json norm = json::parse(meta.at("norm"));
  model.norm_mean = {norm[0], norm[1], norm[2]};
  model.norm_std = {norm[3], norm[4], norm[5]};
  return model;
}

std::vector<LabeledImage> collect_split(const DatasetManifest& manifest,
                                        const std::vector<ImageRecord>& records,
                                        Split split) {
  std::vector<LabeledImage> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    const ImageRecord* rec = find_record(records, e.image_id);
    if (!rec) throw std::runtime_error("manifest references missing record: " + e.image_id);
    out.push_back({rec, e.label == Label::Positive ? 1 : 0});
  }
  return out;
}

PresenceTrainResult train_presence(const DatasetManifest& manifest,
                                   const std::vector<ImageRecord>& records,
                                   const TrainConfig& config,
                                   const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  auto train = collect_split(manifest, records, Split::Train);
  auto val = collect_split(manifest, records, Split::Val);
  for (const auto* set : {&train, &val}) {
    int pos = 0, neg = 0;
    for (const auto& s : *set) (s.label ? pos : neg)++;
    if (pos == 0 || neg == 0)
      throw std::invalid_argument("train_presence: a split is missing a class (" +
                                  std::to_string(pos) + " pos, " +
                                  std::to_string(neg) + " neg)");
  }

  PresenceModel model(config, config.seed);

  // Normalization stats over the resized training images.
  cv::Vec3d sum(0, 0, 0), sumsq(0, 0, 0);
  long npix = 0;
  for (const auto& s : train) {
    cv::Mat3b resized;
    cv::resize(s.record->pixels, resized, {config.input_size, config.input_size},
               0, 0, cv::INTER_AREA);
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
    model.norm_std[ch] =
        std::sqrt(std::max(1e-8, sumsq[ch] / npix - model.norm_mean[ch] * model.norm_mean[ch]));
  }

  // Cache input tensors once; images are reused every epoch.
  std::vector<nn::Tensor> train_x, val_x;
  for (const auto& s : train) train_x.push_back(model.to_tensor(s.record->pixels));
  for (const auto& s : val) val_x.push_back(model.to_tensor(s.record->pixels));

  nn::AdamConfig ocfg;
  ocfg.lr = static_cast<float>(config.learning_rate);
  if (config.optimizer == "adaptive_moment_decoupled_decay") ocfg.weight_decay = 0.01f;
  nn::Adam opt(ocfg);

  std::mt19937_64 rng(config.seed + 1);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto hflip = [&](const nn::Tensor& t) {
    nn::Tensor f = t;
    const int s = config.input_size;
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
          f.data[(ch * s + r) * s + c] = t.data[(ch * s + r) * s + (s - 1 - c)];
    return f;
  };

  PresenceTrainResult result;
  double best_val = -1.0;
  int best_epoch = -1;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int correct = 0;
    model.net().zero_grads();
    int in_batch = 0;
    std::bernoulli_distribution flip(0.5);
    for (size_t k = 0; k < order.size(); ++k) {
      const size_t i = order[k];
      const nn::Tensor* x = &train_x[i];
      nn::Tensor flipped;
      if (config.augment_hflip && flip(rng)) {
        flipped = hflip(train_x[i]);
        x = &flipped;
      }
      const nn::Tensor logits = model.net().forward(*x);
      nn::Tensor dlogits;
      const float loss = nn::softmax_ce(logits, train[i].label, &dlogits);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_presence: non-finite loss at epoch " +
                                 std::to_string(epoch));
      loss_sum += loss;
      if ((logits.data[1] > logits.data[0]) == (train[i].label == 1)) ++correct;
      model.net().backward(dlogits);
      if (++in_batch == config.batch_size || k + 1 == order.size()) {
        model.net().scale_grads(1.f / in_batch);
        opt.step(model.net().params(), model.net().grads());
        model.net().zero_grads();
        in_batch = 0;
      }
    }
    double vloss = 0;
    int vcorrect = 0;
    for (size_t i = 0; i < val.size(); ++i) {
      const nn::Tensor logits = model.net().forward(val_x[i]);
      vloss += nn::softmax_ce(logits, val[i].label, nullptr);
      if ((logits.data[1] > logits.data[0]) == (val[i].label == 1)) ++vcorrect;
    }
    model.net().zero_grads();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / train.size();
    rec.train_metric = 100.0 * correct / train.size();
    rec.val_loss = vloss / val.size();
    rec.val_metric = 100.0 * vcorrect / val.size();
    result.log.epochs.push_back(rec);

    result.last_checkpoint = out_dir / "presence_last.bin";
    model.save(result.last_checkpoint, {{"epoch", std::to_string(epoch)}});
    if (rec.val_metric > best_val) {
      best_val = rec.val_metric;
      best_epoch = epoch;
      result.best_checkpoint = out_dir / "presence_best.bin";
      model.save(result.best_checkpoint, {{"epoch", std::to_string(epoch)}});
    }
  }
  (void)best_epoch;
  result.log.save(out_dir / "presence_trainlog.tsv");
  return result;
}

PresenceEval evaluate_presence(const DatasetManifest& manifest,
                               const std::vector<ImageRecord>& records,
                               PresenceModel& model, Split split, double threshold) {
  const auto set = collect_split(manifest, records, split);
  if (set.empty()) throw std::invalid_argument("evaluate_presence: empty split");
  PresenceEval ev;
  for (const auto& s : set) {
    const PresenceVerdict v = model.classify(s.record->pixels, threshold);
    if (s.label == 1)
      (v.str_ed ? ev.tp : ev.fn)++;
    else
      (v.str_ed ? ev.fp : ev.tn)++;
  }
  ev.accuracy = 100.0 * (ev.tp + ev.tn) / set.size();
  return ev;
}

}  // namespace istr
