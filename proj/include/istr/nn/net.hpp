#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace istr::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  int numel() const;
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
};

// Single-sample layers; parameter gradients accumulate across backward calls
// until zero_grads(). Forward caches whatever backward needs.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Tensor*> params() { return {}; }
  virtual std::vector<Tensor*> grads() { return {}; }
  virtual std::string kind() const = 0;
};

// 3x3, stride 1, same padding.
class Conv2d : public Layer {
 public:
  Conv2d(int cin, int cout, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Tensor*> params() override { return {&w_, &b_}; }
  std::vector<Tensor*> grads() override { return {&dw_, &db_}; }
  std::string kind() const override { return "conv3x3"; }
  int cin() const { return cin_; }
  int cout() const { return cout_; }

 private:
  int cin_, cout_;
  Tensor w_, b_, dw_, db_;
  Tensor col_;  // cached im2col of the last input
  int h_ = 0, w_in_ = 0;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::string kind() const override { return "relu"; }

 private:
  Tensor y_;
};

// 2x2 max pool, stride 2.
class MaxPool2 : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::string kind() const override { return "maxpool2"; }

 private:
  std::vector<int> argmax_;
  std::vector<int> in_shape_;
};

class Linear : public Layer {
 public:
  Linear(int in, int out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Tensor*> params() override { return {&w_, &b_}; }
  std::vector<Tensor*> grads() override { return {&dw_, &db_}; }
  std::string kind() const override { return "linear"; }
  int in() const { return in_; }
  int out() const { return out_; }

 private:
  int in_, out_;
  Tensor w_, b_, dw_, db_;
  Tensor x_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::string kind() const override { return "gap"; }

 private:
  std::vector<int> in_shape_;
};

class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::string kind() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

class Net {
 public:
  std::vector<std::unique_ptr<Layer>> layers;

  Tensor forward(const Tensor& x);
  // Forward keeping every layer output (index i = output of layers[i]).
  std::vector<Tensor> forward_all(const Tensor& x);
  // Plain backward through the whole stack.
  Tensor backward(const Tensor& dy);
  // Backward that also captures d(loss)/d(output of layers[capture_idx]).
  Tensor backward_capture(const Tensor& dy, int capture_idx, Tensor* captured);

  std::vector<Tensor*> params();
  std::vector<Tensor*> grads();
  void zero_grads();
  void scale_grads(float s);
};

// Losses return the loss value and write d(loss)/d(logits).
float softmax_ce(const Tensor& logits, int target, Tensor* dlogits);
// Element-wise sigmoid BCE over a logit map; positive targets weighted.
float bce_logits(const Tensor& logits, const std::vector<float>& targets,
                 float pos_weight, Tensor* dlogits);

std::vector<float> softmax(const std::vector<float>& logits);

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.f;  // decoupled (AdamW) when > 0
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Checkpoint: magic, JSON header (net kind, dims, metadata strings), raw
// float32 parameter blobs in layer order.
void save_checkpoint(const std::filesystem::path& path, const std::string& net_kind,
                     const std::map<std::string, std::string>& meta, Net& net);
std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path,
                                                   const std::string& expect_kind,
                                                   Net& net);
std::map<std::string, std::string> read_checkpoint_meta(
    const std::filesystem::path& path);

}  // namespace istr::nn
