#include "istr/nn/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "istr/nn/kernels.hpp"
#include "json.hpp"

using json = nlohmann::json;

namespace istr::nn {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(numel()), 0.f);
}

int Tensor::numel() const {
  int n = 1;
  for (int d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

namespace {

Tensor he_init(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.f, std::sqrt(2.f / fan_in));
  for (auto& v : t.data) v = dist(rng);
  return t;
}

}  // namespace

Conv2d::Conv2d(int cin, int cout, std::mt19937_64& rng)
    : cin_(cin),
      cout_(cout),
      w_(he_init({cout, cin * 9}, cin * 9, rng)),
      b_(Tensor({cout})),
      dw_(Tensor({cout, cin * 9})),
      db_(Tensor({cout})) {}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.shape.size() != 3 || x.shape[0] != cin_)
    throw std::invalid_argument("conv3x3: bad input shape");
  h_ = x.shape[1];
  w_in_ = x.shape[2];
  const int hw = h_ * w_in_;
  col_ = Tensor({cin_ * 9, hw});
  im2col3(x.ptr(), col_.ptr(), cin_, h_, w_in_);
  Tensor y({cout_, h_, w_in_});
  matmul(w_.ptr(), col_.ptr(), y.ptr(), cout_, cin_ * 9, hw);
  for (int co = 0; co < cout_; ++co) {
    float* yc = y.ptr() + static_cast<size_t>(co) * hw;
    const float bias = b_.data[co];
    for (int i = 0; i < hw; ++i) yc[i] += bias;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const int hw = h_ * w_in_;
  // dW += dy * col^T
  Tensor dw_local({cout_, cin_ * 9});
  matmul_nt(dy.ptr(), col_.ptr(), dw_local.ptr(), cout_, hw, cin_ * 9);
  for (int i = 0; i < dw_.numel(); ++i) dw_.data[i] += dw_local.data[i];
  for (int co = 0; co < cout_; ++co) {
    const float* dyc = dy.ptr() + static_cast<size_t>(co) * hw;
    float acc = 0.f;
    for (int i = 0; i < hw; ++i) acc += dyc[i];
    db_.data[co] += acc;
  }
  // dcol = W^T * dy, then gather back to dx (col2im for stride-1 same pad).
  Tensor dcol({cin_ * 9, hw});
  matmul_tn(w_.ptr(), dy.ptr(), dcol.ptr(), cin_ * 9, cout_, hw);
  Tensor dx({cin_, h_, w_in_});
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cin_; ++ci) {
    float* dxc = dx.ptr() + static_cast<size_t>(ci) * hw;
    for (int kh = -1; kh <= 1; ++kh)
      for (int kw = -1; kw <= 1; ++kw) {
        const int row = ci * 9 + (kh + 1) * 3 + (kw + 1);
        const float* src = dcol.ptr() + static_cast<size_t>(row) * hw;
        // col[row][y*w+x] was read from x[ci][y+kh][x+kw]
        for (int y = 0; y < h_; ++y) {
          const int ty = y + kh;
          if (ty < 0 || ty >= h_) continue;
          for (int xx = 0; xx < w_in_; ++xx) {
            const int tx = xx + kw;
            if (tx < 0 || tx >= w_in_) continue;
            dxc[ty * w_in_ + tx] += src[y * w_in_ + xx];
          }
        }
      }
  }
  return dx;
}

Tensor ReLU::forward(const Tensor& x) {
  y_ = x;
  for (auto& v : y_.data) v = std::max(v, 0.f);
  return y_;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (int i = 0; i < dx.numel(); ++i)
    if (y_.data[i] <= 0.f) dx.data[i] = 0.f;
  return dx;
}

Tensor MaxPool2::forward(const Tensor& x) {
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int oh = h / 2, ow = w / 2;
  in_shape_ = x.shape;
  Tensor y({c, oh, ow});
  argmax_.assign(static_cast<size_t>(c) * oh * ow, 0);
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        int best = -1;
        float bv = -1e30f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (ci * h + oy * 2 + dy) * w + ox * 2 + dx;
            if (x.data[idx] > bv) {
              bv = x.data[idx];
              best = idx;
            }
          }
        const int oidx = (ci * oh + oy) * ow + ox;
        y.data[oidx] = bv;
        argmax_[oidx] = best;
      }
  return y;
}

Tensor MaxPool2::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  for (size_t i = 0; i < argmax_.size(); ++i) dx.data[argmax_[i]] += dy.data[i];
  return dx;
}

Linear::Linear(int in, int out, std::mt19937_64& rng)
    : in_(in),
      out_(out),
      w_(he_init({out, in}, in, rng)),
      b_(Tensor({out})),
      dw_(Tensor({out, in})),
      db_(Tensor({out})) {}

Tensor Linear::forward(const Tensor& x) {
  if (x.numel() != in_) throw std::invalid_argument("linear: bad input size");
  x_ = x;
  Tensor y({out_});
  matmul(w_.ptr(), x.ptr(), y.ptr(), out_, in_, 1);
  for (int o = 0; o < out_; ++o) y.data[o] += b_.data[o];
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  for (int o = 0; o < out_; ++o) {
    const float g = dy.data[o];
    db_.data[o] += g;
    float* dwr = dw_.ptr() + static_cast<size_t>(o) * in_;
    const float* xr = x_.ptr();
    for (int i = 0; i < in_; ++i) dwr[i] += g * xr[i];
  }
  Tensor dx({in_});
  matmul_tn(w_.ptr(), dy.ptr(), dx.ptr(), in_, out_, 1);
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  in_shape_ = x.shape;
  const int c = x.shape[0], hw = x.shape[1] * x.shape[2];
  Tensor y({c});
  for (int ci = 0; ci < c; ++ci) {
    float acc = 0.f;
    const float* xc = x.ptr() + static_cast<size_t>(ci) * hw;
    for (int i = 0; i < hw; ++i) acc += xc[i];
    y.data[ci] = acc / hw;
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  const int c = in_shape_[0], hw = in_shape_[1] * in_shape_[2];
  for (int ci = 0; ci < c; ++ci) {
    const float g = dy.data[ci] / hw;
    float* dxc = dx.ptr() + static_cast<size_t>(ci) * hw;
    for (int i = 0; i < hw; ++i) dxc[i] = g;
  }
  return dx;
}

Tensor Flatten::forward(const Tensor& x) {
  in_shape_ = x.shape;
  Tensor y({x.numel()});
  y.data = x.data;
  return y;
}

Tensor Flatten::backward(const Tensor& dy) {
  Tensor dx(in_shape_);
  dx.data = dy.data;
  return dx;
}

Tensor Net::forward(const Tensor& x) {
  Tensor cur = x;
  for (auto& l : layers) cur = l->forward(cur);
  return cur;
}

std::vector<Tensor> Net::forward_all(const Tensor& x) {
  std::vector<Tensor> outs;
  Tensor cur = x;
  for (auto& l : layers) {
    cur = l->forward(cur);
    outs.push_back(cur);
  }
  return outs;
}

Tensor Net::backward(const Tensor& dy) {
  Tensor cur = dy;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    cur = (*it)->backward(cur);
  return cur;
}

Tensor Net::backward_capture(const Tensor& dy, int capture_idx, Tensor* captured) {
  Tensor cur = dy;
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    if (i == capture_idx && captured) *captured = cur;
    cur = layers[i]->backward(cur);
  }
  return cur;
}

std::vector<Tensor*> Net::params() {
  std::vector<Tensor*> out;
  for (auto& l : layers)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

std::vector<Tensor*> Net::grads() {
  std::vector<Tensor*> out;
  for (auto& l : layers)
    for (auto* g : l->grads()) out.push_back(g);
  return out;
}

void Net::zero_grads() {
  for (auto* g : grads()) std::fill(g->data.begin(), g->data.end(), 0.f);
}

void Net::scale_grads(float s) {
  for (auto* g : grads())
    for (auto& v : g->data) v *= s;
}

std::vector<float> softmax(const std::vector<float>& logits) {
  const float mx = *std::max_element(logits.begin(), logits.end());
  std::vector<float> p(logits.size());
  float sum = 0.f;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

float softmax_ce(const Tensor& logits, int target, Tensor* dlogits) {
  const auto p = softmax(logits.data);
  if (dlogits) {
    *dlogits = Tensor(logits.shape);
    for (size_t i = 0; i < p.size(); ++i) dlogits->data[i] = p[i];
    dlogits->data[target] -= 1.f;
  }
  return -std::log(std::max(p[target], 1e-12f));
}

float bce_logits(const Tensor& logits, const std::vector<float>& targets,
                 float pos_weight, Tensor* dlogits) {
  if (static_cast<size_t>(logits.numel()) != targets.size())
    throw std::invalid_argument("bce_logits: size mismatch");
  if (dlogits) *dlogits = Tensor(logits.shape);
  double loss = 0.0;
  const int n = logits.numel();
  for (int i = 0; i < n; ++i) {
    const float z = logits.data[i];
    const float t = targets[i];
    const float wt = t > 0.5f ? pos_weight : 1.f;
    // stable: log(1+exp(-|z|)) + max(z,0) - z*t
    const float sp = std::log1p(std::exp(-std::fabs(z))) + std::max(z, 0.f);
    loss += wt * (sp - z * t);
    if (dlogits) {
      const float sig = 1.f / (1.f + std::exp(-z));
      dlogits->data[i] = wt * (sig - t) / n;
    }
  }
  return static_cast<float>(loss / n);
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->data.size(), 0.f);
      v_.emplace_back(p->data.size(), 0.f);
    }
  }
  ++t_;
  const float bc1 = 1.f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.f - std::pow(cfg_.beta2, static_cast<float>(t_));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data;
    const auto& g = grads[k]->data;
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.f - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.f - cfg_.beta2) * g[i] * g[i];
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      if (cfg_.weight_decay > 0.f) p[i] -= cfg_.lr * cfg_.weight_decay * p[i];
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::string& net_kind,
                     const std::map<std::string, std::string>& meta, Net& net) {
  json header = {{"net_kind", net_kind}, {"meta", meta}};
  json sizes = json::array();
  for (auto* p : net.params()) sizes.push_back(p->numel());
  header["param_sizes"] = sizes;
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  const char magic[8] = {'I', 'S', 'T', 'R', 'C', 'K', 'P', 'T'};
  out.write(magic, 8);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (auto* p : net.params())
    out.write(reinterpret_cast<const char*>(p->data.data()),
              static_cast<std::streamsize>(p->data.size() * sizeof(float)));
}

namespace {

json read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "ISTRCKPT", 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  return json::parse(hs);
}

}  // namespace

std::map<std::string, std::string> load_checkpoint(const std::filesystem::path& path,
                                                   const std::string& expect_kind,
                                                   Net& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  const json header = read_header(in, path);
  if (header.at("net_kind").get<std::string>() != expect_kind)
    throw std::runtime_error("checkpoint kind mismatch in " + path.string());
  auto params = net.params();
  const auto& sizes = header.at("param_sizes");
  if (sizes.size() != params.size())
    throw std::runtime_error("checkpoint param count mismatch in " + path.string());
  for (size_t i = 0; i < params.size(); ++i) {
    if (sizes[i].get<int>() != params[i]->numel())
      throw std::runtime_error("checkpoint param size mismatch in " + path.string());
    in.read(reinterpret_cast<char*>(params[i]->data.data()),
            static_cast<std::streamsize>(params[i]->data.size() * sizeof(float)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return header.at("meta").get<std::map<std::string, std::string>>();
}

std::map<std::string, std::string> read_checkpoint_meta(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  return read_header(in, path).at("meta").get<std::map<std::string, std::string>>();
}

}  // namespace istr::nn
