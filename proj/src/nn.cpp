#include "drst/nn.hpp"

#include <cmath>

namespace drst {

void ParamRegistry::add(const std::string& name, const Tensor& t) {
  for (const auto& [n, _] : items)
    if (n == name) throw ParameterError("duplicate parameter name: " + name);
  if (!t.defined() || !t.tracked())
    throw ParameterError("parameter " + name + " must be a tracked tensor");
  items.emplace_back(name, t);
}

const Tensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

std::size_t ParamRegistry::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items) n += t.size();
  return n;
}

Tensor xavier_init(Shape s, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(s), true);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-a, a));
  return t;
}

Tensor normal_init(Shape s, float stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(s), true);
  for (float& v : t.values()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

void Linear::init(int in, int out, Rng& rng, float gain) {
  W = xavier_init({in, out}, in, out, rng);
  if (gain != 1.0f)
    for (float& v : W.values()) v *= gain;
  b = Tensor::zeros({1, out}, true);
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, W), b); }

void Linear::reg(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".weight", W);
  r.add(prefix + ".bias", b);
}

void Mlp::init(int in, const std::vector<int>& hidden, int out, Rng& rng) {
  layers.clear();
  int cur = in;
  for (int h : hidden) {
    Linear l;
    l.init(cur, h, rng);
    layers.push_back(l);
    cur = h;
  }
  Linear last;
  last.init(cur, out, rng);
  layers.push_back(last);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cur = layers[i].forward(cur);
    if (i + 1 < layers.size()) cur = gelu(cur);
  }
  return cur;
}

void Mlp::reg(ParamRegistry& r, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].reg(r, prefix + ".fc" + std::to_string(i));
}

void Mlp::zero_weights() {
  for (Linear& l : layers) {
    std::fill(l.W.values().begin(), l.W.values().end(), 0.0f);
    std::fill(l.b.values().begin(), l.b.values().end(), 0.0f);
  }
}

void LayerNormLayer::init(int d) {
  gain = Tensor::full({d}, 1.0f, true);
  bias = Tensor::zeros({d}, true);
}

Tensor LayerNormLayer::forward(const Tensor& x) const {
  return layer_norm(x, gain, bias, eps);
}

void LayerNormLayer::reg(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".gain", gain);
  r.add(prefix + ".bias", bias);
}

void Conv3dLayer::init(int ci, int co, std::array<int, 3> k, std::array<int, 3> p, Rng& rng,
                       bool with_bias) {
  const int fan_in = ci * k[0] * k[1] * k[2];
  const int fan_out = co * k[0] * k[1] * k[2];
  kernels = xavier_init({co, ci, k[0], k[1], k[2]}, fan_in, fan_out, rng);
  if (with_bias) bias = Tensor::zeros({co, 1, 1, 1}, true);
  pad = p;
}

Tensor Conv3dLayer::forward(const Tensor& x) const {
  Tensor out = conv3d(x, kernels, pad);
  if (bias.defined()) out = add(out, bias);
  return out;
}

void Conv3dLayer::reg(ParamRegistry& r, const std::string& prefix) const {
  r.add(prefix + ".kernel", kernels);
  if (bias.defined()) r.add(prefix + ".bias", bias);
}

void Sgd::attach(const ParamRegistry& params) {
  slots.clear();
  for (const auto& [_, t] : params.items)
    slots.push_back(Slot{t, std::vector<float>(t.size(), 0.0f)});
}

void Sgd::step() {
  float gscale = 1.0f;
  if (clip_norm > 0.0f) {
    double sq = 0.0;
    for (const Slot& s : slots)
      for (float g : s.param.grad()) sq += (double)g * (double)g;
    const double norm = std::sqrt(sq);
    if (norm > (double)clip_norm) gscale = (float)((double)clip_norm / norm);
  }
  for (Slot& s : slots) {
    float* p = s.param.data();
    std::vector<float>& g = s.param.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      s.velocity[i] = momentum * s.velocity[i] + gscale * g[i] + weight_decay * p[i];
      p[i] -= lr * s.velocity[i];
    }
    s.param.zero_grad();
  }
}

}  // namespace drst
