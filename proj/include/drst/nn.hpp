#pragma once

#include <string>
#include <utility>
#include <vector>

#include "drst/rng.hpp"
#include "drst/tensor.hpp"

namespace drst {

// Ordered name -> tensor map. Registration order is the checkpoint record
// order, so it must be deterministic.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t);
  const Tensor* find(const std::string& name) const;
  std::size_t total_size() const;
};

Tensor xavier_init(Shape s, int fan_in, int fan_out, Rng& rng);
Tensor normal_init(Shape s, float stddev, Rng& rng);

struct Linear {
  Tensor W;  // in x out
  Tensor b;  // 1 x out

  // gain scales the xavier bound; classifier heads use a small gain so the
  // temperature-sharpened losses start near ln(classes) instead of exploding
  void init(int in, int out, Rng& rng, float gain = 1.0f);
  Tensor forward(const Tensor& x) const;  // N x in
  void reg(ParamRegistry& r, const std::string& prefix) const;
  int in_dim() const { return W.dim(0); }
  int out_dim() const { return W.dim(1); }
};

// Linear stack with gelu after every hidden layer, plain final layer.
struct Mlp {
  std::vector<Linear> layers;

  void init(int in, const std::vector<int>& hidden, int out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
  void zero_weights();  // for ablation and reduction tests
};

struct LayerNormLayer {
  Tensor gain;
  Tensor bias;
  float eps = 1e-5f;

  void init(int d);
  Tensor forward(const Tensor& x) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

struct Conv3dLayer {
  Tensor kernels;  // Co x Ci x kt x kh x kw
  Tensor bias;     // Co x 1 x 1 x 1; undefined when constructed bias-free
  std::array<int, 3> pad{0, 0, 0};

  void init(int ci, int co, std::array<int, 3> k, std::array<int, 3> p, Rng& rng,
            bool with_bias = true);
  Tensor forward(const Tensor& x) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

// v <- momentum * v + grad + weight_decay * param
// param <- param - lr * v
// Grads are zeroed after the step.
//
// clip_norm bounds the global L2 norm of the gradient (all params pooled)
// before the momentum update; 0 disables. The sharpened losses divide
// logits by tau, so early wrong predictions push saturated gradients of
// magnitude ~1/tau into every head at once — momentum integrates that into
// a runaway unless the step size is bounded.
struct Sgd {
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 3e-4f;
  float clip_norm = 0.0f;

  struct Slot {
    Tensor param;
    std::vector<float> velocity;
  };
  std::vector<Slot> slots;

  void attach(const ParamRegistry& params);
  void step();
};

}  // namespace drst
