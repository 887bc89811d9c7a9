#pragma once

#include <utility>
#include <vector>

#include "drst/frp.hpp"
#include "drst/nn.hpp"
#include "drst/tensor.hpp"

namespace drst {

// One multiscale spatial layer: parallel spatial kernels {1,3,5} plus a pooled
// 1x1 path (temporal extent 1 everywhere), channel concat, spatial 2x2/2 pool,
// then the guidance gate with its pointwise residual fuse.
struct SmsLayer {
  Conv3dLayer b1, b3, b5, bpool;
  Conv3dLayer fuse;  // out_ch -> out_ch, 1x1x1, bias-free

  void init(int ci, int co, Rng& rng);
  Tensor forward_features(const Tensor& x) const;
  // g broadcasts over channels: 1 x T x H x W
  Tensor fuse_guidance(const Tensor& f, const Tensor& g) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
  int out_channels() const;
};

struct DsnConfig {
  int layers = 6;
  int d = 128;  // final channel count = per-frame feature width
  float width_mult = 1.0f;
};

// Channel widths per layer: a fixed plan scaled by width_mult, rounded to a
// multiple of 4 (one slice per branch); the final layer always lands on d.
std::vector<int> dsn_channel_plan(const DsnConfig& cfg);

struct Dsn {
  DsnConfig cfg;
  std::vector<SmsLayer> stack;

  void init(int in_channels, const DsnConfig& c, Rng& rng);
  // Post-pool feature grid of every layer for an H x W input.
  std::vector<std::pair<int, int>> level_sizes(int h, int w) const;
  // clip: C x T x H x W, one guidance stack per layer -> T x d
  Tensor forward(const Tensor& clip, const std::vector<frp::GuidanceStack>& guidance) const;
  int out_dim() const { return cfg.d; }
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

}  // namespace drst
