#include "drst/dsn.hpp"

#include <algorithm>
#include <cmath>

namespace drst {

static std::array<int, 4> split4(int co) {
  // per-branch widths; remainder spread over the leading branches
  const int q = co / 4, r = co % 4;
  return {q + (r > 0), q + (r > 1), q + (r > 2), q};
}

void SmsLayer::init(int ci, int co, Rng& rng) {
  if (co < 4) throw ParameterError("sms layer needs at least 4 output channels");
  const auto w = split4(co);
  b1.init(ci, w[0], {1, 1, 1}, {0, 0, 0}, rng);
  b3.init(ci, w[1], {1, 3, 3}, {0, 1, 1}, rng);
  b5.init(ci, w[2], {1, 5, 5}, {0, 2, 2}, rng);
  bpool.init(ci, w[3], {1, 1, 1}, {0, 0, 0}, rng);
  fuse.init(co, co, {1, 1, 1}, {0, 0, 0}, rng, /*with_bias=*/false);
}

int SmsLayer::out_channels() const { return fuse.kernels.dim(0); }

Tensor SmsLayer::forward_features(const Tensor& x) const {
  if (x.rank() != 4) throw DimensionError("sms input must be C x T x H x W");
  if (x.dim(2) < 2 || x.dim(3) < 2)
    throw DimensionError("sms needs spatial extent >= 2 for the pooling stage");
  Tensor f1 = b1.forward(x);
  Tensor f3 = b3.forward(x);
  Tensor f5 = b5.forward(x);
  Tensor fp = bpool.forward(maxpool3d(x, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}));
  Tensor cat = concat({f1, f3, f5, fp}, 0);
  return maxpool3d(cat, {1, 2, 2}, {1, 2, 2});
}

Tensor SmsLayer::fuse_guidance(const Tensor& f, const Tensor& g) const {
  if (g.rank() != 4 || g.dim(0) != 1 || g.dim(1) != f.dim(1) || g.dim(2) != f.dim(2) ||
      g.dim(3) != f.dim(3))
    throw DimensionError("guidance grid does not match the feature map");
  return add(fuse.forward(mul(f, g)), f);
}

void SmsLayer::reg(ParamRegistry& r, const std::string& prefix) const {
  b1.reg(r, prefix + ".branch1x1");
  b3.reg(r, prefix + ".branch3x3");
  b5.reg(r, prefix + ".branch5x5");
  bpool.reg(r, prefix + ".branchpool");
  fuse.reg(r, prefix + ".fuse");
}

std::vector<int> dsn_channel_plan(const DsnConfig& cfg) {
  static const int base[5] = {16, 32, 64, 64, 128};
  if (cfg.layers < 1) throw ParameterError("dsn needs at least one layer");
  if (cfg.d < 4) throw ParameterError("dsn output width must be at least 4");
  if (cfg.width_mult <= 0.0f) throw ParameterError("width multiplier must be positive");
  std::vector<int> plan;
  for (int l = 0; l + 1 < cfg.layers; ++l) {
    const int raw = static_cast<int>(std::lround(base[std::min(l, 4)] * cfg.width_mult));
    plan.push_back(std::max(4, (raw + 3) / 4 * 4));
  }
  plan.push_back(cfg.d);
  return plan;
}

void Dsn::init(int in_channels, const DsnConfig& c, Rng& rng) {
  cfg = c;
  stack.clear();
  int ci = in_channels;
  for (int co : dsn_channel_plan(cfg)) {
    SmsLayer l;
    l.init(ci, co, rng);
    stack.push_back(std::move(l));
    ci = co;
  }
}

std::vector<std::pair<int, int>> Dsn::level_sizes(int h, int w) const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t l = 0; l < stack.size(); ++l) {
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) throw DimensionError("input too small for the dsn depth");
    out.emplace_back(h, w);
  }
  return out;
}

// guidance stack -> 1 x T x H x W tensor the gate can broadcast
static Tensor guidance_grid(const frp::GuidanceStack& g, int t, int h, int w) {
  if (static_cast<int>(g.maps.size()) != t)
    throw DimensionError("guidance frame count does not match the clip");
  Tensor grid = Tensor::zeros({1, t, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < t; ++i) {
    const Tensor& m = g.maps[static_cast<std::size_t>(i)];
    if (m.dim(0) != h || m.dim(1) != w)
      throw DimensionError("guidance map size does not match the feature grid");
    std::copy_n(m.data(), plane, grid.data() + static_cast<std::size_t>(i) * plane);
  }
  return grid;
}

Tensor Dsn::forward(const Tensor& clip, const std::vector<frp::GuidanceStack>& guidance) const {
  if (clip.rank() != 4) throw DimensionError("dsn input must be C x T x H x W");
  if (guidance.size() != stack.size())
    throw DimensionError("dsn wants one guidance stack per layer");
  Tensor x = clip;
  for (std::size_t l = 0; l < stack.size(); ++l) {
    x = stack[l].forward_features(x);
    Tensor g = guidance_grid(guidance[l], x.dim(1), x.dim(2), x.dim(3));
    x = stack[l].fuse_guidance(x, g);
  }
  // per-frame global spatial average: C x T x H x W -> T x d
  Tensor pooled = global_avg_pool(x, {2, 3});
  return transpose2d(reshape(pooled, {x.dim(0), x.dim(1)}));
}

void Dsn::reg(ParamRegistry& r, const std::string& prefix) const {
  for (std::size_t l = 0; l < stack.size(); ++l)
    stack[l].reg(r, prefix + ".layer" + std::to_string(l));
}

}  // namespace drst
