#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "drst/dsn.hpp"
#include "drst/frp.hpp"
#include "drst/rng.hpp"

using namespace drst;

namespace {

Tensor rnd(Shape s, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(s));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = (float)rng.uniform(lo, hi);
  return t;
}

// every frame carries the same constant map
frp::GuidanceStack const_stack(int t, int h, int w, float v) {
  frp::GuidanceStack g;
  g.maps.assign((std::size_t)t, Tensor::full({h, w}, v));
  return g;
}

}  // namespace

TEST_CASE("channel plan widths") {
  DsnConfig cfg;  // 6 layers, d=128, mult 1
  CHECK(dsn_channel_plan(cfg) == std::vector<int>{16, 32, 64, 64, 128, 128});

  cfg.width_mult = 0.5f;
  CHECK(dsn_channel_plan(cfg) == std::vector<int>{8, 16, 32, 32, 64, 128});

  // rounding lands on the next multiple of 4
  cfg.width_mult = 0.3f;
  CHECK(dsn_channel_plan(cfg) == std::vector<int>{8, 12, 20, 20, 40, 128});

  // a tiny multiplier floors at the four-branch minimum
  cfg.width_mult = 0.01f;
  for (std::size_t l = 0; l + 1 < 6; ++l)
    CHECK(dsn_channel_plan(cfg)[l] == 4);

  cfg = DsnConfig{};
  cfg.layers = 1;
  cfg.d = 32;
  CHECK(dsn_channel_plan(cfg) == std::vector<int>{32});

  cfg = DsnConfig{};
  cfg.layers = 9;  // beyond the base table the last width repeats
  auto plan = dsn_channel_plan(cfg);
  CHECK(plan.size() == 9);
  CHECK(plan.back() == cfg.d);
  for (int c : plan) {
    CHECK(c >= 4);
    CHECK(c % 4 == 0);
  }

  cfg.layers = 0;
  CHECK_THROWS_AS(dsn_channel_plan(cfg), ParameterError);
  cfg = DsnConfig{};
  cfg.d = 3;
  CHECK_THROWS_AS(dsn_channel_plan(cfg), ParameterError);
  cfg = DsnConfig{};
  cfg.width_mult = 0.0f;
  CHECK_THROWS_AS(dsn_channel_plan(cfg), ParameterError);
}

TEST_CASE("sms feature shapes") {
  Rng rng(7);
  SmsLayer l;
  l.init(3, 8, rng);
  CHECK(l.out_channels() == 8);

  Tensor x = rnd({3, 2, 8, 8}, rng);
  Tensor f = l.forward_features(x);
  CHECK(f.shape() == Shape{8, 2, 4, 4});

  // odd extents floor under the 2x2/2 pool
  Tensor odd = rnd({3, 2, 7, 9}, rng);
  CHECK(l.forward_features(odd).shape() == Shape{8, 2, 3, 4});

  // widths need not divide by four evenly
  SmsLayer narrow;
  narrow.init(2, 6, rng);
  CHECK(narrow.forward_features(rnd({2, 1, 4, 4}, rng)).shape() == Shape{6, 1, 2, 2});

  SmsLayer bad;
  CHECK_THROWS_AS(bad.init(2, 3, rng), ParameterError);
  CHECK_THROWS_AS(l.forward_features(rnd({3, 8, 8}, rng)), DimensionError);
  CHECK_THROWS_AS(l.forward_features(rnd({3, 2, 1, 8}, rng)), DimensionError);
}

TEST_CASE("zero guidance passes features through") {
  Rng rng(11);
  SmsLayer l;
  l.init(3, 8, rng);
  Tensor f = l.forward_features(rnd({3, 2, 8, 8}, rng));
  Tensor g = Tensor::zeros({1, f.dim(1), f.dim(2), f.dim(3)});
  // the fuse conv is bias-free, so a fully suppressed gate is an exact no-op
  Tensor out = l.fuse_guidance(f, g);
  Tensor fv = f;
  for (std::size_t i = 0; i < fv.size(); ++i) CHECK(out.data()[i] == fv.data()[i]);
}

TEST_CASE("identity fuse exposes the gate") {
  Rng rng(13);
  SmsLayer l;
  l.init(2, 8, rng);
  // rewrite the fuse kernels to the identity so the gate algebra is visible:
  // out = f * g + f
  for (std::size_t i = 0; i < l.fuse.kernels.size(); ++i) l.fuse.kernels.data()[i] = 0.0f;
  for (int o = 0; o < 8; ++o) l.fuse.kernels.data()[(std::size_t)o * 8 + o] = 1.0f;

  Tensor f = rnd({8, 3, 4, 4}, rng, -1.0f, 1.0f);
  Tensor g = rnd({1, 3, 4, 4}, rng);
  Tensor out = l.fuse_guidance(f, g);
  const std::size_t plane = 4 * 4;
  for (int c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 3 * plane; ++i) {
      const float fv = f.data()[(std::size_t)c * 3 * plane + i];
      const float gv = g.data()[i];  // broadcast across channels
      CHECK(out.data()[(std::size_t)c * 3 * plane + i] ==
            doctest::Approx(fv * gv + fv).epsilon(1e-6));
    }

  CHECK_THROWS_AS(l.fuse_guidance(f, rnd({1, 3, 4, 5}, rng)), DimensionError);
  CHECK_THROWS_AS(l.fuse_guidance(f, rnd({1, 2, 4, 4}, rng)), DimensionError);
}

TEST_CASE("level sizes match the forward grids") {
  Rng rng(3);
  Dsn net;
  DsnConfig cfg;
  cfg.layers = 2;
  cfg.d = 8;
  net.init(3, cfg, rng);

  CHECK(net.level_sizes(8, 8) == std::vector<std::pair<int, int>>{{4, 4}, {2, 2}});
  CHECK(net.level_sizes(7, 9) == std::vector<std::pair<int, int>>{{3, 4}, {1, 2}});
  CHECK_THROWS_AS(net.level_sizes(2, 2), DimensionError);

  const int T = 3;
  Tensor clip = rnd({3, T, 8, 8}, rng);
  std::vector<frp::GuidanceStack> gs;
  for (auto [h, w] : net.level_sizes(8, 8)) gs.push_back(const_stack(T, h, w, 1.0f));
  Tensor out = net.forward(clip, gs);
  CHECK(out.shape() == Shape{T, 8});
  for (float v : out.values()) CHECK(std::isfinite(v));

  // layer sizes are checked against the incoming guidance
  CHECK_THROWS_AS(net.forward(clip, {gs[0]}), DimensionError);
  std::vector<frp::GuidanceStack> wrong = {gs[0], const_stack(T, 3, 3, 1.0f)};
  CHECK_THROWS_AS(net.forward(clip, wrong), DimensionError);
  std::vector<frp::GuidanceStack> short_t = {gs[0], const_stack(T - 1, 2, 2, 1.0f)};
  CHECK_THROWS_AS(net.forward(clip, short_t), DimensionError);
  CHECK_THROWS_AS(net.forward(rnd({3, 8, 8}, rng), gs), DimensionError);
}

TEST_CASE("forward rows are frame averages") {
  Rng rng(21);
  Dsn net;
  DsnConfig cfg;
  cfg.layers = 1;
  cfg.d = 4;
  net.init(2, cfg, rng);

  const int T = 3;
  Tensor clip = rnd({2, T, 6, 6}, rng);
  frp::GuidanceStack g = const_stack(T, 3, 3, 0.5f);
  Tensor out = net.forward(clip, {g});

  // replay the single layer by hand and pool; row t must be frame t
  Tensor f = net.stack[0].forward_features(clip);
  Tensor grid = Tensor::zeros({1, T, 3, 3});
  for (std::size_t i = 0; i < grid.size(); ++i) grid.data()[i] = 0.5f;
  Tensor gated = net.stack[0].fuse_guidance(f, grid);
  Tensor avg = global_avg_pool(gated, {2, 3});  // 4 x T x 1 x 1
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < 4; ++c)
      CHECK(out.at({t, c}) == doctest::Approx(avg.at({c, t, 0, 0})).epsilon(1e-6));
}

TEST_CASE("gradients reach every parameter") {
  Rng rng(5);
  Dsn net;
  DsnConfig cfg;
  cfg.layers = 2;
  cfg.d = 8;
  net.init(3, cfg, rng);
  ParamRegistry reg;
  net.reg(reg, "dsn");
  CHECK(reg.items.size() == 2 * 9);  // 4 branches with bias + bias-free fuse

  const int T = 2;
  Tensor clip = rnd({3, T, 8, 8}, rng);
  std::vector<frp::GuidanceStack> gs;
  for (auto [h, w] : net.level_sizes(8, 8)) gs.push_back(const_stack(T, h, w, 1.0f));
  Tensor loss = sum_all(net.forward(clip, gs));
  backward(loss);

  for (const auto& [name, p] : reg.items) {
    float mx = 0.0f;
    for (float gv : p.grad()) mx = std::max(mx, std::abs(gv));
    INFO(name);
    CHECK(mx > 0.0f);
  }
}

TEST_CASE("pipeline guidance drives the network") {
  Rng rng(9);
  Dsn net;
  DsnConfig cfg;
  cfg.layers = 2;
  cfg.d = 8;
  net.init(3, cfg, rng);

  const int T = 4;
  // a moving bright square so the guidance is alive
  Tensor clip = Tensor::zeros({3, T, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < T; ++t)
      for (int y = 2; y < 6; ++y)
        for (int x = 0; x < 3; ++x)
          clip.data()[(((std::size_t)c * T + t) * 8 + y) * 8 + (x + t)] = 1.0f;

  // morph window 1: the square's 1px leading edge cannot survive a 3x3 opening
  auto gs = frp::compute_guidance(clip, 1, 1, 2.0f, net.level_sizes(8, 8));
  REQUIRE(gs.size() == 2);
  Tensor out = net.forward(clip, gs);
  CHECK(out.shape() == Shape{T, 8});

  // zeroed guidance gives a genuinely different embedding
  std::vector<frp::GuidanceStack> dead;
  for (auto [h, w] : net.level_sizes(8, 8)) dead.push_back(const_stack(T, h, w, 0.0f));
  Tensor base = net.forward(clip, dead);
  float diff = 0.0f;
  for (std::size_t i = 0; i < out.size(); ++i)
    diff = std::max(diff, std::abs(out.data()[i] - base.data()[i]));
  CHECK(diff > 1e-4f);
}
