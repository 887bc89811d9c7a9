#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "drst/rcm.hpp"
#include "drst/rng.hpp"

using namespace drst;

namespace {

Tensor rnd(Shape s, Rng& rng, float lo = -1.0f, float hi = 1.0f, bool track = false) {
  Tensor t = Tensor::zeros(std::move(s), track);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = (float)rng.uniform(lo, hi);
  return t;
}

// plain-loop reference for the feature-axis attention
std::vector<float> x_attention_oracle(const Tensor& obar, const Tensor& wq, const Tensor& wk,
                                      int d) {
  const int T = obar.dim(0), d2 = obar.dim(1);
  auto at = [&](const Tensor& m, int r, int c) { return (double)m.data()[r * m.dim(1) + c]; };
  // q, k: d/2 x T with q[c][j] = sum_t obar[t][c] * w[t][j]
  std::vector<std::vector<double>> q(d2, std::vector<double>(T, 0.0)), k = q;
  for (int c = 0; c < d2; ++c)
    for (int j = 0; j < T; ++j)
      for (int t = 0; t < T; ++t) {
        q[c][j] += at(obar, t, c) * at(wq, t, j);
        k[c][j] += at(obar, t, c) * at(wk, t, j);
      }
  std::vector<float> out(d2);
  for (int c = 0; c < d2; ++c) {
    double mean = 0.0;
    for (int c2 = 0; c2 < d2; ++c2) {
      double s = 0.0;
      for (int j = 0; j < T; ++j) s += q[c][j] * k[c2][j];
      mean += s / std::sqrt((double)d);
    }
    mean /= d2;
    out[c] = (float)(1.0 / (1.0 + std::exp(-mean)));
  }
  return out;
}

}  // namespace

TEST_CASE("feature-axis attention matches the loop oracle") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor obar = rnd({3, 4}, rng);
    Tensor wq = rnd({3, 3}, rng);
    Tensor wk = rnd({3, 3}, rng);
    Tensor ax = x_attention(obar, wq, wk, 8);
    REQUIRE(ax.shape() == Shape{1, 4});
    auto want = x_attention_oracle(obar, wq, wk, 8);
    for (int c = 0; c < 4; ++c) {
      CHECK(ax.data()[c] == doctest::Approx(want[(std::size_t)c]).epsilon(1e-5));
      CHECK(ax.data()[c] > 0.0f);
      CHECK(ax.data()[c] < 1.0f);
    }
  }

  Tensor obar = rnd({3, 4}, rng);
  CHECK_THROWS_AS(x_attention(obar, rnd({2, 3}, rng), rnd({3, 3}, rng), 8), DimensionError);
  CHECK_THROWS_AS(x_attention(obar, rnd({3, 3}, rng), rnd({2, 2}, rng), 8), DimensionError);
  CHECK_THROWS_AS(x_attention(rnd({3, 4, 1}, rng), rnd({3, 3}, rng), rnd({3, 3}, rng), 8),
                  DimensionError);
  CHECK_THROWS_AS(x_attention(obar, rnd({3, 3}, rng), rnd({3, 3}, rng), 0), ParameterError);
}

TEST_CASE("frame-axis embedding feeds channel means to the perceptron") {
  Rng rng(17);
  Mlp mlp;
  mlp.init(3, {3, 3}, 3, rng);
  Tensor obar = rnd({3, 4}, rng);

  // per-frame channel means, by hand
  Tensor means = Tensor::zeros({1, 3});
  for (int t = 0; t < 3; ++t) {
    float s = 0.0f;
    for (int c = 0; c < 4; ++c) s += obar.data()[t * 4 + c];
    means.data()[t] = s / 4.0f;
  }
  Tensor want = mlp.forward(means);
  Tensor got = y_attention_embed(obar, mlp);
  REQUIRE(got.shape() == Shape{1, 3});
  for (int t = 0; t < 3; ++t)
    CHECK(got.data()[t] == doctest::Approx(want.data()[t]).epsilon(1e-6));

  CHECK_THROWS_AS(y_attention_embed(rnd({3}, rng), mlp), DimensionError);
}

TEST_CASE("joint mask is the outer product") {
  Rng rng(23);
  Tensor ax = rnd({1, 5}, rng, 0.0f, 1.0f);
  Tensor ay = rnd({1, 3}, rng, 0.0f, 1.0f);
  Tensor axy = combine_xy(ax, ay);
  REQUIRE(axy.shape() == Shape{3, 5});
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 5; ++c)
      CHECK(axy.data()[t * 5 + c] ==
            doctest::Approx(ay.data()[t] * ax.data()[c]).epsilon(1e-6));

  // every 2x2 minor of a rank-1 matrix vanishes
  for (int t = 0; t < 2; ++t)
    for (int c = 0; c < 4; ++c) {
      const float a = axy.data()[t * 5 + c], b = axy.data()[t * 5 + c + 1];
      const float cc = axy.data()[(t + 1) * 5 + c], dd = axy.data()[(t + 1) * 5 + c + 1];
      CHECK(std::abs(a * dd - b * cc) < 1e-6f);
    }

  CHECK_THROWS_AS(combine_xy(rnd({2, 5}, rng), ay), DimensionError);
  CHECK_THROWS_AS(combine_xy(ax, rnd({3, 1}, rng)), DimensionError);

  Tensor obar = rnd({3, 5}, rng);
  Tensor gated = enhance(obar, axy);
  for (std::size_t i = 0; i < gated.size(); ++i)
    CHECK(gated.data()[i] == obar.data()[i] * axy.data()[i]);
  CHECK_THROWS_AS(enhance(rnd({3, 4}, rng), axy), DimensionError);
}

TEST_CASE("distillation is zero when the student matches the teacher") {
  Rng rng(41);
  Linear head;
  head.init(3, 5, rng);
  Tensor wembed = rnd({1, 3}, rng);
  Tensor self_logits = head.forward(wembed).detach();
  Tensor loss = distill_loss(wembed, self_logits, head, 4.0f);
  CHECK(std::abs(loss.item()) < 1e-7f);

  // mismatched logits make it strictly positive
  Tensor other = rnd({1, 5}, rng);
  CHECK(distill_loss(wembed, other, head, 4.0f).item() > 0.0f);

  CHECK_THROWS_AS(distill_loss(wembed, other, head, 0.0f), ParameterError);
  CHECK_THROWS_AS(distill_loss(wembed, rnd({1, 4}, rng), head, 4.0f), DimensionError);
  CHECK_THROWS_AS(distill_loss(rnd({2, 3}, rng), other, head, 4.0f), DimensionError);
}

TEST_CASE("no gradient ever reaches the teacher") {
  Rng rng(43);
  Linear head;
  head.init(3, 5, rng);
  Tensor wembed = rnd({1, 3}, rng, -1.0f, 1.0f, /*track=*/true);
  Tensor teacher = rnd({1, 5}, rng, -1.0f, 1.0f, /*track=*/true);
  Tensor loss = distill_loss(wembed, teacher, head, 4.0f);
  backward(loss);

  for (float g : teacher.grad()) CHECK(g == 0.0f);
  float mx = 0.0f;
  for (float g : wembed.grad()) mx = std::max(mx, std::abs(g));
  CHECK(mx > 0.0f);
  mx = 0.0f;
  for (float g : head.W.grad()) mx = std::max(mx, std::abs(g));
  CHECK(mx > 0.0f);
}

TEST_CASE("recoupling forward wires the pieces together") {
  Rng rng(47);
  Rcm rcm;
  rcm.init(3, 8, 5, /*enable=*/true, rng);
  Tensor O = rnd({3, 8}, rng);
  auto out = rcm.forward(O);

  REQUIRE(out.obar.shape() == Shape{3, 4});
  REQUIRE(out.ax.shape() == Shape{1, 4});
  REQUIRE(out.ay.shape() == Shape{1, 3});
  REQUIRE(out.axy.shape() == Shape{3, 4});
  REQUIRE(out.ohat.shape() == Shape{3, 4});
  REQUIRE(out.wembed.shape() == Shape{1, 3});

  // ay is the sigmoid of the raw embedding
  Tensor ay2 = sigmoid(out.wembed);
  for (int t = 0; t < 3; ++t) CHECK(out.ay.data()[t] == ay2.data()[t]);
  // both attention axes stay inside (0, 1)
  for (float v : out.ax.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  for (float v : out.ay.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  // the joint mask shrinks the features, never flips a sign
  for (std::size_t i = 0; i < out.ohat.size(); ++i) {
    const float o = out.obar.data()[i], oh = out.ohat.data()[i];
    CHECK(std::abs(oh) <= std::abs(o));
    if (o != 0.0f) CHECK(oh * o >= 0.0f);
  }
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 4; ++c)
      CHECK(out.axy.data()[t * 4 + c] ==
            doctest::Approx(out.ay.data()[t] * out.ax.data()[c]).epsilon(1e-6));

  CHECK_THROWS_AS(rcm.forward(rnd({3, 6}, rng)), DimensionError);
  CHECK_THROWS_AS(rcm.forward(rnd({2, 8}, rng)), DimensionError);

  Rng rng2(1);
  Rcm bad;
  CHECK_THROWS_AS(bad.init(3, 7, 5, true, rng2), ParameterError);
  CHECK_THROWS_AS(bad.init(0, 8, 5, true, rng2), ParameterError);
}

TEST_CASE("disabled recoupling is just the projection") {
  Rng rng(53);
  Rcm rcm;
  rcm.init(3, 8, 5, /*enable=*/false, rng);
  ParamRegistry reg;
  rcm.reg(reg, "rcm");
  CHECK(reg.items.size() == 2);  // proj W and b only

  Tensor O = rnd({3, 8}, rng);
  auto out = rcm.forward(O);
  Tensor obar = rcm.proj.forward(O);
  REQUIRE(out.ohat.shape() == obar.shape());
  for (std::size_t i = 0; i < obar.size(); ++i)
    CHECK(out.ohat.data()[i] == obar.data()[i]);

  ParamRegistry full;
  Rcm on;
  on.init(3, 8, 5, true, rng);
  on.reg(full, "rcm");
  CHECK(full.items.size() == 12);  // proj + wq + wk + 3-layer mlp + head
}

TEST_CASE("gradients reach every recoupling parameter") {
  Rng rng(59);
  Rcm rcm;
  rcm.init(3, 8, 5, true, rng);
  ParamRegistry reg;
  rcm.reg(reg, "rcm");

  Tensor O = rnd({3, 8}, rng, -1.0f, 1.0f, /*track=*/true);
  auto out = rcm.forward(O);
  Tensor teacher = rnd({1, 5}, rng);
  Tensor loss = add(sum_all(out.ohat), distill_loss(out.wembed, teacher, rcm.distill_head, 4.0f));
  backward(loss);

  for (const auto& [name, p] : reg.items) {
    float mx = 0.0f;
    for (float g : p.grad()) mx = std::max(mx, std::abs(g));
    INFO(name);
    CHECK(mx > 0.0f);
  }
  float mx = 0.0f;
  for (float g : O.grad()) mx = std::max(mx, std::abs(g));
  CHECK(mx > 0.0f);
}
