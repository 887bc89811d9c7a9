#include "drst/frp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace drst::frp {

static void check_map(const Tensor& m, const char* who) {
  if (!m.defined() || m.rank() != 2)
    throw DimensionError(std::string(who) + " expects an H x W map");
}

Tensor intensity(const Tensor& frame) {
  if (frame.rank() != 3) throw DimensionError("intensity expects C x H x W");
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  Tensor out = Tensor::zeros({h, w});
  const float* p = frame.data();
  float* o = out.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) o[i] += p[static_cast<std::size_t>(ch) * plane + i];
  const float inv = 1.0f / static_cast<float>(c);
  for (std::size_t i = 0; i < plane; ++i) o[i] *= inv;
  return out;
}

Tensor dynamic_image_base(const std::vector<Tensor>& window) {
  const int L = static_cast<int>(window.size());
  if (L < 2) throw ParameterError("dynamic image window needs at least 2 frames");
  check_map(window[0], "dynamic_image_base");
  // double accumulation: the coefficients sum to zero, and with exact
  // products a constant window cancels to exactly 0.0 instead of float dust
  // that normalization would stretch to full scale
  std::vector<double> acc(window[0].size(), 0.0);
  for (int t = 1; t <= L; ++t) {
    const Tensor& f = window[static_cast<std::size_t>(t - 1)];
    if (f.shape() != window[0].shape())
      throw DimensionError("dynamic image frames differ in size");
    const double coef = static_cast<double>(2 * t - L - 1);
    const float* p = f.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += coef * p[i];
  }
  Tensor out = Tensor::zeros(window[0].shape());
  float* o = out.data();
  for (std::size_t i = 0; i < acc.size(); ++i) o[i] = static_cast<float>(acc[i]);
  return out;
}

Tensor dynamic_image_update(const Tensor& prev, const Tensor& left, const Tensor& entered,
                            const Tensor& window_sum, int span) {
  check_map(prev, "dynamic_image_update");
  if (span < 1) throw ParameterError("dynamic image span must be positive");
  if (left.shape() != prev.shape() || entered.shape() != prev.shape() ||
      window_sum.shape() != prev.shape())
    throw DimensionError("dynamic_image_update operand size mismatch");
  Tensor out = Tensor::zeros(prev.shape());
  const float* pp = prev.data();
  const float* pl = left.data();
  const float* pe = entered.data();
  const float* ps = window_sum.data();
  float* o = out.data();
  const double s = static_cast<double>(span);
  for (std::size_t i = 0; i < out.size(); ++i)
    o[i] = static_cast<float>(pp[i] + s * (static_cast<double>(pl[i]) + pe[i]) -
                              2.0 * ps[i]);
  return out;
}

Tensor dynamic_guidance(const Tensor& di, float lambda_amp) {
  check_map(di, "dynamic_guidance");
  if (lambda_amp <= 0.0f) throw ParameterError("amplification must be positive");
  return scale(gelu(di), lambda_amp);
}

static Tensor morph(const Tensor& m, int k, bool take_min) {
  check_map(m, take_min ? "erode" : "dilate");
  if (k < 1 || k % 2 == 0) throw ParameterError("morphology window must be odd and positive");
  const int h = m.dim(0), w = m.dim(1), r = k / 2;
  Tensor out = Tensor::zeros(m.shape());
  const float* p = m.data();
  float* o = out.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float best = take_min ? std::numeric_limits<float>::infinity()
                            : -std::numeric_limits<float>::infinity();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          // borders read as zero
          const float v =
              (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0f : p[yy * w + xx];
          best = take_min ? std::min(best, v) : std::max(best, v);
        }
      o[y * w + x] = best;
    }
  return out;
}

Tensor erode(const Tensor& m, int k) { return morph(m, k, true); }
Tensor dilate(const Tensor& m, int k) { return morph(m, k, false); }

Tensor static_guidance(const Tensor& dm, int k) {
  check_map(dm, "static_guidance");
  const float* p = dm.data();
  double mean = 0.0;
  for (std::size_t i = 0; i < dm.size(); ++i) mean += p[i];
  mean /= static_cast<double>(dm.size());
  Tensor kept = Tensor::zeros(dm.shape());
  float* o = kept.data();
  for (std::size_t i = 0; i < dm.size(); ++i)
    o[i] = (p[i] >= static_cast<float>(mean)) ? p[i] : 0.0f;
  return dilate(erode(kept, k), k);
}

Tensor adaptive_maxpool2d(const Tensor& m, int oh, int ow) {
  check_map(m, "adaptive_maxpool2d");
  const int h = m.dim(0), w = m.dim(1);
  if (oh < 1 || ow < 1) throw ParameterError("pool target must be positive");
  if (oh > h || ow > w) throw DimensionError("pool target larger than input");
  Tensor out = Tensor::zeros({oh, ow});
  const float* p = m.data();
  float* o = out.data();
  for (int oy = 0; oy < oh; ++oy) {
    const int y0 = oy * h / oh;
    const int y1 = ((oy + 1) * h + oh - 1) / oh;
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = ox * w / ow;
      const int x1 = ((ox + 1) * w + ow - 1) / ow;
      float best = -std::numeric_limits<float>::infinity();
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) best = std::max(best, p[y * w + x]);
      o[oy * ow + ox] = best;
    }
  }
  return out;
}

Tensor visual_guidance(const Tensor& dm, const Tensor& sm, int oh, int ow) {
  check_map(dm, "visual_guidance");
  if (sm.shape() != dm.shape()) throw DimensionError("visual_guidance map size mismatch");
  Tensor combined = Tensor::zeros(dm.shape());
  const float* d = dm.data();
  const float* s = sm.data();
  float* o = combined.data();
  for (std::size_t i = 0; i < combined.size(); ++i) o[i] = (d[i] + s[i]) * s[i];
  return adaptive_maxpool2d(combined, oh, ow);
}

Tensor normalize_guidance(const Tensor& g) {
  check_map(g, "normalize_guidance");
  const float* p = g.data();
  float lo = p[0], hi = p[0];
  for (std::size_t i = 1; i < g.size(); ++i) {
    lo = std::min(lo, p[i]);
    hi = std::max(hi, p[i]);
  }
  Tensor out = Tensor::zeros(g.shape());
  if (hi == lo) return out;  // constant map -> zero map
  const float inv = 1.0f / (hi - lo);
  float* o = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) o[i] = (p[i] - lo) * inv;
  return out;
}

GuidanceStack align_guidance(const std::vector<Tensor>& maps, int span) {
  const int T = static_cast<int>(maps.size());
  if (T == 0) throw ParameterError("align_guidance on an empty sequence");
  if (span < 0 || span >= T) throw ParameterError("align span must lie in [0, T)");
  for (const Tensor& m : maps)
    if (m.shape() != maps[0].shape()) throw DimensionError("align maps differ in size");
  GuidanceStack out;
  out.span = span;
  out.maps.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    if (t < span)
      out.maps.push_back(Tensor::zeros(maps[0].shape()));
    else
      out.maps.push_back(maps[static_cast<std::size_t>(t - span)]);
  }
  return out;
}

std::vector<GuidanceStack> compute_guidance(const Tensor& clip, int span, int morph_k,
                                            float lambda_amp,
                                            const std::vector<std::pair<int, int>>& level_sizes) {
  if (clip.rank() != 4) throw DimensionError("compute_guidance expects C x T x H x W");
  const int C = clip.dim(0), T = clip.dim(1), H = clip.dim(2), W = clip.dim(3);
  if (span < 1 || span >= T) throw ParameterError("window span must lie in [1, T)");
  if (level_sizes.empty()) throw ParameterError("compute_guidance needs at least one level");

  std::vector<Tensor> frames;
  frames.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    Tensor f = Tensor::zeros({C, H, W});
    const float* src = clip.data();
    float* dst = f.data();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
      std::copy_n(src + (static_cast<std::size_t>(c) * T + t) * plane, plane,
                  dst + static_cast<std::size_t>(c) * plane);
    frames.push_back(intensity(f));
  }

  const int windows = T - span;  // window n covers frames [n, n + span]
  std::vector<std::vector<Tensor>> per_level(level_sizes.size());

  // sliding state in double so a static clip telescopes to exactly zero;
  // any float dust here would survive gelu and get stretched by normalization
  const std::size_t plane = frames[0].size();
  Tensor base = dynamic_image_base(
      std::vector<Tensor>(frames.begin(), frames.begin() + span + 1));
  std::vector<double> di(base.data(), base.data() + plane);
  // running sum over frames [n, n + span - 1]
  std::vector<double> wsum(plane, 0.0);
  for (int l = 0; l < span; ++l)
    for (std::size_t i = 0; i < plane; ++i)
      wsum[i] += frames[static_cast<std::size_t>(l)].data()[i];

  Tensor di_map = Tensor::zeros(frames[0].shape());
  const double s = static_cast<double>(span);
  for (int n = 0; n < windows; ++n) {
    if (n > 0) {
      // slide [n-1, n-1+span] -> [n, n+span]
      const float* left = frames[static_cast<std::size_t>(n - 1)].data();
      const float* entered = frames[static_cast<std::size_t>(n + span)].data();
      const float* kept = frames[static_cast<std::size_t>(n + span - 1)].data();
      for (std::size_t i = 0; i < plane; ++i) {
        wsum[i] += static_cast<double>(kept[i]) - left[i];
        di[i] += s * (static_cast<double>(left[i]) + entered[i]) - 2.0 * wsum[i];
      }
    }
    for (std::size_t i = 0; i < plane; ++i)
      di_map.data()[i] = static_cast<float>(di[i]);
    const Tensor dg = dynamic_guidance(di_map, lambda_amp);
    const Tensor sg = static_guidance(dg, morph_k);
    for (std::size_t l = 0; l < level_sizes.size(); ++l) {
      Tensor g = visual_guidance(dg, sg, level_sizes[l].first, level_sizes[l].second);
      per_level[l].push_back(normalize_guidance(g));
    }
  }

  std::vector<GuidanceStack> stacks;
  for (std::size_t l = 0; l < level_sizes.size(); ++l) {
    // pad to length T; the padded tail is shifted out by the alignment
    while (static_cast<int>(per_level[l].size()) < T)
      per_level[l].push_back(
          Tensor::zeros({level_sizes[l].first, level_sizes[l].second}));
    stacks.push_back(align_guidance(per_level[l], span));
  }
  return stacks;
}

}  // namespace drst::frp
