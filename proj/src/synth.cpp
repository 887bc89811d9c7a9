#include "drst/synth.hpp"

#include <algorithm>
#include <cmath>

#include "drst/errors.hpp"

namespace drst {

namespace {

struct Blob {
  float cx, cy, r;
  float gain = 1.0f;
};

// Base geometry of one frame of a motion, before per-clip jitter.
// u runs 0 -> 1 across the clip.
std::vector<Blob> motion_blobs(Motion m, int t, int frames) {
  const float u = frames > 1 ? (float)t / (float)(frames - 1) : 0.0f;
  switch (m) {
    case Motion::Left:
      return {{0.72f - 0.44f * u, 0.5f, 0.16f}};
    case Motion::Right:
      return {{0.28f + 0.44f * u, 0.5f, 0.16f}};
    case Motion::Up:
      return {{0.5f, 0.72f - 0.44f * u, 0.16f}};
    case Motion::Down:
      return {{0.5f, 0.28f + 0.44f * u, 0.16f}};
    case Motion::Grow:
      return {{0.5f, 0.5f, 0.10f + 0.16f * u}};
    case Motion::Shrink:
      return {{0.5f, 0.5f, 0.26f - 0.16f * u}};
    case Motion::Rotate: {
      constexpr float kPi = 3.14159265358979323846f;
      const float th = 2.0f * kPi * u;
      const float ox = 0.22f * std::cos(th), oy = 0.22f * std::sin(th);
      return {{0.5f + ox, 0.5f + oy, 0.12f}, {0.5f - ox, 0.5f - oy, 0.12f}};
    }
    case Motion::Blink: {
      // on for the first and last third; the middle third is dark
      const bool on = 3 * t < frames || 3 * t >= 2 * frames;
      return {{0.5f, 0.5f, 0.18f, on ? 1.0f : 0.0f}};
    }
  }
  throw ParameterError("unknown motion");
}

// Soft-edged disc intensity at a pixel, blobs combined by max.
float shape_value(const std::vector<Blob>& blobs, float px, float py) {
  const float edge = 0.05f;
  float v = 0.0f;
  for (const Blob& b : blobs) {
    const float dist = std::hypot(px - b.cx, py - b.cy);
    float s = dist <= b.r ? 1.0f : std::max(0.0f, 1.0f - (dist - b.r) / edge);
    v = std::max(v, s * b.gain);
  }
  return v;
}

struct Jitter {
  float dx, dy, rscale;
};

Jitter draw_jitter(Rng& rng) {
  Jitter j;
  j.dx = (float)rng.uniform(-0.06, 0.06);
  j.dy = (float)rng.uniform(-0.06, 0.06);
  j.rscale = (float)rng.uniform(0.9, 1.1);
  return j;
}

std::vector<Blob> jittered(std::vector<Blob> blobs, const Jitter& j) {
  for (Blob& b : blobs) {
    b.cx += j.dx;
    b.cy += j.dy;
    b.r *= j.rscale;
  }
  return blobs;
}

// Fills channel-planar values for one motion stream.
void render(Tensor& out, Motion m, const Jitter& j, const std::vector<float>& chan_gain,
            float noise, Rng& rng) {
  const int C = out.dim(0), T = out.dim(1), H = out.dim(2), W = out.dim(3);
  float* d = out.data();
  const std::size_t plane = (std::size_t)H * W;
  const std::size_t volume = (std::size_t)T * plane;
  for (int t = 0; t < T; ++t) {
    const std::vector<Blob> blobs = jittered(motion_blobs(m, t, T), j);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const float px = ((float)x + 0.5f) / (float)W;
        const float py = ((float)y + 0.5f) / (float)H;
        const float v = shape_value(blobs, px, py);
        for (int c = 0; c < C; ++c) {
          float val = chan_gain[(std::size_t)c] * v;
          if (noise > 0.0f) val += noise * (float)rng.normal();
          d[(std::size_t)c * volume + (std::size_t)t * plane + (std::size_t)y * W + x] =
              std::clamp(val, 0.0f, 1.0f);
        }
      }
  }
}

}  // namespace

void SynthSpec::validate() const {
  if (pairing && classes != 4)
    throw ParameterError("pairing mode defines exactly 4 classes");
  if (!pairing && (classes < 2 || classes > 8))
    throw ParameterError("classes must lie in [2, 8]");
  if (clips_per_class < 1) throw ParameterError("need at least one clip per class");
  if (frames < 8) throw ParameterError("need at least 8 frames");
  if (side < 16) throw ParameterError("side must be at least 16");
  if (noise < 0.0f || noise > 1.0f) throw ParameterError("noise must lie in [0, 1]");
}

Clip make_clip(const SynthSpec& spec, int cls, int idx) {
  spec.validate();
  if (cls < 0 || cls >= spec.classes) throw ParameterError("class index out of range");
  if (idx < 0) throw ParameterError("clip index out of range");
  Rng rng(mix_seed(mix_seed(spec.seed, (unsigned long long)cls),
                   (unsigned long long)idx));

  Motion rgb_motion, depth_motion;
  if (spec.pairing) {
    rgb_motion = cls / 2 == 0 ? Motion::Left : Motion::Right;
    depth_motion = cls % 2 == 0 ? Motion::Grow : Motion::Shrink;
  } else {
    rgb_motion = depth_motion = (Motion)cls;
  }

  const Jitter j_rgb = draw_jitter(rng);
  const Jitter j_depth = spec.pairing ? draw_jitter(rng) : j_rgb;
  std::vector<float> color = {(float)rng.uniform(0.45, 1.0), (float)rng.uniform(0.45, 1.0),
                              (float)rng.uniform(0.45, 1.0)};
  std::vector<float> depth_gain = {(float)rng.uniform(0.6, 1.0)};

  Clip c;
  c.label = cls;
  c.rgb = Tensor::zeros({3, spec.frames, spec.side, spec.side});
  c.depth = Tensor::zeros({1, spec.frames, spec.side, spec.side});
  render(c.rgb, rgb_motion, j_rgb, color, spec.noise, rng);
  render(c.depth, depth_motion, j_depth, depth_gain, spec.noise, rng);
  return c;
}

std::vector<Clip> make_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<Clip> clips;
  clips.reserve((std::size_t)spec.classes * spec.clips_per_class);
  for (int cls = 0; cls < spec.classes; ++cls)
    for (int i = 0; i < spec.clips_per_class; ++i) clips.push_back(make_clip(spec, cls, i));
  return clips;
}

}  // namespace drst
