#include "drst/augment.hpp"

#include <cmath>

#include "drst/errors.hpp"

namespace drst {

int resize_side(int crop) { return (crop * 8 + 3) / 7; }

ClipTransform train_transform(int crop, Rng& rng) {
  if (crop < 1) throw ParameterError("crop must be positive");
  ClipTransform t;
  t.crop = crop;
  t.resize = resize_side(crop);
  constexpr float kMaxAngle = 15.0f * 3.14159265358979323846f / 180.0f;
  t.angle = (float)rng.uniform(-kMaxAngle, kMaxAngle);
  t.off_y = rng.uniform_int(0, t.resize - crop);
  t.off_x = rng.uniform_int(0, t.resize - crop);
  return t;
}

ClipTransform eval_transform(int crop) {
  if (crop < 1) throw ParameterError("crop must be positive");
  ClipTransform t;
  t.crop = crop;
  t.resize = resize_side(crop);
  t.off_y = (t.resize - crop) / 2;
  t.off_x = (t.resize - crop) / 2;
  return t;
}

Tensor apply_transform(const Tensor& planar, const ClipTransform& t) {
  if (planar.rank() != 4) throw DimensionError("transform input must be C x T x H x W");
  if (t.crop < 1 || t.resize < t.crop)
    throw ParameterError("transform crop exceeds its resize target");
  const int C = planar.dim(0), T = planar.dim(1), H = planar.dim(2), W = planar.dim(3);
  Tensor out = Tensor::zeros({C, T, t.crop, t.crop});
  const float* src = planar.data();
  float* dst = out.data();
  const float center = 0.5f * (float)(t.resize - 1);
  const float cs = std::cos(t.angle), sn = std::sin(t.angle);
  const std::size_t in_plane = (std::size_t)H * W;
  const std::size_t out_plane = (std::size_t)t.crop * t.crop;

  for (int oy = 0; oy < t.crop; ++oy)
    for (int ox = 0; ox < t.crop; ++ox) {
      // position in the resized image, then rotated back to source coords
      const float ry = (float)(oy + t.off_y) - center;
      const float rx = (float)(ox + t.off_x) - center;
      const float sy = center + sn * rx + cs * ry;
      const float sx = center + cs * rx - sn * ry;
      if (sy < 0.0f || sx < 0.0f || sy > (float)(t.resize - 1) || sx > (float)(t.resize - 1))
        continue;  // rotated outside the resized square: stays zero
      // nearest neighbor through the resize: resized pixel p samples source
      // pixel floor((p + 0.5) * H / resize)
      int iy = (int)(((float)std::lround(sy) + 0.5f) * (float)H / (float)t.resize);
      int ix = (int)(((float)std::lround(sx) + 0.5f) * (float)W / (float)t.resize);
      iy = std::min(iy, H - 1);
      ix = std::min(ix, W - 1);
      const std::size_t si = (std::size_t)iy * W + ix;
      const std::size_t di = (std::size_t)oy * t.crop + ox;
      for (int c = 0; c < C; ++c)
        for (int f = 0; f < T; ++f)
          dst[((std::size_t)c * T + f) * out_plane + di] =
              src[((std::size_t)c * T + f) * in_plane + si];
    }
  return out;
}

Clip transform_clip(const Clip& c, const ClipTransform& t) {
  Clip out;
  out.label = c.label;
  out.rgb = apply_transform(c.rgb, t);
  out.depth = apply_transform(c.depth, t);
  return out;
}

}  // namespace drst
