#pragma once

#include "drst/clip.hpp"
#include "drst/rng.hpp"

namespace drst {

// One sampling plan shared by every frame and channel of a clip: the source is
// resized (nearest neighbor) to resize x resize, rotated about the resized
// center, and cropped to crop x crop at (off_y, off_x). Samples that rotate
// out of the resized square read as zero.
struct ClipTransform {
  int resize = 0;
  int crop = 0;
  float angle = 0.0f;  // radians
  int off_y = 0;
  int off_x = 0;
};

// Resize target used by both train and eval plans: crop scaled up by 8/7.
int resize_side(int crop);

// Random offset anywhere in the slack, rotation within +-15 degrees.
ClipTransform train_transform(int crop, Rng& rng);
// Centered crop, no rotation.
ClipTransform eval_transform(int crop);

// planar: C x T x H x W -> C x T x crop x crop
Tensor apply_transform(const Tensor& planar, const ClipTransform& t);
Clip transform_clip(const Clip& c, const ClipTransform& t);

}  // namespace drst
