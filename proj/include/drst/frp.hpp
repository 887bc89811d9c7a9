#pragma once

#include <utility>
#include <vector>

#include "drst/tensor.hpp"

namespace drst::frp {

// Guidance is computed outside the training graph: everything here takes and
// returns untracked tensors, so nothing lands on the tape.

// C x H x W frame -> H x W channel mean
Tensor intensity(const Tensor& frame);

// Rank-pooling dynamic image over a window of L >= 2 frames,
// coefficients 2t - L - 1 for t = 1..L (they sum to zero).
Tensor dynamic_image_base(const std::vector<Tensor>& window);

// Slides the window one frame: given DI(n-1, m-1), the frame that left
// (I_{n-1}), the frame that entered (I_m) and sum_{l=n}^{m-1} I_l, produces
// DI(n, m). span = m - n. Exactly consistent with dynamic_image_base.
Tensor dynamic_image_update(const Tensor& prev, const Tensor& left, const Tensor& entered,
                            const Tensor& window_sum, int span);

Tensor dynamic_guidance(const Tensor& di, float lambda_amp);  // gelu(di) * lambda

// Flat grayscale morphology over a k x k window (k odd), zero-padded borders.
Tensor erode(const Tensor& m, int k);
Tensor dilate(const Tensor& m, int k);

// Threshold at the map mean (keep >= mean, zero the rest), then opening.
Tensor static_guidance(const Tensor& dm, int k);

// Max pooling to an arbitrary smaller grid (bins cover the input evenly).
Tensor adaptive_maxpool2d(const Tensor& m, int oh, int ow);

// Maxpool((D + S) * S) resized to the target feature grid.
Tensor visual_guidance(const Tensor& dm, const Tensor& sm, int oh, int ow);

// (g - min) / (max - min); a constant map becomes the zero map.
Tensor normalize_guidance(const Tensor& g);

struct GuidanceStack {
  int span = 0;             // leading frames that carry zero maps
  std::vector<Tensor> maps; // length T, each H_l x W_l
};

// Shifts per-frame maps back by span positions, zero-filling the first span
// slots: out[t] = maps[t - span].
GuidanceStack align_guidance(const std::vector<Tensor>& maps, int span);

// Full pipeline for one clip (C x T x H x W): sliding dynamic images, dynamic
// and static guidance, pooling to every pyramid level, normalization and
// temporal alignment. One stack per entry of level_sizes.
std::vector<GuidanceStack> compute_guidance(const Tensor& clip, int span, int morph_k,
                                            float lambda_amp,
                                            const std::vector<std::pair<int, int>>& level_sizes);

}  // namespace drst::frp
