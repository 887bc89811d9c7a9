#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drst/tensor.hpp"

namespace drst {

// One sample: planar rgb 3 x T x H x W and depth 1 x T x H x W, values in
// [0, 1]. Depth is a single channel; the store quantizes both to 8 bits.
struct Clip {
  int label = 0;
  Tensor rgb;
  Tensor depth;

  int frames() const { return rgb.dim(1); }
  int height() const { return rgb.dim(2); }
  int width() const { return rgb.dim(3); }
};

void write_ppm(const std::filesystem::path& file, const Tensor& rgb, int frame);
void write_pgm(const std::filesystem::path& file, const Tensor& depth, int frame);
Tensor read_ppm(const std::filesystem::path& file);   // 3 x 1 x H x W
Tensor read_pgm(const std::filesystem::path& file);   // 1 x 1 x H x W

// Layout on disk: <dir>/clip_00000/{label.txt, frame_000.ppm, frame_000.pgm, ...}
// Clips load back sorted by directory name, so indices are stable.
void save_clip_store(const std::filesystem::path& dir, const std::vector<Clip>& clips);
std::vector<Clip> load_clip_store(const std::filesystem::path& dir);

}  // namespace drst
