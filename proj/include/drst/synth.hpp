#pragma once

#include <vector>

#include "drst/clip.hpp"
#include "drst/rng.hpp"

namespace drst {

// Motion vocabulary, in class order when pairing is off.
enum class Motion { Left, Right, Up, Down, Grow, Shrink, Rotate, Blink };

struct SynthSpec {
  int classes = 8;
  int clips_per_class = 4;
  int frames = 16;
  int side = 56;
  float noise = 0.05f;
  unsigned long long seed = 1;
  // Pairing mode factorizes the label across the modalities: rgb shows only
  // {left,right}, depth shows only {grow,shrink}, so neither stream alone can
  // separate the four classes. Requires classes == 4.
  bool pairing = false;

  void validate() const;
};

// Pure function of (spec, cls, idx): calling twice gives bitwise equal clips.
Clip make_clip(const SynthSpec& spec, int cls, int idx);

// Class-major order: clips_per_class clips for class 0, then class 1, ...
std::vector<Clip> make_dataset(const SynthSpec& spec);

}  // namespace drst
