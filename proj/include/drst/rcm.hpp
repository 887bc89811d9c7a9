#pragma once

#include <string>

#include "drst/nn.hpp"
#include "drst/tensor.hpp"

namespace drst {

// Feature-axis attention: sigmoid of the row means of Q K^T / sqrt(d), with
// Q = Obar^T Wq and K = Obar^T Wk. Returns 1 x d/2. d is the pre-projection
// width (the divisor is sqrt(d) as written, not sqrt(d/2)).
Tensor x_attention(const Tensor& obar, const Tensor& wq, const Tensor& wk, int d);

// Per-frame channel means of Obar^T passed through the embedding perceptron;
// returns the 1 x T embedding (pre-sigmoid).
Tensor y_attention_embed(const Tensor& obar, const Mlp& y_mlp);

// Rank-1 joint mask: axy[t, c] = ay[t] * ax[c].
Tensor combine_xy(const Tensor& ax, const Tensor& ay);

Tensor enhance(const Tensor& obar, const Tensor& axy);

// Mean KL(softmax(teacher / temp) || softmax(head(wembed) / temp)). The
// teacher is detached here, so no gradient ever reaches it.
Tensor distill_loss(const Tensor& wembed, const Tensor& teacher_logits, const Linear& head,
                    float temp);

struct Rcm {
  Linear proj;         // d -> d/2
  Tensor wq, wk;       // T x T
  Mlp y_mlp;           // 1 x T -> 1 x T, two hidden layers of width T
  Linear distill_head; // T -> classes
  int T = 0;
  int d = 0;
  bool enabled = true;

  struct Out {
    Tensor obar;    // T x d/2
    Tensor ax;      // 1 x d/2
    Tensor ay;      // 1 x T
    Tensor axy;     // T x d/2
    Tensor ohat;    // T x d/2, equals obar when disabled
    Tensor wembed;  // 1 x T, undefined when disabled
  };

  // Disabled keeps only the projection: no attention, no distillation.
  void init(int frames, int width, int classes, bool enable, Rng& rng);
  Out forward(const Tensor& O) const;  // O: T x d
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

}  // namespace drst
