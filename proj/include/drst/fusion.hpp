#pragma once

#include <string>
#include <utility>
#include <vector>

#include "drst/nn.hpp"
#include "drst/tensor.hpp"

namespace drst {

// Joint spatial representation: LN(MLP([enhanced_rgb || enhanced_depth])),
// one shared MLP; callers add it to each modality's raw features. The two
// enhanced inputs are d/2 wide, so their concatenation restores width d.
struct SpatialInteract {
  Mlp mlp;  // d -> d, one gelu hidden of width d
  LayerNormLayer ln;

  void init(int d, Rng& rng);
  Tensor joint(const Tensor& ohat_rgb, const Tensor& ohat_depth) const;  // T x d
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

struct TemporalInteract {
  Mlp mlp;  // d -> d/2, one gelu hidden of width d/2

  void init(int d2, Rng& rng);
  Tensor forward(const Tensor& cls_rgb, const Tensor& cls_depth) const;  // 1 x d/2
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

// Autoencoder over the joint temporal representation. The decoder chases the
// (detached) input, so the reconstruction loss shapes only the encoder side.
struct Capf {
  Mlp enc;  // d/2 -> d/4
  Mlp dec;  // d/4 -> d/2

  void init(int d2, Rng& rng);
  Tensor encode(const Tensor& x) const;
  Tensor decode(const Tensor& e) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

struct FusionHeads {
  Linear f1;  // rgb temporal features d/2 -> classes
  Linear f2;  // depth temporal features d/2 -> classes
  Linear f3;  // encoded joint d/4 -> classes

  void init(int d2, int classes, Rng& rng);
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

// Ties resolve to the lowest class index.
int argmax_class(const Tensor& scores);

struct LossReport {
  std::vector<std::pair<std::string, double>> terms;
  double total = 0.0;
  Tensor total_tensor;  // the graph node to backpropagate

  double term(const std::string& name) const;
};

// gamma * sum_k CE(S_k) + (1 - gamma) * CE(sum_k S_k) + distillation.
// distill may be undefined (recoupling off); it is reported as 0.
LossReport unimodal_loss(const std::vector<Tensor>& sharp, const Tensor& sharp_sum,
                         const Tensor& distill, int label, float gamma);

// Eight unit-weight terms (ce/bce/mse/distill per modality) plus the joint
// reconstruction and the encoder's classification supervision.
LossReport multimodal_loss(const Tensor& logits_rgb, const Tensor& logits_depth,
                           const Tensor& logits_joint, const Tensor& distill_rgb,
                           const Tensor& distill_depth, const Tensor& decoded,
                           const Tensor& joint_temporal, int label);

}  // namespace drst
