#pragma once

#include <string>
#include <vector>

#include "drst/dsn.hpp"
#include "drst/dtn.hpp"
#include "drst/fusion.hpp"
#include "drst/frp.hpp"
#include "drst/rcm.hpp"

namespace drst {

struct ModelConfig {
  int classes = 8;
  int frames = 64;
  int d = 128;
  int dsn_layers = 6;
  float width_mult = 1.0f;
  DtnConfig dtn;
  int window_span = 10;
  int morph_k = 3;
  float lambda_amp = 2.0f;
  float distill_temp = 0.4f;
  bool recouple = true;

  void validate() const;  // throws ParameterError on nonsense dims
};

// One modality's stack: guidance-gated spatial net, recoupling, temporal net.
struct ModalPipeline {
  Dsn dsn;
  Rcm rcm;
  Dtn dtn;

  void init(int in_channels, const ModelConfig& m, Rng& rng);
  void reg(ParamRegistry& r, const std::string& prefix) const;

  // Guidance is recomputed per (augmented) clip; it lives outside the graph.
  std::vector<frp::GuidanceStack> guidance(const Tensor& stream, const ModelConfig& m) const;
};

struct UnimodalOut {
  DtnAggregate agg;
  Tensor distill;  // undefined when recoupling is off
};

struct UnimodalModel {
  ModelConfig cfg;
  std::string modality;  // "rgb" or "depth"
  ModalPipeline pipe;
  ParamRegistry params;

  void init(const ModelConfig& m, const std::string& mod, unsigned long long seed);
  // stream: C x T x H x W for this modality
  UnimodalOut forward(const Tensor& stream, float tau, Rng* subsample_rng) const;
};

struct MultimodalOut {
  DtnAggregate agg_rgb, agg_depth;
  Tensor distill_rgb, distill_depth;  // undefined when recoupling is off
  Tensor logits_rgb, logits_depth, logits_joint;
  Tensor joint_temporal, encoded, decoded;
  Tensor fused;  // logits_rgb + logits_depth + logits_joint
};

struct MultimodalModel {
  ModelConfig cfg;
  ModalPipeline rgb, depth;
  SpatialInteract spatial;
  TemporalInteract temporal;
  Capf capf;
  FusionHeads heads;
  ParamRegistry params;

  void init(const ModelConfig& m, unsigned long long seed);
  MultimodalOut forward(const Tensor& rgb_stream, const Tensor& depth_stream, float tau,
                        Rng* subsample_rng) const;
};

int rgb_channels();
int depth_channels();

}  // namespace drst
