#include "drst/model.hpp"

#include "drst/errors.hpp"

namespace drst {

int rgb_channels() { return 3; }
int depth_channels() { return 1; }

void ModelConfig::validate() const {
  if (classes < 2) throw ParameterError("need at least two classes");
  if (frames < 2) throw ParameterError("need at least two frames");
  if (d < 8 || d % 4 != 0)
    throw ParameterError("feature width must be a multiple of 4 and at least 8");
  if (dsn_layers < 1) throw ParameterError("spatial net needs at least one layer");
  if (width_mult <= 0.0f) throw ParameterError("width multiplier must be positive");
  if (dtn.lengths.empty()) throw ParameterError("temporal net needs at least one branch");
  for (int len : dtn.lengths)
    if (len < 2 || len > frames)
      throw ParameterError("branch length " + std::to_string(len) +
                           " must lie in [2, frames]");
  if (dtn.depth < 1) throw ParameterError("temporal net needs at least one block");
  if (dtn.heads < 1 || (d / 2) % dtn.heads != 0)
    throw ParameterError("heads must divide the token width d/2");
  if (dtn.knn_k < 0) throw ParameterError("knn k must be nonnegative");
  if (dtn.mlp_ratio < 1) throw ParameterError("mlp ratio must be at least 1");
  if (window_span < 1 || window_span >= frames)
    throw ParameterError("window span must lie in [1, frames)");
  if (morph_k < 1 || morph_k % 2 == 0)
    throw ParameterError("morphology size must be odd and positive");
  if (lambda_amp <= 0.0f) throw ParameterError("guidance amplitude must be positive");
  if (distill_temp <= 0.0f) throw ParameterError("distillation temperature must be positive");
}

void ModalPipeline::init(int in_channels, const ModelConfig& m, Rng& rng) {
  DsnConfig dc;
  dc.layers = m.dsn_layers;
  dc.d = m.d;
  dc.width_mult = m.width_mult;
  dsn.init(in_channels, dc, rng);
  rcm.init(m.frames, m.d, m.classes, m.recouple, rng);
  dtn.init(m.d / 2, m.classes, m.dtn, rng);
}

void ModalPipeline::reg(ParamRegistry& r, const std::string& prefix) const {
  dsn.reg(r, prefix + ".dsn");
  rcm.reg(r, prefix + ".rcm");
  dtn.reg(r, prefix + ".dtn");
}

std::vector<frp::GuidanceStack> ModalPipeline::guidance(const Tensor& stream,
                                                        const ModelConfig& m) const {
  return frp::compute_guidance(stream, m.window_span, m.morph_k, m.lambda_amp,
                               dsn.level_sizes(stream.dim(2), stream.dim(3)));
}

void UnimodalModel::init(const ModelConfig& m, const std::string& mod,
                         unsigned long long seed) {
  m.validate();
  if (mod != "rgb" && mod != "depth")
    throw ParameterError("unimodal modality must be rgb or depth");
  cfg = m;
  modality = mod;
  Rng rng(seed);
  pipe.init(mod == "rgb" ? rgb_channels() : depth_channels(), cfg, rng);
  params = ParamRegistry{};
  pipe.reg(params, modality);
}

UnimodalOut UnimodalModel::forward(const Tensor& stream, float tau,
                                   Rng* subsample_rng) const {
  auto g = pipe.guidance(stream, cfg);
  Tensor O = pipe.dsn.forward(stream, g);
  Rcm::Out rc = pipe.rcm.forward(O);
  UnimodalOut out;
  out.agg = aggregate_branches(pipe.dtn.forward(rc.ohat, subsample_rng), tau);
  if (pipe.rcm.enabled)
    out.distill = distill_loss(rc.wembed, out.agg.teacher, pipe.rcm.distill_head,
                               cfg.distill_temp);
  return out;
}

void MultimodalModel::init(const ModelConfig& m, unsigned long long seed) {
  m.validate();
  cfg = m;
  Rng rng(seed);
  rgb.init(rgb_channels(), cfg, rng);
  depth.init(depth_channels(), cfg, rng);
  spatial.init(cfg.d, rng);
  temporal.init(cfg.d / 2, rng);
  capf.init(cfg.d / 2, rng);
  heads.init(cfg.d / 2, cfg.classes, rng);
  params = ParamRegistry{};
  rgb.reg(params, "rgb");
  depth.reg(params, "depth");
  spatial.reg(params, "fuse.spatial");
  temporal.reg(params, "fuse.temporal");
  capf.reg(params, "fuse.capf");
  heads.reg(params, "fuse.heads");
}

MultimodalOut MultimodalModel::forward(const Tensor& rgb_stream, const Tensor& depth_stream,
                                       float tau, Rng* subsample_rng) const {
  auto g_r = rgb.guidance(rgb_stream, cfg);
  auto g_d = depth.guidance(depth_stream, cfg);
  Tensor O_r = rgb.dsn.forward(rgb_stream, g_r);
  Tensor O_d = depth.dsn.forward(depth_stream, g_d);

  // First recoupling pass feeds the joint spatial representation, which is
  // injected back into both raw streams before the pass that the temporal
  // branches (and the distillation teacher) consume. Parameters are shared
  // between the two passes.
  Tensor joint = spatial.joint(rgb.rcm.forward(O_r).ohat, depth.rcm.forward(O_d).ohat);
  Rcm::Out rc_r = rgb.rcm.forward(add(O_r, joint));
  Rcm::Out rc_d = depth.rcm.forward(add(O_d, joint));

  MultimodalOut out;
  out.agg_rgb = aggregate_branches(rgb.dtn.forward(rc_r.ohat, subsample_rng), tau);
  out.agg_depth = aggregate_branches(depth.dtn.forward(rc_d.ohat, subsample_rng), tau);
  if (rgb.rcm.enabled) {
    out.distill_rgb = distill_loss(rc_r.wembed, out.agg_rgb.teacher, rgb.rcm.distill_head,
                                   cfg.distill_temp);
    out.distill_depth = distill_loss(rc_d.wembed, out.agg_depth.teacher,
                                     depth.rcm.distill_head, cfg.distill_temp);
  }

  out.joint_temporal = temporal.forward(out.agg_rgb.feat_sum, out.agg_depth.feat_sum);
  out.encoded = capf.encode(out.joint_temporal);
  out.decoded = capf.decode(out.encoded);

  out.logits_rgb = heads.f1.forward(out.agg_rgb.feat_sum);
  out.logits_depth = heads.f2.forward(out.agg_depth.feat_sum);
  out.logits_joint = heads.f3.forward(out.encoded);
  out.fused = add(add(out.logits_rgb, out.logits_depth), out.logits_joint);
  return out;
}

}  // namespace drst
