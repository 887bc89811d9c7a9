#include "drst/fusion.hpp"

#include <cmath>

#include "drst/errors.hpp"

namespace drst {

void SpatialInteract::init(int d, Rng& rng) {
  mlp.init(d, {d}, d, rng);
  ln.init(d);
}

Tensor SpatialInteract::joint(const Tensor& ohat_rgb, const Tensor& ohat_depth) const {
  if (ohat_rgb.shape() != ohat_depth.shape())
    throw DimensionError("spatial interact: modality shapes differ, " +
                         shape_str(ohat_rgb.shape()) + " vs " + shape_str(ohat_depth.shape()));
  Tensor cat = concat({ohat_rgb, ohat_depth}, 1);  // T x d, halves from each modality
  return ln.forward(mlp.forward(cat));
}

void SpatialInteract::reg(ParamRegistry& r, const std::string& prefix) const {
  mlp.reg(r, prefix + ".mlp");
  ln.reg(r, prefix + ".ln");
}

void TemporalInteract::init(int d2, Rng& rng) {
  mlp.init(2 * d2, {d2}, d2, rng);
}

Tensor TemporalInteract::forward(const Tensor& cls_rgb, const Tensor& cls_depth) const {
  Tensor cat = concat({cls_rgb, cls_depth}, 1);  // 1 x 2*(d/2)
  return mlp.forward(cat);
}

void TemporalInteract::reg(ParamRegistry& r, const std::string& prefix) const {
  mlp.reg(r, prefix + ".mlp");
}

void Capf::init(int d2, Rng& rng) {
  int d4 = d2 / 2;
  if (d4 < 1) throw ParameterError("capf: feature width too small");
  enc.init(d2, {d4}, d4, rng);
  dec.init(d4, {d4}, d2, rng);
}

Tensor Capf::encode(const Tensor& x) const { return enc.forward(x); }
Tensor Capf::decode(const Tensor& e) const { return dec.forward(e); }

void Capf::reg(ParamRegistry& r, const std::string& prefix) const {
  enc.reg(r, prefix + ".enc");
  dec.reg(r, prefix + ".dec");
}

void FusionHeads::init(int d2, int classes, Rng& rng) {
  // same cool start as the branch heads: these logits feed seven loss terms
  // at once, so a near-zero beginning keeps the first epochs balanced
  f1.init(d2, classes, rng, 0.05f);
  f2.init(d2, classes, rng, 0.05f);
  f3.init(d2 / 2, classes, rng, 0.05f);
}

void FusionHeads::reg(ParamRegistry& r, const std::string& prefix) const {
  f1.reg(r, prefix + ".f1");
  f2.reg(r, prefix + ".f2");
  f3.reg(r, prefix + ".f3");
}

int argmax_class(const Tensor& scores) {
  const auto& v = scores.values();
  if (v.empty()) throw DimensionError("argmax over empty score vector");
  int best = 0;
  for (int i = 1; i < (int)v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double LossReport::term(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return v;
  throw ParameterError("no loss term named " + name);
}

LossReport unimodal_loss(const std::vector<Tensor>& sharp, const Tensor& sharp_sum,
                         const Tensor& distill, int label, float gamma) {
  if (gamma < 0.f || gamma > 1.f)
    throw ParameterError("gamma must lie in [0, 1]");
  if (sharp.empty()) throw ParameterError("unimodal loss needs at least one branch");
  LossReport rep;
  Tensor total;
  double sum = 0.0;  // report total is the exact double sum of the terms
  for (std::size_t k = 0; k < sharp.size(); ++k) {
    Tensor ce = loss_cross_entropy(sharp[k], {label});
    Tensor w = scale(ce, gamma);
    total = total.defined() ? add(total, w) : w;
    rep.terms.emplace_back("ce_branch" + std::to_string(k + 1), ce.item());
    sum += (double)gamma * ce.item();
  }
  Tensor ce_all = loss_cross_entropy(sharp_sum, {label});
  total = add(total, scale(ce_all, 1.f - gamma));
  rep.terms.emplace_back("ce_sum", ce_all.item());
  sum += (1.0 - (double)gamma) * ce_all.item();
  if (distill.defined()) {
    total = add(total, distill);
    rep.terms.emplace_back("distill", distill.item());
    sum += distill.item();
  } else {
    rep.terms.emplace_back("distill", 0.0);
  }
  rep.total_tensor = total;
  rep.total = sum;
  return rep;
}

LossReport multimodal_loss(const Tensor& logits_rgb, const Tensor& logits_depth,
                           const Tensor& logits_joint, const Tensor& distill_rgb,
                           const Tensor& distill_depth, const Tensor& decoded,
                           const Tensor& joint_temporal, int label) {
  int classes = logits_rgb.dim(1);
  if (label < 0 || label >= classes) throw ParameterError("label out of range");
  std::vector<float> onehot((std::size_t)classes, 0.f);
  onehot[(std::size_t)label] = 1.f;
  Tensor target = Tensor::from({1, classes}, onehot);

  LossReport rep;
  Tensor total;
  double sum = 0.0;
  auto accumulate = [&](const std::string& name, const Tensor& t) {
    total = total.defined() ? add(total, t) : t;
    rep.terms.emplace_back(name, t.item());
    sum += t.item();
  };

  accumulate("ce_rgb", loss_cross_entropy(logits_rgb, {label}));
  accumulate("ce_depth", loss_cross_entropy(logits_depth, {label}));
  accumulate("bce_rgb", loss_bce(sigmoid(logits_rgb), target));
  accumulate("bce_depth", loss_bce(sigmoid(logits_depth), target));
  accumulate("mse_rgb", loss_mse(softmax_lastdim(logits_rgb), target));
  accumulate("mse_depth", loss_mse(softmax_lastdim(logits_depth), target));
  if (distill_rgb.defined()) {
    accumulate("distill_rgb", distill_rgb);
    accumulate("distill_depth", distill_depth);
  } else {
    rep.terms.emplace_back("distill_rgb", 0.0);
    rep.terms.emplace_back("distill_depth", 0.0);
  }
  accumulate("capf_recon", loss_mse(decoded, joint_temporal.detach()));
  accumulate("capf_ce", loss_cross_entropy(logits_joint, {label}));

  rep.total_tensor = total;
  rep.total = sum;
  return rep;
}

}  // namespace drst
