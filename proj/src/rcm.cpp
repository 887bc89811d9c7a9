#include "drst/rcm.hpp"

#include <cmath>

namespace drst {

Tensor x_attention(const Tensor& obar, const Tensor& wq, const Tensor& wk, int d) {
  if (obar.rank() != 2) throw DimensionError("x_attention expects T x d/2 features");
  const int T = obar.dim(0), d2 = obar.dim(1);
  if (wq.rank() != 2 || wq.dim(0) != T || wq.dim(1) != T || wk.shape() != wq.shape())
    throw DimensionError("x_attention weights must be T x T");
  if (d < 1) throw ParameterError("x_attention needs the pre-projection width");
  Tensor ot = transpose2d(obar);              // d/2 x T
  Tensor q = matmul(ot, wq);                  // d/2 x T
  Tensor k = matmul(ot, wk);                  // d/2 x T
  Tensor scores = matmul(q, transpose2d(k));  // d/2 x d/2
  Tensor scaled = scale(scores, 1.0f / std::sqrt(static_cast<float>(d)));
  Tensor pooled = global_avg_pool(scaled, {1});  // d/2 x 1, mean per row
  return sigmoid(reshape(pooled, {1, d2}));
}

Tensor y_attention_embed(const Tensor& obar, const Mlp& y_mlp) {
  if (obar.rank() != 2) throw DimensionError("y_attention expects T x d/2 features");
  Tensor means = global_avg_pool(transpose2d(obar), {0});  // 1 x T channel means
  return y_mlp.forward(means);
}

Tensor combine_xy(const Tensor& ax, const Tensor& ay) {
  if (ax.rank() != 2 || ax.dim(0) != 1 || ay.rank() != 2 || ay.dim(0) != 1)
    throw DimensionError("combine_xy expects row vectors");
  return matmul(transpose2d(ay), ax);  // T x d/2, rank 1
}

Tensor enhance(const Tensor& obar, const Tensor& axy) {
  if (obar.shape() != axy.shape())
    throw DimensionError("enhance mask must match the features");
  return mul(obar, axy);
}

Tensor distill_loss(const Tensor& wembed, const Tensor& teacher_logits, const Linear& head,
                    float temp) {
  if (temp <= 0.0f) throw ParameterError("distillation temperature must be positive");
  if (wembed.rank() != 2 || wembed.dim(0) != 1)
    throw DimensionError("distill_loss expects a 1 x T embedding");
  Tensor teacher = teacher_logits.detach();
  if (teacher.shape() != Shape{1, head.out_dim()})
    throw DimensionError("teacher logits do not match the distillation head");
  Tensor p = softmax_lastdim(scale(teacher, 1.0f / temp));
  Tensor q = softmax_lastdim(scale(head.forward(wembed), 1.0f / temp));
  return loss_kl(p, q);
}

void Rcm::init(int frames, int width, int classes, bool enable, Rng& rng) {
  if (frames < 1) throw ParameterError("rcm needs at least one frame");
  if (width < 2 || width % 2 != 0) throw ParameterError("rcm width must be even");
  T = frames;
  d = width;
  enabled = enable;
  proj.init(d, d / 2, rng);
  if (!enabled) return;
  wq = xavier_init({T, T}, T, T, rng);
  wk = xavier_init({T, T}, T, T, rng);
  y_mlp.init(T, {T, T}, T, rng);
  distill_head.init(T, classes, rng);
}

Rcm::Out Rcm::forward(const Tensor& O) const {
  if (O.rank() != 2 || O.dim(0) != T || O.dim(1) != d)
    throw DimensionError("rcm input must be T x d");
  Out out;
  out.obar = proj.forward(O);
  if (!enabled) {
    out.ohat = out.obar;
    return out;
  }
  out.ax = x_attention(out.obar, wq, wk, d);
  out.wembed = y_attention_embed(out.obar, y_mlp);
  out.ay = sigmoid(out.wembed);
  out.axy = combine_xy(out.ax, out.ay);
  out.ohat = enhance(out.obar, out.axy);
  return out;
}

void Rcm::reg(ParamRegistry& r, const std::string& prefix) const {
  proj.reg(r, prefix + ".proj");
  if (!enabled) return;
  r.add(prefix + ".wq", wq);
  r.add(prefix + ".wk", wk);
  y_mlp.reg(r, prefix + ".ymlp");
  distill_head.reg(r, prefix + ".distill");
}

}  // namespace drst
