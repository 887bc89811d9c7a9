#include "drst/dtn.hpp"

#include <algorithm>
#include <cmath>

namespace drst {

std::vector<int> subsample_indices(int T, int Tn, Rng* rng) {
  if (T < 1) throw DimensionError("subsample needs at least one frame");
  if (Tn < 1 || Tn > T)
    throw DimensionError("branch length " + std::to_string(Tn) + " exceeds " +
                         std::to_string(T) + " frames");
  const int r = (T + Tn - 1) / Tn;  // ceil(T / Tn)
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(Tn));
  for (int t = 1; t <= Tn; ++t) {
    const int lo = std::clamp(r * t - 1, 1, T);
    const int hi = std::clamp(r * t, 1, T);
    const int pick = rng ? (rng->uniform_int(0, 1) ? hi : lo) : hi;
    idx.push_back(pick - 1);
  }
  return idx;
}

// ---------------------------------------------------------------------------

static std::array<int, 3> split3(int d2) {
  const int q = d2 / 3, r = d2 % 3;
  return {q + (r > 0), q + (r > 1), q};
}

void TmsLayer::init(int d2, Rng& rng) {
  if (d2 < 3) throw ParameterError("tms needs at least 3 channels");
  const auto w = split3(d2);
  k1.init(d2, w[0], {1, 1, 1}, {0, 0, 0}, rng);
  k3.init(d2, w[1], {3, 1, 1}, {1, 0, 0}, rng);
  k5.init(d2, w[2], {5, 1, 1}, {2, 0, 0}, rng);
  proj.init(d2, d2, {1, 1, 1}, {0, 0, 0}, rng);
}

Tensor TmsLayer::forward(const Tensor& x) const {
  if (x.rank() != 2) throw DimensionError("tms input must be L x d/2");
  const int L = x.dim(0), d2 = x.dim(1);
  if (L < 2) throw DimensionError("tms needs at least 2 steps for the temporal pool");
  Tensor seq = reshape(transpose2d(x), {d2, L, 1, 1});
  Tensor cat = concat({k1.forward(seq), k3.forward(seq), k5.forward(seq)}, 0);
  Tensor mixed = proj.forward(cat);
  Tensor pooled = maxpool3d(mixed, {2, 1, 1}, {2, 1, 1});
  return transpose2d(reshape(pooled, {d2, L / 2}));
}

void TmsLayer::reg(ParamRegistry& r, const std::string& prefix) const {
  k1.reg(r, prefix + ".k1");
  k3.reg(r, prefix + ".k3");
  k5.reg(r, prefix + ".k5");
  proj.reg(r, prefix + ".proj");
}

// ---------------------------------------------------------------------------

void MsaParams::init(int d2, int heads, Rng& rng) {
  if (heads < 1 || d2 % heads != 0)
    throw ParameterError("token width must divide evenly into heads");
  const int dh = d2 / heads;
  wq.clear();
  wk.clear();
  wv.clear();
  for (int h = 0; h < heads; ++h) {
    wq.push_back(xavier_init({d2, dh}, d2, dh, rng));
    wk.push_back(xavier_init({d2, dh}, d2, dh, rng));
    wv.push_back(xavier_init({d2, dh}, d2, dh, rng));
  }
  out_proj.init(d2, d2, rng);
}

Tensor MsaParams::forward(const Tensor& tokens, int knn_k) const {
  if (tokens.rank() != 2) throw DimensionError("attention input must be L x d/2");
  const int L = tokens.dim(0);
  if (knn_k < 1 || knn_k > L) throw ParameterError("knn k must lie in [1, token count]");
  const int dh = wq[0].dim(1);
  const float inv = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> per_head;
  per_head.reserve(wq.size());
  for (std::size_t h = 0; h < wq.size(); ++h) {
    Tensor q = matmul(tokens, wq[h]);
    Tensor k = matmul(tokens, wk[h]);
    Tensor v = matmul(tokens, wv[h]);
    Tensor scores = scale(matmul(q, transpose2d(k)), inv);
    Tensor a = softmax_lastdim(topk_mask_rows(scores, knn_k));
    per_head.push_back(matmul(a, v));
  }
  return out_proj.forward(concat(per_head, 1));
}

void MsaParams::reg(ParamRegistry& r, const std::string& prefix) const {
  for (std::size_t h = 0; h < wq.size(); ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    r.add(hp + ".wq", wq[h]);
    r.add(hp + ".wk", wk[h]);
    r.add(hp + ".wv", wv[h]);
  }
  out_proj.reg(r, prefix + ".out");
}

void TransformerBlock::init(int d2, int heads, int mlp_ratio, Rng& rng) {
  if (mlp_ratio < 1) throw ParameterError("mlp ratio must be positive");
  msa.init(d2, heads, rng);
  ln.init(d2);
  mlp_in.init(d2, mlp_ratio * d2, rng);
  mlp_out.init(mlp_ratio * d2, d2, rng);
}

Tensor TransformerBlock::forward(const Tensor& tokens, int knn_k) const {
  Tensor y = ln.forward(msa.forward(tokens, knn_k));
  Tensor m = mlp_out.forward(gelu(mlp_in.forward(y)));
  return add(m, tokens);
}

void TransformerBlock::reg(ParamRegistry& r, const std::string& prefix) const {
  msa.reg(r, prefix + ".msa");
  ln.reg(r, prefix + ".ln");
  mlp_in.reg(r, prefix + ".mlp_in");
  mlp_out.reg(r, prefix + ".mlp_out");
}

// ---------------------------------------------------------------------------

void DtnBranch::init(int d2, int classes, const BranchConfig& c, Rng& rng) {
  if (c.length < 2) throw ParameterError("branch length must be at least 2");
  cfg = c;
  tms.init(d2, rng);
  cls_token = normal_init({1, d2}, 0.02f, rng);
  pos_emb = normal_init({token_count(), d2}, 0.02f, rng);
  blocks.clear();
  for (int i = 0; i < cfg.depth; ++i) {
    TransformerBlock b;
    b.init(d2, cfg.heads, cfg.mlp_ratio, rng);
    blocks.push_back(std::move(b));
  }
  // cool start: branch logits pass through the 1/tau sharpening (a x14..x25
  // blowup), so the head begins near zero to keep the first epochs sane
  head.init(d2, classes, rng, 0.05f);
}

int DtnBranch::effective_k() const {
  const int L = token_count();
  const int k = cfg.knn_k > 0 ? cfg.knn_k : (L + 1) / 2;
  return std::min(k, L);
}

DtnBranch::Out DtnBranch::forward(const Tensor& ohat, Rng* subsample_rng) const {
  if (ohat.rank() != 2) throw DimensionError("branch input must be T x d/2");
  const std::vector<int> idx = subsample_indices(ohat.dim(0), cfg.length, subsample_rng);
  Tensor x = tms.forward(gather_rows(ohat, idx));
  Tensor tokens = add(concat({cls_token, x}, 0), pos_emb);
  const int k = effective_k();
  for (const TransformerBlock& b : blocks) tokens = b.forward(tokens, k);
  Out out;
  out.cls_feat = gather_rows(tokens, {0});
  out.logits = head.forward(out.cls_feat);
  return out;
}

void DtnBranch::reg(ParamRegistry& r, const std::string& prefix) const {
  tms.reg(r, prefix + ".tms");
  r.add(prefix + ".cls", cls_token);
  r.add(prefix + ".pos", pos_emb);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].reg(r, prefix + ".block" + std::to_string(i));
  head.reg(r, prefix + ".head");
}

void Dtn::init(int d2, int classes, const DtnConfig& c, Rng& rng) {
  if (c.lengths.empty()) throw ParameterError("dtn needs at least one branch");
  branches.clear();
  for (int len : c.lengths) {
    BranchConfig bc;
    bc.length = len;
    bc.depth = c.depth;
    bc.heads = c.heads;
    bc.knn_k = c.knn_k;
    bc.mlp_ratio = c.mlp_ratio;
    DtnBranch b;
    b.init(d2, classes, bc, rng);
    branches.push_back(std::move(b));
  }
}

std::vector<DtnBranch::Out> Dtn::forward(const Tensor& ohat, Rng* subsample_rng) const {
  std::vector<DtnBranch::Out> outs;
  outs.reserve(branches.size());
  for (const DtnBranch& b : branches) outs.push_back(b.forward(ohat, subsample_rng));
  return outs;
}

void Dtn::reg(ParamRegistry& r, const std::string& prefix) const {
  for (std::size_t i = 0; i < branches.size(); ++i)
    branches[i].reg(r, prefix + ".branch" + std::to_string(i));
}

DtnAggregate aggregate_branches(const std::vector<DtnBranch::Out>& outs, float tau) {
  if (outs.empty()) throw ParameterError("aggregate of zero branches");
  if (tau <= 0.0f) throw ParameterError("sharpness tau must be positive");
  DtnAggregate agg;
  for (const auto& o : outs) {
    agg.sharp.push_back(scale(o.logits, 1.0f / tau));
    agg.sharp_sum = agg.sharp_sum.defined() ? add(agg.sharp_sum, agg.sharp.back())
                                            : agg.sharp.back();
    agg.teacher = agg.teacher.defined() ? add(agg.teacher, o.logits) : o.logits;
    agg.feat_sum = agg.feat_sum.defined() ? add(agg.feat_sum, o.cls_feat) : o.cls_feat;
  }
  return agg;
}

}  // namespace drst
