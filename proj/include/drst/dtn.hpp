#pragma once

#include <string>
#include <vector>

#include "drst/nn.hpp"
#include "drst/rng.hpp"
#include "drst/tensor.hpp"

namespace drst {

// Frame picks for a branch of length Tn from T frames (0-based result).
// The 1-based pick for slot t lies in [ceil(T/Tn)*t - 1, ceil(T/Tn)*t],
// clamped to [1, T]; with no rng the upper end is taken, so Tn == T is the
// identity. rng (if given) chooses between the two ends.
std::vector<int> subsample_indices(int T, int Tn, Rng* rng);

// Temporal multiscale layer: kernels {1,3,5} along time on a L x d/2 sequence,
// channel concat, pointwise projection back to d/2, temporal maxpool 2/2.
struct TmsLayer {
  Conv3dLayer k1, k3, k5, proj;

  void init(int d2, Rng& rng);
  Tensor forward(const Tensor& x) const;  // L x d/2 -> floor(L/2) x d/2
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

// Multi-head self-attention where each query row keeps only its k highest
// scores; the rest are masked before the softmax and receive exactly zero
// weight.
struct MsaParams {
  std::vector<Tensor> wq, wk, wv;  // per head, d/2 x dh
  Linear out_proj;                 // d/2 -> d/2

  void init(int d2, int heads, Rng& rng);
  Tensor forward(const Tensor& tokens, int knn_k) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
  int heads() const { return static_cast<int>(wq.size()); }
};

// Literal residual order: MLP(LN(MSA(x))) + x.
struct TransformerBlock {
  MsaParams msa;
  LayerNormLayer ln;
  Linear mlp_in, mlp_out;

  void init(int d2, int heads, int mlp_ratio, Rng& rng);
  Tensor forward(const Tensor& tokens, int knn_k) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

struct BranchConfig {
  int length = 16;    // Tn
  int depth = 6;      // transformer blocks
  int heads = 4;
  int knn_k = 0;      // 0: ceil(tokens / 2)
  int mlp_ratio = 2;
};

struct DtnBranch {
  BranchConfig cfg;
  TmsLayer tms;
  Tensor cls_token;  // 1 x d/2
  Tensor pos_emb;    // tokens x d/2
  std::vector<TransformerBlock> blocks;
  Linear head;       // d/2 -> classes

  struct Out {
    Tensor cls_feat;  // 1 x d/2 final class-token state
    Tensor logits;    // 1 x classes, unsharpened
  };

  void init(int d2, int classes, const BranchConfig& c, Rng& rng);
  int token_count() const { return cfg.length / 2 + 1; }
  int effective_k() const;
  Out forward(const Tensor& ohat, Rng* subsample_rng) const;  // ohat: T x d/2
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

struct DtnConfig {
  std::vector<int> lengths = {16, 32, 48};
  int depth = 6;
  int heads = 4;
  int knn_k = 0;
  int mlp_ratio = 2;
};

struct Dtn {
  std::vector<DtnBranch> branches;

  void init(int d2, int classes, const DtnConfig& c, Rng& rng);
  std::vector<DtnBranch::Out> forward(const Tensor& ohat, Rng* subsample_rng) const;
  void reg(ParamRegistry& r, const std::string& prefix) const;
};

struct DtnAggregate {
  std::vector<Tensor> sharp;  // per-branch logits / tau
  Tensor sharp_sum;           // sum of the above: the aggregate logits
  Tensor teacher;             // sum of unsharpened branch logits
  Tensor feat_sum;            // sum of class-token states, 1 x d/2
};

DtnAggregate aggregate_branches(const std::vector<DtnBranch::Out>& outs, float tau);

}  // namespace drst
