#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "drst/errors.hpp"

namespace drst {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // same length as data iff track
  bool track = false;
};

// Value handle; copies share storage. Training dtype is float32 throughout,
// reductions accumulate in double where it is cheap.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}

  static Tensor zeros(Shape s, bool track = false);
  static Tensor full(Shape s, float v, bool track = false);
  static Tensor from(Shape s, std::vector<float> v, bool track = false);
  static Tensor scalar(float v, bool track = false);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return p_->data.size(); }

  float* data() { return p_->data.data(); }
  const float* data() const { return p_->data.data(); }
  std::vector<float>& values() { return p_->data; }
  const std::vector<float>& values() const { return p_->data; }
  float& at(std::initializer_list<int> idx);
  float item() const;  // size-1 tensors

  bool tracked() const { return p_->track; }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void zero_grad();
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return p_; }

 private:
  std::shared_ptr<TensorImpl> p_;
};

enum class OpKind {
  Add, Sub, Mul, MatMul, Transpose2d, Reshape, Concat, GatherRows, Scale,
  SumAll, Conv3d, MaxPool3d, GlobalAvgPool, Gelu, Sigmoid, Softmax,
  TopkMask, LayerNorm, CrossEntropy, Bce, Mse, KlDiv,
};

// Tape of op records in append order; append order is the topological order.
// One tape per thread; cleared by backward().
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::function<void()> backward;
  };

  static Graph& active();

  bool recording() const { return enabled_; }
  std::size_t size() const { return nodes_.size(); }
  void record(OpKind kind, std::function<void()> fn);
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
  bool enabled_ = true;

  friend struct NoGradGuard;
  friend void backward(const Tensor& root);
};

// Disables taping in scope (eval paths, numeric differencing).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Elementwise; b must match a's shape or be broadcastable to it by expanding
// singleton axes (equal rank).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D
Tensor transpose2d(const Tensor& x);
Tensor reshape(const Tensor& x, Shape s);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);  // 2-D, 0-based
Tensor scale(const Tensor& x, float c);
Tensor sum_all(const Tensor& x);

// x: C_in x T x H x W, kernels: C_out x C_in x kt x kh x kw, zero padding
// per axis, stride 1. "Same" size needs pad = k/2 on odd kernels.
Tensor conv3d(const Tensor& x, const Tensor& kernels, std::array<int, 3> pad);

// Ties go to the lowest linear index. Padded cells never win the max.
Tensor maxpool3d(const Tensor& x, std::array<int, 3> window,
                 std::array<int, 3> stride, std::array<int, 3> pad = {0, 0, 0});

// Mean over the given axes; reduced axes are kept with extent 1.
Tensor global_avg_pool(const Tensor& x, const std::vector<int>& axes);

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor sigmoid(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);

// Keeps the k largest entries per row (ties resolved to the lower column),
// replaces the rest with a large negative number so a following softmax
// assigns them exactly zero weight.
Tensor topk_mask_rows(const Tensor& x, int k);

// Normalizes over the last axis; gain/bias are rank-1 of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

// All losses reduce to a scalar by batch mean.
Tensor loss_cross_entropy(const Tensor& logits, const std::vector<int>& classes);
Tensor loss_bce(const Tensor& probs, const Tensor& targets);
Tensor loss_mse(const Tensor& a, const Tensor& b);
Tensor loss_kl(const Tensor& p, const Tensor& q);  // KL(p || q), rows

// Seeds grad 1 at the scalar root, walks the tape in reverse, then clears it.
// Leaf grads accumulate across calls until zeroed.
void backward(const Tensor& root);

// Max over coordinates of |analytic - central difference| / max(1, |numeric|).
// Inputs sitting on a maxpool tie or a top-k selection boundary are outside
// the contract. Differences are accumulated in double.
double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor& x,
                  double h = 1e-3);

// start + (end-start) * (1 - cos(pi * step/total)) / 2
double cosine_value(int step, int total, double start, double end);

}  // namespace drst
