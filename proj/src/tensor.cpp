#include "drst/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace drst {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

static void check_shape(const Shape& s) {
  for (int d : s)
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape s, bool track) {
  check_shape(s);
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(s);
  p->data.assign(numel(p->shape), 0.0f);
  p->track = track;
  if (track) p->grad.assign(p->data.size(), 0.0f);
  return Tensor(std::move(p));
}

Tensor Tensor::full(Shape s, float v, bool track) {
  Tensor t = zeros(std::move(s), track);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<float> v, bool track) {
  check_shape(s);
  if (v.size() != numel(s))
    throw DimensionError("data size " + std::to_string(v.size()) +
                         " does not fill shape " + shape_str(s));
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(s);
  p->data = std::move(v);
  p->track = track;
  if (track) p->grad.assign(p->data.size(), 0.0f);
  return Tensor(std::move(p));
}

Tensor Tensor::scalar(float v, bool track) { return from({1}, {v}, track); }

float& Tensor::at(std::initializer_list<int> idx) {
  if (static_cast<int>(idx.size()) != rank())
    throw DimensionError("index rank mismatch for " + shape_str(shape()));
  std::size_t off = 0;
  int axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= dim(axis))
      throw DimensionError("index out of range for " + shape_str(shape()));
    off = off * static_cast<std::size_t>(dim(axis)) + static_cast<std::size_t>(i);
    ++axis;
  }
  return p_->data[off];
}

float Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor " + shape_str(shape()));
  return p_->data[0];
}

std::vector<float>& Tensor::grad() {
  if (!p_->track) throw ParameterError("grad() on an untracked tensor");
  return p_->grad;
}

const std::vector<float>& Tensor::grad() const {
  if (!p_->track) throw ParameterError("grad() on an untracked tensor");
  return p_->grad;
}

void Tensor::zero_grad() {
  if (p_->track) std::fill(p_->grad.begin(), p_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
  auto p = std::make_shared<TensorImpl>();
  p->shape = p_->shape;
  p->data = p_->data;
  p->track = false;
  return Tensor(std::move(p));
}

// ---------------------------------------------------------------------------
// Graph

Graph& Graph::active() {
  thread_local Graph g;
  return g;
}

void Graph::record(OpKind kind, std::function<void()> fn) {
  nodes_.push_back(Node{kind, std::move(fn)});
}

NoGradGuard::NoGradGuard() : prev_(Graph::active().enabled_) {
  Graph::active().enabled_ = false;
}

NoGradGuard::~NoGradGuard() { Graph::active().enabled_ = prev_; }

void backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1)
    throw DimensionError("backward root must be a scalar");
  if (!root.tracked())
    throw ParameterError("backward on an untracked tensor");
  root.impl()->grad[0] = 1.0f;
  Graph& g = Graph::active();
  for (std::size_t i = g.nodes_.size(); i-- > 0;) g.nodes_[i].backward();
  g.clear();
}

static bool taping(std::initializer_list<const Tensor*> ins) {
  if (!Graph::active().recording()) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->tracked()) return true;
  return false;
}

static Tensor result(Shape s, bool track) { return Tensor::zeros(std::move(s), track); }

// ---------------------------------------------------------------------------
// broadcast iteration: f(ai, bi) for every linear index of shape `as`, where
// bi walks `bs` with stride 0 on its singleton axes

static void check_broadcast(const Shape& as, const Shape& bs) {
  if (as.size() != bs.size())
    throw DimensionError("rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
  for (std::size_t i = 0; i < as.size(); ++i)
    if (bs[i] != as[i] && bs[i] != 1)
      throw DimensionError("shape " + shape_str(bs) + " does not broadcast to " +
                           shape_str(as));
}

template <class F>
static void for_each_broadcast(const Shape& as, const Shape& bs, F&& f) {
  const int r = static_cast<int>(as.size());
  std::vector<std::size_t> bstr(static_cast<std::size_t>(r), 0);
  std::size_t stride = 1;
  for (int i = r - 1; i >= 0; --i) {
    bstr[static_cast<std::size_t>(i)] = (bs[static_cast<std::size_t>(i)] == 1) ? 0 : stride;
    stride *= static_cast<std::size_t>(bs[static_cast<std::size_t>(i)]);
  }
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  const std::size_t n = numel(as);
  std::size_t bi = 0;
  for (std::size_t ai = 0; ai < n; ++ai) {
    f(ai, bi);
    for (int axis = r - 1; axis >= 0; --axis) {
      auto ax = static_cast<std::size_t>(axis);
      ++idx[ax];
      bi += bstr[ax];
      if (idx[ax] < as[ax]) break;
      bi -= bstr[ax] * static_cast<std::size_t>(as[ax]);
      idx[ax] = 0;
    }
  }
}

enum class EwOp { Add, Sub, Mul };

static Tensor ew(const Tensor& a, const Tensor& b, EwOp op, OpKind kind) {
  check_broadcast(a.shape(), b.shape());
  const bool same = a.shape() == b.shape();
  Tensor out = result(a.shape(), taping({&a, &b}));
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  auto apply = [op](float x, float y) {
    switch (op) {
      case EwOp::Add: return x + y;
      case EwOp::Sub: return x - y;
      default: return x * y;
    }
  };
  if (same) {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = apply(pa[i], pb[i]);
  } else {
    for_each_broadcast(a.shape(), b.shape(),
                       [&](std::size_t ai, std::size_t bi) { po[ai] = apply(pa[ai], pb[bi]); });
  }
  if (out.tracked()) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl();
    Graph::active().record(kind, [ia, ib, io, op, same]() {
      const float* g = io->grad.data();
      const float* da = ia->data.data();
      const float* db = ib->data.data();
      const std::size_t n = io->data.size();
      if (ia->track) {
        float* ga = ia->grad.data();
        switch (op) {
          case EwOp::Add:
          case EwOp::Sub:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
            break;
          case EwOp::Mul:
            if (same) {
              for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * db[i];
            } else {
              for_each_broadcast(ia->shape, ib->shape, [&](std::size_t ai, std::size_t bi) {
                ga[ai] += g[ai] * db[bi];
              });
            }
            break;
        }
      }
      if (ib->track) {
        float* gb = ib->grad.data();
        const float sign = (op == EwOp::Sub) ? -1.0f : 1.0f;
        if (same) {
          switch (op) {
            case EwOp::Add:
            case EwOp::Sub:
              for (std::size_t i = 0; i < n; ++i) gb[i] += sign * g[i];
              break;
            case EwOp::Mul:
              for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * da[i];
              break;
          }
        } else {
          for_each_broadcast(ia->shape, ib->shape, [&](std::size_t ai, std::size_t bi) {
            gb[bi] += (op == EwOp::Mul) ? g[ai] * da[ai] : sign * g[ai];
          });
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return ew(a, b, EwOp::Add, OpKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return ew(a, b, EwOp::Sub, OpKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return ew(a, b, EwOp::Mul, OpKind::Mul); }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul expects 2-D, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = result({n, m}, taping({&a, &b}));
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const float v = pa[i * k + kk];
      const float* br = pb + static_cast<std::size_t>(kk) * m;
      float* orow = po + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += v * br[j];
    }
  if (out.tracked()) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl();
    Graph::active().record(OpKind::MatMul, [ia, ib, io, n, k, m]() {
      const float* g = io->grad.data();
      if (ia->track) {
        float* ga = ia->grad.data();
        const float* db = ib->data.data();
        for (int i = 0; i < n; ++i)
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const float* grow = g + static_cast<std::size_t>(i) * m;
            const float* brow = db + static_cast<std::size_t>(kk) * m;
            for (int j = 0; j < m; ++j) acc += static_cast<double>(grow[j]) * brow[j];
            ga[i * k + kk] += static_cast<float>(acc);
          }
      }
      if (ib->track) {
        float* gb = ib->grad.data();
        const float* da = ia->data.data();
        for (int i = 0; i < n; ++i) {
          const float* grow = g + static_cast<std::size_t>(i) * m;
          for (int kk = 0; kk < k; ++kk) {
            const float v = da[i * k + kk];
            float* brow = gb + static_cast<std::size_t>(kk) * m;
            for (int j = 0; j < m; ++j) brow[j] += v * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose2d expects 2-D, got " + shape_str(x.shape()));
  const int n = x.dim(0), m = x.dim(1);
  Tensor out = result({m, n}, taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) po[j * n + i] = px[i * m + j];
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::Transpose2d, [ix, io, n, m]() {
      if (!ix->track) return;
      const float* g = io->grad.data();
      float* gx = ix->grad.data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape s) {
  check_shape(s);
  if (numel(s) != x.size())
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(s) +
                         " changes element count");
  Tensor out = result(std::move(s), taping({&x}));
  std::memcpy(out.data(), x.data(), x.size() * sizeof(float));
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::Reshape, [ix, io]() {
      if (!ix->track) return;
      const std::size_t n = io->data.size();
      for (std::size_t i = 0; i < n; ++i) ix->grad[i] += io->grad[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ParameterError("concat of zero parts");
  const Shape& s0 = parts[0].shape();
  const int r = parts[0].rank();
  if (axis < 0 || axis >= r) throw DimensionError("concat axis out of range");
  int cat = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw DimensionError("concat rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != s0[static_cast<std::size_t>(i)])
        throw DimensionError("concat extent mismatch off the concat axis");
    cat += p.dim(axis);
  }
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = cat;
  std::size_t outer = 1, tail = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < r; ++i) tail *= static_cast<std::size_t>(s0[static_cast<std::size_t>(i)]);

  std::vector<const Tensor*> ins;
  for (const Tensor& p : parts) ins.push_back(&p);
  bool track = false;
  if (Graph::active().recording())
    for (const Tensor& p : parts) track = track || p.tracked();
  Tensor out = result(os, track);

  const std::size_t row = static_cast<std::size_t>(cat) * tail;
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t pr = static_cast<std::size_t>(p.dim(axis)) * tail;
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * row + col, p.data() + o * pr, pr * sizeof(float));
    col += pr;
  }
  if (out.tracked()) {
    std::vector<std::shared_ptr<TensorImpl>> imps;
    for (const Tensor& p : parts) imps.push_back(p.impl());
    auto io = out.impl();
    Graph::active().record(OpKind::Concat, [imps, io, outer, tail, row, axis]() {
      std::size_t col = 0;
      for (const auto& ip : imps) {
        const std::size_t pr =
            static_cast<std::size_t>(ip->shape[static_cast<std::size_t>(axis)]) * tail;
        if (ip->track) {
          for (std::size_t o = 0; o < outer; ++o) {
            const float* g = io->grad.data() + o * row + col;
            float* gp = ip->grad.data() + o * pr;
            for (std::size_t i = 0; i < pr; ++i) gp[i] += g[i];
          }
        }
        col += pr;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  if (x.rank() != 2) throw DimensionError("gather_rows expects 2-D, got " + shape_str(x.shape()));
  if (idx.empty()) throw ParameterError("gather_rows with no indices");
  const int n = x.dim(0), m = x.dim(1);
  for (int i : idx)
    if (i < 0 || i >= n) throw DimensionError("gather_rows index out of range");
  Tensor out = result({static_cast<int>(idx.size()), m}, taping({&x}));
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * static_cast<std::size_t>(m),
                x.data() + static_cast<std::size_t>(idx[r]) * m,
                static_cast<std::size_t>(m) * sizeof(float));
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    auto rows = idx;
    Graph::active().record(OpKind::GatherRows, [ix, io, rows, m]() {
      if (!ix->track) return;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const float* g = io->grad.data() + r * static_cast<std::size_t>(m);
        float* gx = ix->grad.data() + static_cast<std::size_t>(rows[r]) * m;
        for (int j = 0; j < m; ++j) gx[j] += g[j];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float c) {
  Tensor out = result(x.shape(), taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = c * px[i];
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::Scale, [ix, io, c]() {
      if (!ix->track) return;
      const std::size_t n = io->data.size();
      for (std::size_t i = 0; i < n; ++i) ix->grad[i] += c * io->grad[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = result({1}, taping({&x}));
  double acc = 0.0;
  const float* px = x.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) acc += px[i];
  out.data()[0] = static_cast<float>(acc);
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::SumAll, [ix, io]() {
      if (!ix->track) return;
      const float g = io->grad[0];
      for (float& v : ix->grad) v += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv3d, stride 1, zero padding. Loop order puts the innermost runs
// contiguous in both input and output so -O3 can vectorize them.

Tensor conv3d(const Tensor& x, const Tensor& kernels, std::array<int, 3> pad) {
  if (x.rank() != 4) throw DimensionError("conv3d input must be CxTxHxW, got " + shape_str(x.shape()));
  if (kernels.rank() != 5)
    throw DimensionError("conv3d kernels must be rank 5, got " + shape_str(kernels.shape()));
  if (kernels.dim(1) != x.dim(0))
    throw DimensionError("conv3d channel mismatch: input " + shape_str(x.shape()) +
                         ", kernels " + shape_str(kernels.shape()));
  for (int p : pad)
    if (p < 0) throw ParameterError("conv3d negative padding");
  const int Ci = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = kernels.dim(0), kt = kernels.dim(2), kh = kernels.dim(3), kw = kernels.dim(4);
  const int pt = pad[0], ph = pad[1], pw = pad[2];
  const int To = T + 2 * pt - kt + 1;
  const int Ho = H + 2 * ph - kh + 1;
  const int Wo = W + 2 * pw - kw + 1;
  if (To < 1 || Ho < 1 || Wo < 1)
    throw DimensionError("conv3d kernel larger than padded input");

  Tensor out = result({Co, To, Ho, Wo}, taping({&x, &kernels}));
  const float* px = x.data();
  const float* pk = kernels.data();
  float* po = out.data();

  auto region = [](int p, int k, int in, int out_extent, int& lo, int& hi) {
    lo = std::max(0, p - k);
    hi = std::min(out_extent - 1, in - 1 + p - k);
  };

  for (int co = 0; co < Co; ++co)
    for (int ci = 0; ci < Ci; ++ci)
      for (int it = 0; it < kt; ++it)
        for (int ih = 0; ih < kh; ++ih)
          for (int iw = 0; iw < kw; ++iw) {
            const float w =
                pk[(((static_cast<std::size_t>(co) * Ci + ci) * kt + it) * kh + ih) * kw + iw];
            if (w == 0.0f) continue;
            int tlo, thi, hlo, hhi, wlo, whi;
            region(pt, it, T, To, tlo, thi);
            region(ph, ih, H, Ho, hlo, hhi);
            region(pw, iw, W, Wo, wlo, whi);
            if (wlo > whi) continue;
            for (int to = tlo; to <= thi; ++to) {
              const int ti = to - pt + it;
              for (int ho = hlo; ho <= hhi; ++ho) {
                const int hin = ho - ph + ih;
                const float* xp = px + ((static_cast<std::size_t>(ci) * T + ti) * H + hin) * W +
                                  (wlo - pw + iw);
                float* op = po + ((static_cast<std::size_t>(co) * To + to) * Ho + ho) * Wo + wlo;
                for (int woi = wlo; woi <= whi; ++woi) *op++ += w * *xp++;
              }
            }
          }

  if (out.tracked()) {
    auto ix = x.impl(), ik = kernels.impl(), io = out.impl();
    Graph::active().record(OpKind::Conv3d, [ix, ik, io, Ci, T, H, W, Co, kt, kh, kw, pt, ph, pw,
                                            To, Ho, Wo, region]() {
      const float* px = ix->data.data();
      const float* pk = ik->data.data();
      const float* g = io->grad.data();
      float* gx = ix->track ? ix->grad.data() : nullptr;
      float* gk = ik->track ? ik->grad.data() : nullptr;
      for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
          for (int it = 0; it < kt; ++it)
            for (int ih = 0; ih < kh; ++ih)
              for (int iw = 0; iw < kw; ++iw) {
                const std::size_t kidx =
                    (((static_cast<std::size_t>(co) * Ci + ci) * kt + it) * kh + ih) * kw + iw;
                const float w = pk[kidx];
                int tlo, thi, hlo, hhi, wlo, whi;
                region(pt, it, T, To, tlo, thi);
                region(ph, ih, H, Ho, hlo, hhi);
                region(pw, iw, W, Wo, wlo, whi);
                if (wlo > whi) continue;
                double acc = 0.0;
                for (int to = tlo; to <= thi; ++to) {
                  const int ti = to - pt + it;
                  for (int ho = hlo; ho <= hhi; ++ho) {
                    const int hin = ho - ph + ih;
                    const std::size_t xoff =
                        ((static_cast<std::size_t>(ci) * T + ti) * H + hin) * W + (wlo - pw + iw);
                    const std::size_t ooff =
                        ((static_cast<std::size_t>(co) * To + to) * Ho + ho) * Wo + wlo;
                    const float* gp = g + ooff;
                    if (gx) {
                      float* xg = gx + xoff;
                      for (int i = 0; i <= whi - wlo; ++i) xg[i] += w * gp[i];
                    }
                    if (gk) {
                      const float* xp = px + xoff;
                      for (int i = 0; i <= whi - wlo; ++i)
                        acc += static_cast<double>(xp[i]) * gp[i];
                    }
                  }
                }
                if (gk) gk[kidx] += static_cast<float>(acc);
              }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor maxpool3d(const Tensor& x, std::array<int, 3> window, std::array<int, 3> stride,
                 std::array<int, 3> pad) {
  if (x.rank() != 4) throw DimensionError("maxpool3d input must be CxTxHxW");
  for (int i = 0; i < 3; ++i) {
    if (window[static_cast<std::size_t>(i)] < 1 || stride[static_cast<std::size_t>(i)] < 1)
      throw ParameterError("maxpool3d window and stride must be positive");
    if (pad[static_cast<std::size_t>(i)] < 0 ||
        pad[static_cast<std::size_t>(i)] >= window[static_cast<std::size_t>(i)])
      throw ParameterError("maxpool3d pad must sit inside the window");
  }
  const int C = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int in[3] = {T, H, W};
  int od[3];
  for (int i = 0; i < 3; ++i) {
    const int span = in[i] + 2 * pad[static_cast<std::size_t>(i)] - window[static_cast<std::size_t>(i)];
    if (span < 0) throw DimensionError("maxpool3d window larger than padded input");
    od[i] = span / stride[static_cast<std::size_t>(i)] + 1;
  }
  Tensor out = result({C, od[0], od[1], od[2]}, taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());

  std::size_t o = 0;
  for (int c = 0; c < C; ++c)
    for (int to = 0; to < od[0]; ++to)
      for (int ho = 0; ho < od[1]; ++ho)
        for (int wo = 0; wo < od[2]; ++wo, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t bidx = 0;
          for (int dt = 0; dt < window[0]; ++dt) {
            const int t = to * stride[0] - pad[0] + dt;
            if (t < 0 || t >= T) continue;
            for (int dh = 0; dh < window[1]; ++dh) {
              const int h = ho * stride[1] - pad[1] + dh;
              if (h < 0 || h >= H) continue;
              for (int dw = 0; dw < window[2]; ++dw) {
                const int w = wo * stride[2] - pad[2] + dw;
                if (w < 0 || w >= W) continue;
                const std::size_t xi = ((static_cast<std::size_t>(c) * T + t) * H + h) * W + w;
                if (px[xi] > best) {  // strict: ties keep the lowest linear index
                  best = px[xi];
                  bidx = xi;
                }
              }
            }
          }
          po[o] = best;
          (*arg)[o] = bidx;
        }

  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::MaxPool3d, [ix, io, arg]() {
      if (!ix->track) return;
      const std::size_t n = io->data.size();
      for (std::size_t i = 0; i < n; ++i) ix->grad[(*arg)[i]] += io->grad[i];
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x, const std::vector<int>& axes) {
  if (axes.empty()) throw ParameterError("global_avg_pool needs at least one axis");
  Shape os = x.shape();
  std::size_t count = 1;
  std::vector<bool> seen(static_cast<std::size_t>(x.rank()), false);
  for (int a : axes) {
    if (a < 0 || a >= x.rank()) throw DimensionError("global_avg_pool axis out of range");
    if (seen[static_cast<std::size_t>(a)]) throw ParameterError("global_avg_pool repeated axis");
    seen[static_cast<std::size_t>(a)] = true;
    count *= static_cast<std::size_t>(os[static_cast<std::size_t>(a)]);
    os[static_cast<std::size_t>(a)] = 1;
  }
  Tensor out = result(os, taping({&x}));
  std::vector<double> acc(out.size(), 0.0);
  const float* px = x.data();
  for_each_broadcast(x.shape(), os,
                     [&](std::size_t ai, std::size_t bi) { acc[bi] += px[ai]; });
  float* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    po[i] = static_cast<float>(acc[i] / static_cast<double>(count));
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    const float inv = 1.0f / static_cast<float>(count);
    Graph::active().record(OpKind::GlobalAvgPool, [ix, io, inv]() {
      if (!ix->track) return;
      float* gx = ix->grad.data();
      const float* g = io->grad.data();
      for_each_broadcast(ix->shape, io->shape,
                         [&](std::size_t ai, std::size_t bi) { gx[ai] += inv * g[bi]; });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

static constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
static constexpr float kGeluA = 0.044715f;

Tensor gelu(const Tensor& x) {
  Tensor out = result(x.shape(), taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const float v = px[i];
    const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    po[i] = 0.5f * v * (1.0f + t);
  }
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::Gelu, [ix, io]() {
      if (!ix->track) return;
      const float* px = ix->data.data();
      const float* g = io->grad.data();
      float* gx = ix->grad.data();
      const std::size_t n = ix->data.size();
      for (std::size_t i = 0; i < n; ++i) {
        const float v = px[i];
        const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const float d = 0.5f * (1.0f + t) +
                        0.5f * v * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
        gx[i] += d * g[i];
      }
    });
  }
  return out;
}

static float stable_sigmoid(float v) {
  if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
  const float e = std::exp(v);
  return e / (1.0f + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = result(x.shape(), taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = stable_sigmoid(px[i]);
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::Sigmoid, [ix, io]() {
      if (!ix->track) return;
      const float* s = io->data.data();
      const float* g = io->grad.data();
      float* gx = ix->grad.data();
      const std::size_t n = ix->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += s[i] * (1.0f - s[i]) * g[i];
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_lastdim on rank-0 tensor");
  const int d = x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  Tensor out = result(x.shape(), taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * static_cast<std::size_t>(d);
    float* orow = po + r * static_cast<std::size_t>(d);
    float mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      sum += orow[j];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int j = 0; j < d; ++j) orow[j] *= inv;
  }
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::Softmax, [ix, io, d, rows]() {
      if (!ix->track) return;
      const float* s = io->data.data();
      const float* g = io->grad.data();
      float* gx = ix->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* sr = s + r * static_cast<std::size_t>(d);
        const float* gr = g + r * static_cast<std::size_t>(d);
        float* gxr = gx + r * static_cast<std::size_t>(d);
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += static_cast<double>(gr[j]) * sr[j];
        for (int j = 0; j < d; ++j)
          gxr[j] += sr[j] * (gr[j] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

// masked entries get -1e30 so exp(v - rowmax) underflows to exactly zero
static constexpr float kMaskedScore = -1e30f;

Tensor topk_mask_rows(const Tensor& x, int k) {
  if (x.rank() != 2) throw DimensionError("topk_mask_rows expects 2-D");
  if (k < 1) throw ParameterError("topk_mask_rows k must be positive");
  const int n = x.dim(0), m = x.dim(1);
  Tensor out = result(x.shape(), taping({&x}));
  const float* px = x.data();
  float* po = out.data();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(x.size(), 0);
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int r = 0; r < n; ++r) {
    const float* xr = px + static_cast<std::size_t>(r) * m;
    std::iota(order.begin(), order.end(), 0);
    const int kk = std::min(k, m);
    std::partial_sort(order.begin(), order.begin() + kk, order.end(), [&](int a, int b) {
      if (xr[a] != xr[b]) return xr[a] > xr[b];
      return a < b;  // ties keep the lower column
    });
    float* orow = po + static_cast<std::size_t>(r) * m;
    for (int j = 0; j < m; ++j) orow[j] = kMaskedScore;
    for (int i = 0; i < kk; ++i) {
      orow[order[static_cast<std::size_t>(i)]] = xr[order[static_cast<std::size_t>(i)]];
      (*keep)[static_cast<std::size_t>(r) * m + static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    }
  }
  if (out.tracked()) {
    auto ix = x.impl();
    auto io = out.impl();
    Graph::active().record(OpKind::TopkMask, [ix, io, keep]() {
      if (!ix->track) return;
      const std::size_t n = ix->data.size();
      for (std::size_t i = 0; i < n; ++i)
        if ((*keep)[i]) ix->grad[i] += io->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm on rank-0 tensor");
  const int d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
    throw DimensionError("layer_norm gain/bias must be rank-1 of the last extent");
  if (eps <= 0.0f) throw ParameterError("layer_norm eps must be positive");
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  Tensor out = result(x.shape(), taping({&x, &gain, &bias}));
  const float* px = x.data();
  const float* pg = gain.data();
  const float* pb = bias.data();
  float* po = out.data();
  auto mu = std::make_shared<std::vector<float>>(rows);
  auto inv = std::make_shared<std::vector<float>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * static_cast<std::size_t>(d);
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xr[j];
    m /= d;
    double v = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - m;
      v += c * c;
    }
    v /= d;
    (*mu)[r] = static_cast<float>(m);
    (*inv)[r] = static_cast<float>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    float* orow = po + r * static_cast<std::size_t>(d);
    for (int j = 0; j < d; ++j)
      orow[j] = (xr[j] - (*mu)[r]) * (*inv)[r] * pg[j] + pb[j];
  }
  if (out.tracked()) {
    auto ix = x.impl(), ig = gain.impl(), ib = bias.impl(), io = out.impl();
    Graph::active().record(OpKind::LayerNorm, [ix, ig, ib, io, mu, inv, d, rows]() {
      const float* px = ix->data.data();
      const float* pg = ig->data.data();
      const float* g = io->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = px + r * static_cast<std::size_t>(d);
        const float* gr = g + r * static_cast<std::size_t>(d);
        const float m = (*mu)[r], iv = (*inv)[r];
        if (ig->track || ib->track) {
          for (int j = 0; j < d; ++j) {
            if (ig->track) ig->grad[static_cast<std::size_t>(j)] += gr[j] * (xr[j] - m) * iv;
            if (ib->track) ib->grad[static_cast<std::size_t>(j)] += gr[j];
          }
        }
        if (ix->track) {
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < d; ++j) {
            const float gh = gr[j] * pg[j];
            const float xh = (xr[j] - m) * iv;
            s1 += gh;
            s2 += static_cast<double>(gh) * xh;
          }
          const float m1 = static_cast<float>(s1 / d);
          const float m2 = static_cast<float>(s2 / d);
          float* gxr = ix->grad.data() + r * static_cast<std::size_t>(d);
          for (int j = 0; j < d; ++j) {
            const float gh = gr[j] * pg[j];
            const float xh = (xr[j] - m) * iv;
            gxr[j] += iv * (gh - m1 - xh * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses (batch mean)

Tensor loss_cross_entropy(const Tensor& logits, const std::vector<int>& classes) {
  if (logits.rank() != 2) throw DimensionError("cross entropy expects NxC logits");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(classes.size()) != n)
    throw DimensionError("cross entropy needs one class index per row");
  for (int y : classes)
    if (y < 0 || y >= c) throw DimensionError("class index out of range");
  Tensor out = result({1}, taping({&logits}));
  const float* px = logits.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* xr = px + static_cast<std::size_t>(i) * c;
    float mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(xr[j]) - mx);
    total += mx + std::log(sum) - xr[classes[static_cast<std::size_t>(i)]];
  }
  out.data()[0] = static_cast<float>(total / n);
  if (out.tracked()) {
    auto ix = logits.impl();
    auto io = out.impl();
    auto ys = classes;
    Graph::active().record(OpKind::CrossEntropy, [ix, io, ys, n, c]() {
      if (!ix->track) return;
      const float g = io->grad[0] / static_cast<float>(n);
      const float* px = ix->data.data();
      float* gx = ix->grad.data();
      for (int i = 0; i < n; ++i) {
        const float* xr = px + static_cast<std::size_t>(i) * c;
        float* gr = gx + static_cast<std::size_t>(i) * c;
        float mx = xr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(xr[j]) - mx);
        for (int j = 0; j < c; ++j) {
          const float p = static_cast<float>(std::exp(static_cast<double>(xr[j]) - mx) / sum);
          gr[j] += g * (p - (j == ys[static_cast<std::size_t>(i)] ? 1.0f : 0.0f));
        }
      }
    });
  }
  return out;
}

static constexpr float kProbEps = 1e-7f;

Tensor loss_bce(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape())
    throw DimensionError("bce shape mismatch " + shape_str(probs.shape()) + " vs " +
                         shape_str(targets.shape()));
  const float* pp = probs.data();
  const float* pt = targets.data();
  const std::size_t n = probs.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (pp[i] < 0.0f || pp[i] > 1.0f) throw std::domain_error("bce probability out of range");
    if (pt[i] < 0.0f || pt[i] > 1.0f) throw std::domain_error("bce target out of range");
  }
  Tensor out = result({1}, taping({&probs, &targets}));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pp[i], kProbEps, 1.0f - kProbEps);
    total += -pt[i] * std::log(p) - (1.0 - pt[i]) * std::log(1.0 - p);
  }
  out.data()[0] = static_cast<float>(total / static_cast<double>(n));
  if (out.tracked()) {
    auto ip = probs.impl(), it = targets.impl(), io = out.impl();
    Graph::active().record(OpKind::Bce, [ip, it, io]() {
      const std::size_t n = ip->data.size();
      const float g = io->grad[0] / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const float p = std::clamp(ip->data[i], kProbEps, 1.0f - kProbEps);
        const float t = it->data[i];
        if (ip->track) ip->grad[i] += g * ((1.0f - t) / (1.0f - p) - t / p);
        if (it->track) it->grad[i] += g * (std::log(1.0f - p) - std::log(p));
      }
    });
  }
  return out;
}

Tensor loss_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mse shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor out = result({1}, taping({&a, &b}));
  const float* pa = a.data();
  const float* pb = b.data();
  const std::size_t n = a.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    total += d * d;
  }
  out.data()[0] = static_cast<float>(total / static_cast<double>(n));
  if (out.tracked()) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl();
    Graph::active().record(OpKind::Mse, [ia, ib, io]() {
      const std::size_t n = ia->data.size();
      const float g = 2.0f * io->grad[0] / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const float d = ia->data[i] - ib->data[i];
        if (ia->track) ia->grad[i] += g * d;
        if (ib->track) ib->grad[i] -= g * d;
      }
    });
  }
  return out;
}

Tensor loss_kl(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape())
    throw DimensionError("kl shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
  if (p.rank() < 1) throw DimensionError("kl on rank-0 tensor");
  const int d = p.dim(p.rank() - 1);
  const std::size_t rows = p.size() / static_cast<std::size_t>(d);
  const float* pp = p.data();
  const float* pq = q.data();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (pp[i] < 0.0f || pq[i] < 0.0f) throw std::domain_error("kl inputs must be probabilities");
  Tensor out = result({1}, taping({&p, &q}));
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (pp[i] <= 0.0f) continue;  // 0 log 0 = 0
    const double qq = std::max(pq[i], kProbEps);
    total += static_cast<double>(pp[i]) * (std::log(static_cast<double>(pp[i])) - std::log(qq));
  }
  out.data()[0] = static_cast<float>(total / static_cast<double>(rows));
  if (out.tracked()) {
    auto ip = p.impl(), iq = q.impl(), io = out.impl();
    Graph::active().record(OpKind::KlDiv, [ip, iq, io, rows]() {
      const std::size_t n = ip->data.size();
      const float g = io->grad[0] / static_cast<float>(rows);
      for (std::size_t i = 0; i < n; ++i) {
        const float pv = ip->data[i];
        const float qv = std::max(iq->data[i], kProbEps);
        if (iq->track && pv > 0.0f) iq->grad[i] -= g * pv / qv;
        if (ip->track) {
          const float pc = std::max(pv, kProbEps);
          ip->grad[i] += g * (std::log(pc) - std::log(qv) + 1.0f);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor& x, double h) {
  if (!x.tracked()) throw ParameterError("grad_check input must be tracked");
  if (h <= 0.0) throw ParameterError("grad_check step must be positive");
  x.zero_grad();
  Tensor y = f(x);
  if (y.size() != 1) throw DimensionError("grad_check function must return a scalar");
  backward(y);
  std::vector<float> analytic = x.grad();

  NoGradGuard ng;
  double worst = 0.0;
  float* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float saved = px[i];
    px[i] = static_cast<float>(saved + h);
    const double fp = f(x).item();
    px[i] = static_cast<float>(saved - h);
    const double fm = f(x).item();
    px[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                       std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double cosine_value(int step, int total, double start, double end) {
  if (total <= 0) throw ParameterError("cosine_value total must be positive");
  if (step < 0 || step > total) throw ParameterError("cosine_value step out of range");
  const double phase = 3.14159265358979323846 * static_cast<double>(step) / total;
  return start + (end - start) * (1.0 - std::cos(phase)) / 2.0;
}

}  // namespace drst
