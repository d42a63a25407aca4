#pragma once

// Dense double tensors with a reverse-mode gradient tape, plus the handful
// of neural building blocks the landscape analyzer and Q-network need.
// Tensors are tiny here (hidden dim 16), so everything is double precision
// and the matmul kernel maps onto Eigen for the inner product only; the
// tape, broadcasting and all other ops are self-contained.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "metasaea/common.hpp"

namespace metasaea {

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized on demand, same length as value
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << shape[i] << (i + 1 < shape.size() ? "," : "");
  os << "]";
  return os.str();
}

}  // namespace detail

/// Disables tape recording for the current thread while alive. Forward
/// values are unchanged; only gradient bookkeeping is skipped.
class NoGrad {
 public:
  NoGrad() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGrad() { detail::grad_mode() = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (detail::shape_numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + detail::shape_str(shape));
    for (int s : shape)
      if (s <= 0) throw DimensionError("tensor shape must be positive: " + detail::shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<detail::TensorNode>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(const std::vector<int>& shape, double v, bool requires_grad = false) {
    return from(shape, std::vector<double>(detail::shape_numel(shape), v), requires_grad);
  }

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false) {
    return full(shape, 0.0, requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(const std::vector<int>& shape, double stddev, Rng& rng,
                      bool requires_grad = false) {
    std::vector<double> d(detail::shape_numel(shape));
    for (double& x : d) x = stddev * rng.normal();
    return from(shape, std::move(d), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  std::size_t numel() const { return n_->numel(); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& value() const { return n_->value; }
  std::vector<double>& mutable_value() { return n_->value; }
  const std::vector<double>& grad() const { return n_->grad; }
  std::vector<double>& mutable_grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  bool has_grad() const { return !n_->grad.empty(); }

  double item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + detail::shape_str(shape()));
    return n_->value[0];
  }

  /// A detached copy sharing nothing with the original.
  Tensor clone() const {
    return from(n_->shape, n_->value, n_->requires_grad);
  }

  void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

  detail::TensorNode* node() const { return n_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return n_; }

  friend Tensor make_op(std::vector<int> shape, std::vector<double> value,
                        std::vector<Tensor> inputs,
                        std::function<void()> (*)(void));

  static Tensor op_result(std::vector<int> shape, std::vector<double> value,
                          const std::vector<Tensor>& inputs) {
    Tensor t = from(std::move(shape), std::move(value));
    bool rg = false;
    if (detail::grad_mode())
      for (const Tensor& in : inputs) rg = rg || in.requires_grad();
    if (rg) {
      t.n_->requires_grad = true;
      t.n_->leaf = false;
      for (const Tensor& in : inputs) t.n_->parents.push_back(in.n_);
    }
    return t;
  }

  void set_backprop(std::function<void()> fn) { n_->backprop = std::move(fn); }

 private:
  std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

inline void topo_collect(TensorNode* root, std::vector<TensorNode*>& order) {
  // iterative post-order DFS; parent vectors give a deterministic order
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Accumulates into the grad buffer
/// of every reachable requires_grad tensor, then consumes the tape: the
/// visited graph edges are released and cannot be replayed.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward expects a scalar loss, got shape " +
                        detail::shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<detail::TensorNode*> order;
  detail::topo_collect(loss.node(), order);
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop) n->backprop();
  }
  for (detail::TensorNode* n : order) {
    if (!n->leaf) {
      n->backprop = nullptr;
      n->parents.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise ops (with suffix broadcasting: the smaller operand's shape must
// equal a trailing slice of the larger one's, or be a scalar)

namespace detail {

enum class BroadcastKind { kSame, kSuffix, kScalarB };

inline BroadcastKind broadcast_kind(const std::vector<int>& a, const std::vector<int>& b) {
  if (a == b) return BroadcastKind::kSame;
  if (shape_numel(b) == 1) return BroadcastKind::kScalarB;
  if (b.size() < a.size() &&
      std::equal(b.begin(), b.end(), a.end() - static_cast<long>(b.size())))
    return BroadcastKind::kSuffix;
  throw DimensionError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

namespace detail {

template <class Fwd, class BwdA, class BwdB>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  auto kind = broadcast_kind(a.shape(), b.shape());
  const std::size_t n = a.numel();
  const std::size_t bn = b.numel();
  std::vector<double> out(n);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (kind == BroadcastKind::kSame) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  } else if (kind == BroadcastKind::kScalarB) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[0]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % bn]);
  }
  Tensor r = Tensor::op_result(a.shape(), std::move(out), {a, b});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    auto bn_ = b.handle();
    r.set_backprop([rn, an, bn_, kind, bwd_a, bwd_b]() {
      const std::size_t n = rn->numel();
      const std::size_t bcount = bn_->numel();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t bi = kind == BroadcastKind::kSame ? i
                           : kind == BroadcastKind::kScalarB ? 0
                                                             : i % bcount;
          an->grad[i] += bwd_a(rn->grad[i], an->value[i], bn_->value[bi]);
        }
      }
      if (bn_->requires_grad) {
        bn_->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t bi = kind == BroadcastKind::kSame ? i
                           : kind == BroadcastKind::kScalarB ? 0
                                                             : i % bcount;
          bn_->grad[bi] += bwd_b(rn->grad[i], an->value[i], bn_->value[bi]);
        }
      }
    });
  }
  return r;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(
      a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scalar_mul(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a.value()[i] * c;
  Tensor r = Tensor::op_result(a.shape(), std::move(out), {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an, c]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->numel(); ++i) an->grad[i] += c * rn->grad[i];
    });
  }
  return r;
}

inline Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double x = a.value()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  Tensor r = Tensor::op_result(a.shape(), std::move(out), {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an, inv_sqrt2]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
      for (std::size_t i = 0; i < rn->numel(); ++i) {
        double x = an->value[i];
        double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        an->grad[i] += d * rn->grad[i];
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// matmul: a [..., p, q] x b [..., q, r]; leading batch dims broadcast where
// equal, 1, or absent

namespace detail {

struct MatmulPlan {
  std::vector<int> out_shape;
  std::size_t batches = 1;
  int p = 0, q = 0, r = 0;
  std::vector<std::size_t> a_off, b_off;  // per-batch element offsets
};

inline MatmulPlan matmul_plan(const std::vector<int>& as, const std::vector<int>& bs) {
  if (as.size() < 2 || bs.size() < 2)
    throw DimensionError("matmul needs >=2-d operands: " + shape_str(as) + " x " + shape_str(bs));
  MatmulPlan pl;
  pl.p = as[as.size() - 2];
  pl.q = as[as.size() - 1];
  int bq = bs[bs.size() - 2];
  pl.r = bs[bs.size() - 1];
  if (pl.q != bq)
    throw DimensionError("matmul inner dimension mismatch: " + shape_str(as) + " x " + shape_str(bs));
  std::size_t abatch_nd = as.size() - 2, bbatch_nd = bs.size() - 2;
  std::size_t nd = std::max(abatch_nd, bbatch_nd);
  std::vector<int> batch(nd), adim(nd, 1), bdim(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    if (i < nd - abatch_nd)
      adim[i] = 1;
    else
      adim[i] = as[i - (nd - abatch_nd)];
    if (i < nd - bbatch_nd)
      bdim[i] = 1;
    else
      bdim[i] = bs[i - (nd - bbatch_nd)];
    if (adim[i] != bdim[i] && adim[i] != 1 && bdim[i] != 1)
      throw DimensionError("matmul batch dims not broadcastable: " + shape_str(as) +
                           " x " + shape_str(bs));
    batch[i] = std::max(adim[i], bdim[i]);
    pl.batches *= static_cast<std::size_t>(batch[i]);
  }
  pl.out_shape = batch;
  pl.out_shape.push_back(pl.p);
  pl.out_shape.push_back(pl.r);
  // per-batch offsets with stride 0 on broadcast axes
  std::vector<std::size_t> astr(nd, 0), bstr(nd, 0);
  std::size_t acc = static_cast<std::size_t>(pl.p) * pl.q;
  for (std::size_t i = nd; i-- > 0;) {
    astr[i] = (adim[i] == 1) ? 0 : acc;
    acc *= static_cast<std::size_t>(adim[i]);
  }
  acc = static_cast<std::size_t>(pl.q) * pl.r;
  for (std::size_t i = nd; i-- > 0;) {
    bstr[i] = (bdim[i] == 1) ? 0 : acc;
    acc *= static_cast<std::size_t>(bdim[i]);
  }
  pl.a_off.resize(pl.batches);
  pl.b_off.resize(pl.batches);
  std::vector<int> idx(nd, 0);
  for (std::size_t k = 0; k < pl.batches; ++k) {
    std::size_t ao = 0, bo = 0;
    for (std::size_t i = 0; i < nd; ++i) {
      ao += static_cast<std::size_t>(idx[i]) * astr[i];
      bo += static_cast<std::size_t>(idx[i]) * bstr[i];
    }
    pl.a_off[k] = ao;
    pl.b_off[k] = bo;
    for (std::size_t i = nd; i-- > 0;) {
      if (++idx[i] < batch[i]) break;
      idx[i] = 0;
    }
  }
  return pl;
}

using EigenRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<EigenRM>;
using CMapRM = Eigen::Map<const EigenRM>;

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  // fast path: a 2-d rhs multiplies every batch of a identically, so the
  // leading dims of a fold into the row dimension and one GEMM covers all
  if (b.shape().size() == 2 && a.shape().size() >= 2) {
    const auto& as = a.shape();
    const int q = as[as.size() - 1], r = b.shape()[1];
    if (q != b.shape()[0])
      throw DimensionError("matmul inner dimension mismatch: " + detail::shape_str(as) +
                           " x " + detail::shape_str(b.shape()));
    const std::size_t rows = a.numel() / static_cast<std::size_t>(q);
    std::vector<double> out(rows * static_cast<std::size_t>(r));
    {
      detail::CMapRM A(a.value().data(), rows, q);
      detail::CMapRM B(b.value().data(), q, r);
      detail::MapRM C(out.data(), rows, r);
      C.noalias() = A * B;
    }
    std::vector<int> out_shape = as;
    out_shape.back() = r;
    Tensor res = Tensor::op_result(out_shape, std::move(out), {a, b});
    if (res.requires_grad()) {
      auto* rn = res.node();
      auto an = a.handle();
      auto bn = b.handle();
      res.set_backprop([rn, an, bn, rows, q, r]() {
        detail::CMapRM G(rn->grad.data(), rows, r);
        if (an->requires_grad) {
          an->ensure_grad();
          detail::CMapRM B(bn->value.data(), q, r);
          detail::MapRM dA(an->grad.data(), rows, q);
          dA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::CMapRM A(an->value.data(), rows, q);
          detail::MapRM dB(bn->grad.data(), q, r);
          dB.noalias() += A.transpose() * G;
        }
      });
    }
    return res;
  }
  auto pl = detail::matmul_plan(a.shape(), b.shape());
  std::vector<double> out(pl.batches * static_cast<std::size_t>(pl.p) * pl.r);
  const std::size_t o_step = static_cast<std::size_t>(pl.p) * pl.r;
  for (std::size_t k = 0; k < pl.batches; ++k) {
    detail::CMapRM A(a.value().data() + pl.a_off[k], pl.p, pl.q);
    detail::CMapRM B(b.value().data() + pl.b_off[k], pl.q, pl.r);
    detail::MapRM C(out.data() + k * o_step, pl.p, pl.r);
    C.noalias() = A * B;
  }
  Tensor r = Tensor::op_result(pl.out_shape, std::move(out), {a, b});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    auto bn = b.handle();
    r.set_backprop([rn, an, bn, pl, o_step]() {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t k = 0; k < pl.batches; ++k) {
        detail::CMapRM G(rn->grad.data() + k * o_step, pl.p, pl.r);
        if (an->requires_grad) {
          detail::CMapRM B(bn->value.data() + pl.b_off[k], pl.q, pl.r);
          detail::MapRM dA(an->grad.data() + pl.a_off[k], pl.p, pl.q);
          dA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          detail::CMapRM A(an->value.data() + pl.a_off[k], pl.p, pl.q);
          detail::MapRM dB(bn->grad.data() + pl.b_off[k], pl.q, pl.r);
          dB.noalias() += A.transpose() * G;
        }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// shape ops

namespace detail {

inline std::vector<std::size_t> row_major_strides(const std::vector<int>& shape) {
  std::vector<std::size_t> s(shape.size());
  std::size_t acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= static_cast<std::size_t>(shape[i]);
  }
  return s;
}

// mapping out flat index -> in flat index for a permutation of axes
inline std::vector<std::size_t> permute_map(const std::vector<int>& in_shape,
                                            const std::vector<int>& perm) {
  std::vector<int> out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
  auto in_str = row_major_strides(in_shape);
  auto out_str = row_major_strides(out_shape);
  std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t rem = o, ii = 0;
    for (std::size_t d = 0; d < perm.size(); ++d) {
      std::size_t c = rem / out_str[d];
      rem %= out_str[d];
      ii += c * in_str[static_cast<std::size_t>(perm[d])];
    }
    map[o] = ii;
  }
  return map;
}

}  // namespace detail

inline Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  if (perm.size() != a.shape().size())
    throw DimensionError("permute rank mismatch on " + detail::shape_str(a.shape()));
  auto map = detail::permute_map(a.shape(), perm);
  std::vector<int> out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out_shape[i] = a.shape()[static_cast<std::size_t>(perm[i])];
  std::vector<double> out(a.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = a.value()[map[o]];
  Tensor r = Tensor::op_result(std::move(out_shape), std::move(out), {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    auto m = std::make_shared<std::vector<std::size_t>>(std::move(map));
    r.set_backprop([rn, an, m]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t o = 0; o < rn->numel(); ++o) an->grad[(*m)[o]] += rn->grad[o];
    });
  }
  return r;
}

inline Tensor transpose_last2(const Tensor& a) {
  std::vector<int> perm(a.shape().size());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, perm);
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (detail::shape_numel(shape) != a.numel())
    throw DimensionError("reshape " + detail::shape_str(a.shape()) + " -> " +
                         detail::shape_str(shape) + " changes element count");
  Tensor r = Tensor::op_result(std::move(shape), a.value(), {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->numel(); ++i) an->grad[i] += rn->grad[i];
    });
  }
  return r;
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.ndim() != b.ndim()) throw DimensionError("concat rank mismatch");
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw DimensionError("concat shape mismatch: " + detail::shape_str(a.shape()) +
                           " vs " + detail::shape_str(b.shape()));
  std::vector<int> out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.dim(axis);
  std::size_t outer = 1, a_inner = 1, b_inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
  for (int i = axis; i < a.ndim(); ++i) {
    a_inner *= static_cast<std::size_t>(a.dim(i));
    b_inner *= static_cast<std::size_t>(b.dim(i));
  }
  std::vector<double> out(a.numel() + b.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().data() + o * a_inner, a_inner, out.data() + o * (a_inner + b_inner));
    std::copy_n(b.value().data() + o * b_inner, b_inner,
                out.data() + o * (a_inner + b_inner) + a_inner);
  }
  Tensor r = Tensor::op_result(std::move(out_shape), std::move(out), {a, b});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    auto bn = b.handle();
    r.set_backprop([rn, an, bn, outer, a_inner, b_inner]() {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = rn->grad.data() + o * (a_inner + b_inner);
        if (an->requires_grad)
          for (std::size_t i = 0; i < a_inner; ++i) an->grad[o * a_inner + i] += g[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < b_inner; ++i) bn->grad[o * b_inner + i] += g[a_inner + i];
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor mean_axis(const Tensor& a, int axis) {
  const auto& sh = a.shape();
  std::size_t outer = 1, inner = 1;
  const std::size_t n = static_cast<std::size_t>(sh[static_cast<std::size_t>(axis)]);
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(sh[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < sh.size(); ++i)
    inner *= static_cast<std::size_t>(sh[i]);
  std::vector<int> out_shape;
  for (std::size_t i = 0; i < sh.size(); ++i)
    if (i != static_cast<std::size_t>(axis)) out_shape.push_back(sh[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += a.value()[(o * n + k) * inner + i];
  for (double& x : out) x /= static_cast<double>(n);
  Tensor r = Tensor::op_result(std::move(out_shape), std::move(out), {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an, outer, inner, n]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i)
            an->grad[(o * n + k) * inner + i] += inv * rn->grad[o * inner + i];
    });
  }
  return r;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  Tensor r = Tensor::op_result({1}, {s}, {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < an->numel(); ++i) an->grad[i] += rn->grad[0];
    });
  }
  return r;
}

inline Tensor select(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.numel()) throw ContractError("select index out of range");
  Tensor r = Tensor::op_result({1}, {a.value()[flat_index]}, {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an, flat_index]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      an->grad[flat_index] += rn->grad[0];
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// softmax / layernorm over the last axis

inline Tensor softmax(const Tensor& a) {
  const std::size_t h = static_cast<std::size_t>(a.shape().back());
  const std::size_t rows = a.numel() / h;
  std::vector<double> out(a.numel());
  for (std::size_t rix = 0; rix < rows; ++rix) {
    const double* x = a.value().data() + rix * h;
    double* y = out.data() + rix * h;
    double mx = x[0];
    for (std::size_t i = 1; i < h; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < h; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < h; ++i) y[i] /= s;
  }
  Tensor r = Tensor::op_result(a.shape(), std::move(out), {a});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto an = a.handle();
    r.set_backprop([rn, an, h, rows]() {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t rix = 0; rix < rows; ++rix) {
        const double* y = rn->value.data() + rix * h;
        const double* g = rn->grad.data() + rix * h;
        double dot = 0.0;
        for (std::size_t i = 0; i < h; ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < h; ++i)
          an->grad[rix * h + i] += y[i] * (g[i] - dot);
      }
    });
  }
  return r;
}

constexpr double kLayerNormEps = 1e-5;

inline Tensor layernorm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                        double eps = kLayerNormEps) {
  const std::size_t h = static_cast<std::size_t>(x.shape().back());
  if (scale.numel() != h || shift.numel() != h)
    throw DimensionError("layernorm affine params must have length " + std::to_string(h));
  const std::size_t rows = x.numel() / h;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t rix = 0; rix < rows; ++rix) {
    const double* v = x.value().data() + rix * h;
    double mu = 0.0;
    for (std::size_t i = 0; i < h; ++i) mu += v[i];
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t i = 0; i < h; ++i) var += (v[i] - mu) * (v[i] - mu);
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[rix] = is;
    for (std::size_t i = 0; i < h; ++i) {
      double xh = (v[i] - mu) * is;
      (*xhat)[rix * h + i] = xh;
      out[rix * h + i] = xh * scale.value()[i] + shift.value()[i];
    }
  }
  Tensor r = Tensor::op_result(x.shape(), std::move(out), {x, scale, shift});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto xn = x.handle();
    auto sn = scale.handle();
    auto bn = shift.handle();
    r.set_backprop([rn, xn, sn, bn, xhat, inv_std, h, rows]() {
      if (xn->requires_grad) xn->ensure_grad();
      if (sn->requires_grad) sn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::size_t rix = 0; rix < rows; ++rix) {
        const double* g = rn->grad.data() + rix * h;
        const double* xh = xhat->data() + rix * h;
        if (sn->requires_grad || bn->requires_grad) {
          for (std::size_t i = 0; i < h; ++i) {
            if (sn->requires_grad) sn->grad[i] += g[i] * xh[i];
            if (bn->requires_grad) bn->grad[i] += g[i];
          }
        }
        if (xn->requires_grad) {
          double mean_gs = 0.0, mean_gsx = 0.0;
          for (std::size_t i = 0; i < h; ++i) {
            double gs = g[i] * sn->value[i];
            mean_gs += gs;
            mean_gsx += gs * xh[i];
          }
          mean_gs /= static_cast<double>(h);
          mean_gsx /= static_cast<double>(h);
          const double is = (*inv_std)[rix];
          for (std::size_t i = 0; i < h; ++i) {
            double gs = g[i] * sn->value[i];
            xn->grad[rix * h + i] += is * (gs - mean_gs - xh[i] * mean_gsx);
          }
        }
      }
    });
  }
  return r;
}

/// Huber loss of a scalar prediction against a constant target.
inline Tensor huber_loss(const Tensor& pred, double target, double delta) {
  if (pred.numel() != 1) throw ContractError("huber_loss expects a scalar prediction");
  double d = pred.value()[0] - target;
  double v = std::abs(d) <= delta ? 0.5 * d * d : delta * (std::abs(d) - 0.5 * delta);
  Tensor r = Tensor::op_result({1}, {v}, {pred});
  if (r.requires_grad()) {
    auto* rn = r.node();
    auto pn = pred.handle();
    r.set_backprop([rn, pn, target, delta]() {
      if (!pn->requires_grad) return;
      pn->ensure_grad();
      double d = pn->value[0] - target;
      pn->grad[0] += rn->grad[0] * clampd(d, -delta, delta);
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// attention block (pre-layernorm residual, single head)

using ParamMap = std::map<std::string, Tensor>;

struct AttnBlock {
  int h = 0;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_scale, ln1_shift, ln2_scale, ln2_shift;
  Tensor w1, b1, w2, b2;

  static AttnBlock init(int h, Rng& rng) {
    AttnBlock blk;
    blk.h = h;
    const double s = 1.0 / std::sqrt(static_cast<double>(h));
    auto w = [&](int rows, int cols, double sd) {
      return Tensor::randn({rows, cols}, sd, rng, true);
    };
    blk.wq = w(h, h, s);
    blk.wk = w(h, h, s);
    blk.wv = w(h, h, s);
    blk.wo = w(h, h, s);
    blk.bq = Tensor::zeros({h}, true);
    blk.bk = Tensor::zeros({h}, true);
    blk.bv = Tensor::zeros({h}, true);
    blk.bo = Tensor::zeros({h}, true);
    blk.ln1_scale = Tensor::full({h}, 1.0, true);
    blk.ln1_shift = Tensor::zeros({h}, true);
    blk.ln2_scale = Tensor::full({h}, 1.0, true);
    blk.ln2_shift = Tensor::zeros({h}, true);
    blk.w1 = w(h, 2 * h, s);
    blk.b1 = Tensor::zeros({2 * h}, true);
    blk.w2 = w(2 * h, h, 1.0 / std::sqrt(2.0 * h));
    blk.b2 = Tensor::zeros({h}, true);
    return blk;
  }

  /// Total learnable scalars: 8 h^2 + 11 h.
  static std::size_t param_count(int h) {
    return 8u * static_cast<std::size_t>(h) * h + 11u * static_cast<std::size_t>(h);
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".wq"] = wq;
    out[prefix + ".bq"] = bq;
    out[prefix + ".wk"] = wk;
    out[prefix + ".bk"] = bk;
    out[prefix + ".wv"] = wv;
    out[prefix + ".bv"] = bv;
    out[prefix + ".wo"] = wo;
    out[prefix + ".bo"] = bo;
    out[prefix + ".ln1_scale"] = ln1_scale;
    out[prefix + ".ln1_shift"] = ln1_shift;
    out[prefix + ".ln2_scale"] = ln2_scale;
    out[prefix + ".ln2_shift"] = ln2_shift;
    out[prefix + ".w1"] = w1;
    out[prefix + ".b1"] = b1;
    out[prefix + ".w2"] = w2;
    out[prefix + ".b2"] = b2;
  }
};

/// Softmax(Q K^T / sqrt(h)) of the block applied to x [..., n, h].
inline Tensor attention_weights(const Tensor& x, const AttnBlock& blk) {
  Tensor u = layernorm(x, blk.ln1_scale, blk.ln1_shift);
  Tensor q = add(matmul(u, blk.wq), blk.bq);
  Tensor k = add(matmul(u, blk.wk), blk.bk);
  Tensor logits = scalar_mul(matmul(q, transpose_last2(k)),
                             1.0 / std::sqrt(static_cast<double>(blk.h)));
  return softmax(logits);
}

/// Pre-layernorm residual attention block on x [..., n, h]:
///   y = x + Proj(Softmax(Q K^T / sqrt(h)) V)   with Q,K,V from LayerNorm(x)
///   out = y + FFN(LayerNorm(y))
inline Tensor attention(const Tensor& x, const AttnBlock& blk) {
  if (x.ndim() < 2)
    throw DimensionError("attention expects [..., n, h], got " + detail::shape_str(x.shape()));
  if (x.shape().back() != blk.h)
    throw DimensionError("attention feature dim " + std::to_string(x.shape().back()) +
                         " does not match block h=" + std::to_string(blk.h));
  const int n = x.shape()[x.shape().size() - 2];
  if (n == 0) throw ContractError("attention over an empty population");
  Tensor u = layernorm(x, blk.ln1_scale, blk.ln1_shift);
  Tensor q = add(matmul(u, blk.wq), blk.bq);
  Tensor k = add(matmul(u, blk.wk), blk.bk);
  Tensor v = add(matmul(u, blk.wv), blk.bv);
  Tensor att = softmax(scalar_mul(matmul(q, transpose_last2(k)),
                                  1.0 / std::sqrt(static_cast<double>(blk.h))));
  Tensor y = add(x, add(matmul(matmul(att, v), blk.wo), blk.bo));
  Tensor w = layernorm(y, blk.ln2_scale, blk.ln2_shift);
  Tensor ffn = add(matmul(gelu(add(matmul(w, blk.w1), blk.b1)), blk.w2), blk.b2);
  return add(y, ffn);
}

// ---------------------------------------------------------------------------
// optimizer

class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const Tensor& p : params_)
      if (p.has_grad())
        for (double g : p.grad()) s += g * g;
    return std::sqrt(s);
  }

  void clip_grad_norm(double max_norm) {
    double n = grad_norm();
    if (n <= max_norm || n == 0.0) return;
    double scale = max_norm / n;
    for (Tensor& p : params_)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= scale;
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& val = p.mutable_value();
      for (std::size_t j = 0; j < val.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
        double mh = m_[i][j] / bc1;
        double vh = v_[i][j] / bc2;
        val[j] -= lr * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace metasaea
