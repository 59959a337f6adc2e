#pragma once

// Dense tensors with reverse-mode automatic differentiation on a dynamic
// tape.  The op set is exactly what the SwinFi model needs: matmul, the
// elementwise arithmetic family, reshape/permute, index_select (gather with
// scatter-add backward), softmax, layer_norm, GELU, reductions, and a fused
// cross-entropy.  float for training, double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

#include "swinfi/common.hpp"

namespace swinfi {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Tape recording is disabled inside inference-only sections so forward
// activations are freed as they go out of scope.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily during backward
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> pull;  // distributes grad into parents
    const char* op = "leaf";
  };

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("tensor data size " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> d(shape_numel(shape), v);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  const std::vector<T>& values() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  const std::vector<T>& grad() const {
    if (node_->grad.empty()) throw Error("tensor has no gradient");
    return node_->grad;
  }

  // In-place access for optimizer updates on leaf parameters.
  std::vector<T>& mutable_values() { return node_->value; }

  void set_requires_grad(bool rg) {
    if (rg && node_->pull) throw Error("only leaves can become parameters");
    node_->requires_grad = rg;
  }

  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  // Reverse pass from a scalar root.  Topological order by iterative DFS.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar root");
    if (!node_->requires_grad)
      throw Error("backward() on a tensor that does not require grad");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].node_.get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->pull && !n->grad.empty()) n->pull(*n);
    }
  }

  const void* id() const { return node_.get(); }

  // --- used by op implementations ---
  static std::vector<T>& grad_buf(const Tensor& t) {
    auto& g = t.node_->grad;
    if (g.empty()) g.assign(t.node_->value.size(), T(0));
    return g;
  }

  static Tensor make(Shape shape, std::vector<T> value, const char* op,
                     std::vector<Tensor> parents,
                     std::function<void(Node&)> pull) {
    for (const T& v : value) {
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(value);
    t.node_->op = op;
    bool rg = false;
    if (grad_mode())
      for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
      t.node_->requires_grad = true;
      t.node_->parents = std::move(parents);
      t.node_->pull = std::move(pull);
    }
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Right-aligned NumPy broadcast; throws on incompatible extents.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea == eb)
      out[i] = ea;
    else if (ea == 1)
      out[i] = eb;
    else if (eb == 1)
      out[i] = ea;
    else
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
  }
  return out;
}

// Strides of `in` as seen from iteration over `out`; 0 on broadcast dims.
inline std::vector<std::size_t> strides_in_out(const Shape& in,
                                               const Shape& out) {
  auto ist = contiguous_strides(in);
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i)
    st[off + i] = in[i] == 1 ? 0 : ist[i];
  return st;
}

// Walks `out` in linear order calling f(out_index, a_offset, b_offset).
template <class F>
void for_each_broadcast(const Shape& out, const Shape& ash, const Shape& bsh,
                        F&& f) {
  const std::size_t n = shape_numel(out);
  if (n == 0) return;
  if (ash == out && bsh == out) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  auto as = strides_in_out(ash, out);
  auto bs = strides_in_out(bsh, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ao, bo);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ao += as[d];
      bo += bs[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ao -= as[d] * out[d];
      bo -= bs[d] * out[d];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting
// ---------------------------------------------------------------------------

template <class T, class Fwd, class PullA, class PullB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                    Fwd fwd, PullA pa, PullB pb) {
  Shape out = detail::broadcast_shape(a.shape(), b.shape());
  std::vector<T> v(shape_numel(out));
  const auto& av = a.values();
  const auto& bv = b.values();
  detail::for_each_broadcast(out, a.shape(), b.shape(),
                             [&](std::size_t i, std::size_t ao, std::size_t bo) {
                               v[i] = fwd(av[ao], bv[bo]);
                             });
  Shape osh = out;
  auto pull = [a, b, osh, pa, pb](typename Tensor<T>::Node& n) {
    const auto& g = n.grad;
    const auto& av = a.values();
    const auto& bv = b.values();
    const bool need_a = a.requires_grad();
    const bool need_b = b.requires_grad();
    T* ga = need_a ? Tensor<T>::grad_buf(a).data() : nullptr;
    T* gb = need_b ? Tensor<T>::grad_buf(b).data() : nullptr;
    detail::for_each_broadcast(osh, a.shape(), b.shape(),
                               [&](std::size_t i, std::size_t ao, std::size_t bo) {
                                 if (need_a) ga[ao] += pa(g[i], av[ao], bv[bo]);
                                 if (need_b) gb[bo] += pb(g[i], av[ao], bv[bo]);
                               });
  };
  return Tensor<T>::make(std::move(out), std::move(v), name, {a, b}, pull);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double s) {
  const auto& xv = x.values();
  std::vector<T> v(xv.size());
  const T ts = static_cast<T>(s);
  for (std::size_t i = 0; i < xv.size(); ++i) v[i] = xv[i] * ts;
  auto pull = [x, ts](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    auto& g = Tensor<T>::grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * ts;
  };
  return Tensor<T>::make(x.shape(), std::move(v), "scale", {x}, pull);
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, double s) {
  const auto& xv = x.values();
  std::vector<T> v(xv.size());
  const T ts = static_cast<T>(s);
  for (std::size_t i = 0; i < xv.size(); ++i) v[i] = xv[i] + ts;
  auto pull = [x](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    auto& g = Tensor<T>::grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  };
  return Tensor<T>::make(x.shape(), std::move(v), "add_scalar", {x}, pull);
}

// ---------------------------------------------------------------------------
// matmul: a [..., m, k] x b [..., k, n] with broadcastable batch dims
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] (+)= A[m,k] B[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* A,
             const T* B, T* C, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    if (!acc)
      for (std::size_t j = 0; j < n; ++j) c[j] = T(0);
    const T* a = A + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[kk];
      const T* b = B + kk * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,k] += A[m,n] B[k,n]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* A,
             const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* a = A + i * n;
    T* c = C + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* b = B + kk * n;
      T s = T(0);
      for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
      c[kk] += s;
    }
  }
}

// C[k,n] += A[m,k]^T B[m,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* A,
             const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    const T* b = B + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[kk];
      T* c = C + kk * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& ash = a.shape();
  const Shape& bsh = b.shape();
  if (ash.size() < 2 || bsh.size() < 2)
    throw ShapeError("matmul requires rank >= 2, got " + shape_str(ash) +
                     " and " + shape_str(bsh));
  const std::size_t m = ash[ash.size() - 2], k = ash[ash.size() - 1];
  const std::size_t kb = bsh[bsh.size() - 2], n = bsh[bsh.size() - 1];
  if (k != kb)
    throw ShapeError("matmul inner extents differ: " + shape_str(ash) + " x " +
                     shape_str(bsh));
  Shape abatch(ash.begin(), ash.end() - 2), bbatch(bsh.begin(), bsh.end() - 2);
  Shape batch = detail::broadcast_shape(abatch, bbatch);
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);

  const std::size_t nb = shape_numel(batch);
  std::vector<T> v(nb * m * n);
  const auto& av = a.values();
  const auto& bv = b.values();

  // Offsets of each batch element inside a and b (0-stride on broadcast dims).
  auto batch_offsets = [nb, &batch](const Shape& insh,
                                    std::size_t block) -> std::vector<std::size_t> {
    Shape inb(insh.begin(), insh.end() - 2);
    std::vector<std::size_t> offs(nb, 0);
    if (nb == 0) return offs;
    auto st = detail::strides_in_out(inb, batch);
    std::vector<std::size_t> idx(batch.size(), 0);
    std::size_t o = 0;
    for (std::size_t i = 0; i < nb; ++i) {
      offs[i] = o * block;
      for (std::size_t d = batch.size(); d-- > 0;) {
        ++idx[d];
        o += st[d];
        if (idx[d] < batch[d]) break;
        idx[d] = 0;
        o -= st[d] * batch[d];
      }
    }
    return offs;
  };

  const bool shared_weight = bsh.size() == 2;
  std::vector<std::size_t> aoffs, boffs;
  if (!shared_weight) {
    aoffs = batch_offsets(ash, m * k);
    boffs = batch_offsets(bsh, k * n);
  }

  if (shared_weight) {
    // Shared weight: one kernel call over all rows.
    detail::gemm_nn(nb * m, k, n, av.data(), bv.data(), v.data(), false);
  } else {
    for (std::size_t i = 0; i < nb; ++i)
      detail::gemm_nn(m, k, n, av.data() + aoffs[i], bv.data() + boffs[i],
                      v.data() + i * m * n, false);
  }

  auto pull = [a, b, m, k, n, nb, shared_weight, aoffs,
               boffs](typename Tensor<T>::Node& node) {
    const auto& g = node.grad;
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.requires_grad()) {
      T* ga = Tensor<T>::grad_buf(a).data();
      if (shared_weight) {
        detail::gemm_nt(nb * m, n, k, g.data(), bv.data(), ga);
      } else {
        for (std::size_t i = 0; i < nb; ++i)
          detail::gemm_nt(m, n, k, g.data() + i * m * n, bv.data() + boffs[i],
                          ga + aoffs[i]);
      }
    }
    if (b.requires_grad()) {
      T* gb = Tensor<T>::grad_buf(b).data();
      if (shared_weight) {
        detail::gemm_tn(nb * m, k, n, av.data(), g.data(), gb);
      } else {
        for (std::size_t i = 0; i < nb; ++i)
          detail::gemm_tn(m, k, n, av.data() + aoffs[i], g.data() + i * m * n,
                          gb + boffs[i]);
      }
    }
  };
  return Tensor<T>::make(std::move(out), std::move(v), "matmul", {a, b}, pull);
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape ns) {
  if (shape_numel(ns) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " +
                     shape_str(ns) + " changes element count");
  std::vector<T> v = x.values();
  auto pull = [x](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    auto& g = Tensor<T>::grad_buf(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  };
  return Tensor<T>::make(std::move(ns), std::move(v), "reshape", {x}, pull);
}

namespace detail {

// dst (linear over out_shape) <- src at permuted offsets; axes maps
// out dim -> in dim.
template <class T, bool Accumulate>
void permute_copy(const Shape& out_shape, const std::vector<std::size_t>& axes,
                  const Shape& in_shape, const T* src, T* dst) {
  auto ist = contiguous_strides(in_shape);
  const std::size_t r = out_shape.size();
  std::vector<std::size_t> st(r);
  for (std::size_t d = 0; d < r; ++d) st[d] = ist[axes[d]];
  const std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t so = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if constexpr (Accumulate)
      dst[so] += src[i];
    else
      dst[i] = src[so];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      so += st[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      so -= st[d] * out_shape[d];
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> axes) {
  const Shape& ish = x.shape();
  if (axes.size() != ish.size())
    throw ShapeError("permute axes rank mismatch");
  std::vector<bool> used(ish.size(), false);
  Shape out(ish.size());
  for (std::size_t d = 0; d < axes.size(); ++d) {
    if (axes[d] >= ish.size() || used[axes[d]])
      throw ShapeError("invalid permutation");
    used[axes[d]] = true;
    out[d] = ish[axes[d]];
  }
  std::vector<T> v(x.size());
  detail::permute_copy<T, false>(out, axes, ish, x.values().data(), v.data());
  Shape osh = out;
  auto pull = [x, axes, osh](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    // Scatter: walking the output in order touches input at the same
    // permuted offsets, so accumulate grad through the identical walk.
    detail::permute_copy<T, true>(osh, axes, x.shape(), n.grad.data(),
                                  Tensor<T>::grad_buf(x).data());
  };
  return Tensor<T>::make(std::move(out), std::move(v), "permute", {x}, pull);
}

template <class T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis,
                       std::vector<std::size_t> indices) {
  const Shape& ish = x.shape();
  if (axis >= ish.size()) throw ShapeError("index_select axis out of range");
  for (auto i : indices)
    if (i >= ish[axis]) throw ShapeError("index_select index out of range");
  Shape out = ish;
  out[axis] = indices.size();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ish[d];
  for (std::size_t d = axis + 1; d < ish.size(); ++d) inner *= ish[d];
  const std::size_t ext = ish[axis];
  std::vector<T> v(shape_numel(out));
  const T* src = x.values().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < indices.size(); ++j)
      std::copy_n(src + (o * ext + indices[j]) * inner, inner,
                  v.data() + (o * indices.size() + j) * inner);
  auto pull = [x, indices, outer, inner, ext](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    T* g = Tensor<T>::grad_buf(x).data();
    const T* og = n.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < indices.size(); ++j) {
        T* dst = g + (o * ext + indices[j]) * inner;
        const T* s = og + (o * indices.size() + j) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += s[i];
      }
  };
  return Tensor<T>::make(std::move(out), std::move(v), "index_select", {x},
                         pull);
}

// Cyclic shift along one axis; element at index i moves to (i+shift) mod ext.
template <class T>
Tensor<T> roll(const Tensor<T>& x, std::size_t axis, std::ptrdiff_t shift) {
  const std::size_t ext = x.shape().at(axis);
  std::vector<std::size_t> idx(ext);
  const std::ptrdiff_t e = static_cast<std::ptrdiff_t>(ext);
  for (std::size_t i = 0; i < ext; ++i) {
    std::ptrdiff_t s = (static_cast<std::ptrdiff_t>(i) - shift) % e;
    if (s < 0) s += e;
    idx[i] = static_cast<std::size_t>(s);
  }
  return index_select(x, axis, std::move(idx));
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const Shape& sh = x.shape();
  if (axis >= sh.size()) throw ShapeError("softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= sh[d];
  for (std::size_t d = axis + 1; d < sh.size(); ++d) inner *= sh[d];
  const std::size_t L = sh[axis];
  std::vector<T> v(x.size());
  const T* src = x.values().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * L * inner + in;
      T mx = src[base];
      for (std::size_t l = 1; l < L; ++l)
        mx = std::max(mx, src[base + l * inner]);
      T sum = T(0);
      for (std::size_t l = 0; l < L; ++l) {
        T e = std::exp(src[base + l * inner] - mx);
        v[base + l * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (std::size_t l = 0; l < L; ++l) v[base + l * inner] *= inv;
    }
  auto pull = [x, outer, inner, L](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    T* g = Tensor<T>::grad_buf(x).data();
    const T* y = n.value.data();
    const T* dy = n.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * L * inner + in;
        T dot = T(0);
        for (std::size_t l = 0; l < L; ++l)
          dot += dy[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t i = base + l * inner;
          g[i] += y[i] * (dy[i] - dot);
        }
      }
  };
  return Tensor<T>::make(sh, std::move(v), "softmax", {x}, pull);
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// per-feature affine (gain, bias).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps = 1e-5) {
  const Shape& sh = x.shape();
  if (sh.empty()) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t L = sh.back();
  if (gain.size() != L || bias.size() != L)
    throw ShapeError("layer_norm gain/bias must match last extent " +
                     std::to_string(L));
  const std::size_t rows = x.size() / L;
  std::vector<T> v(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T* src = x.values().data();
  const T* gv = gain.values().data();
  const T* bv = bias.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = src + r * L;
    T mean = T(0);
    for (std::size_t i = 0; i < L; ++i) mean += xr[i];
    mean /= static_cast<T>(L);
    T var = T(0);
    for (std::size_t i = 0; i < L; ++i) {
      T d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(L);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[r] = is;
    T* xh = xhat->data() + r * L;
    T* out = v.data() + r * L;
    for (std::size_t i = 0; i < L; ++i) {
      xh[i] = (xr[i] - mean) * is;
      out[i] = gv[i] * xh[i] + bv[i];
    }
  }
  auto pull = [x, gain, bias, xhat, inv_std, rows, L](
                  typename Tensor<T>::Node& n) {
    const T* dy = n.grad.data();
    const T* xh = xhat->data();
    const T* gv = gain.values().data();
    if (gain.requires_grad()) {
      T* gg = Tensor<T>::grad_buf(gain).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < L; ++i)
          gg[i] += dy[r * L + i] * xh[r * L + i];
    }
    if (bias.requires_grad()) {
      T* gb = Tensor<T>::grad_buf(bias).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < L; ++i) gb[i] += dy[r * L + i];
    }
    if (x.requires_grad()) {
      T* gx = Tensor<T>::grad_buf(x).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* dyr = dy + r * L;
        const T* xhr = xh + r * L;
        T m1 = T(0), m2 = T(0);
        for (std::size_t i = 0; i < L; ++i) {
          const T dxh = dyr[i] * gv[i];
          m1 += dxh;
          m2 += dxh * xhr[i];
        }
        m1 /= static_cast<T>(L);
        m2 /= static_cast<T>(L);
        const T is = (*inv_std)[r];
        for (std::size_t i = 0; i < L; ++i)
          gx[r * L + i] += is * (dyr[i] * gv[i] - m1 - xhr[i] * m2);
      }
    }
  };
  return Tensor<T>::make(sh, std::move(v), "layer_norm", {x, gain, bias},
                         pull);
}

// GELU, tanh approximation with the usual 0.044715 cubic coefficient.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  const auto& xv = x.values();
  std::vector<T> v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double z = static_cast<double>(xv[i]);
    const double u = kSqrt2OverPi * (z + kCubic * z * z * z);
    v[i] = static_cast<T>(0.5 * z * (1.0 + std::tanh(u)));
  }
  auto pull = [x](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    T* g = Tensor<T>::grad_buf(x).data();
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double z = static_cast<double>(xv[i]);
      const double u = kSqrt2OverPi * (z + kCubic * z * z * z);
      const double t = std::tanh(u);
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * z * z);
      const double d = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du;
      g[i] += n.grad[i] * static_cast<T>(d);
    }
  };
  return Tensor<T>::make(x.shape(), std::move(v), "gelu", {x}, pull);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  const Shape& sh = x.shape();
  if (axis >= sh.size()) throw ShapeError("mean axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= sh[d];
  for (std::size_t d = axis + 1; d < sh.size(); ++d) inner *= sh[d];
  const std::size_t L = sh[axis];
  Shape out;
  for (std::size_t d = 0; d < sh.size(); ++d)
    if (d != axis) out.push_back(sh[d]);
  if (out.empty()) out.push_back(1);
  std::vector<T> v(outer * inner, T(0));
  const T* src = x.values().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < L; ++l) {
      const T* s = src + (o * L + l) * inner;
      T* d = v.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) d[i] += s[i];
    }
  const T invL = T(1) / static_cast<T>(L);
  for (auto& e : v) e *= invL;
  auto pull = [x, outer, inner, L, invL](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    T* g = Tensor<T>::grad_buf(x).data();
    const T* og = n.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < L; ++l) {
        T* d = g + (o * L + l) * inner;
        const T* s = og + o * inner;
        for (std::size_t i = 0; i < inner; ++i) d[i] += s[i] * invL;
      }
  };
  return Tensor<T>::make(std::move(out), std::move(v), "mean", {x}, pull);
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (const T& v : x.values()) s += v;
  auto pull = [x](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    auto& g = Tensor<T>::grad_buf(x);
    for (auto& e : g) e += n.grad[0];
  };
  return Tensor<T>::make({1}, {s}, "sum", {x}, pull);
}

template <class T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  T s = T(0);
  for (const T& v : x.values()) s += v * v;
  auto pull = [x](typename Tensor<T>::Node& n) {
    if (!x.requires_grad()) return;
    auto& g = Tensor<T>::grad_buf(x);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += T(2) * xv[i] * n.grad[0];
  };
  return Tensor<T>::make({1}, {s}, "sum_squares", {x}, pull);
}

// ---------------------------------------------------------------------------
// Fused, numerically stable cross-entropy over logits [B, K].
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int>& labels) {
  const Shape& sh = logits.shape();
  if (sh.size() != 2) throw ShapeError("cross_entropy expects [batch, classes]");
  const std::size_t B = sh[0], K = sh[1];
  if (labels.size() != B)
    throw ShapeError("cross_entropy label count mismatch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= K)
      throw ShapeError("cross_entropy label out of range");
  const T* lv = logits.values().data();
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = lv + b * K;
    T mx = row[0];
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < K; ++j)
      se += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(se) + static_cast<double>(mx) -
             static_cast<double>(row[labels[b]]);
  }
  total /= static_cast<double>(B);
  auto pull = [logits, labels, B, K](typename Tensor<T>::Node& n) {
    if (!logits.requires_grad()) return;
    T* g = Tensor<T>::grad_buf(logits).data();
    const T* lv = logits.values().data();
    const T go = n.grad[0] / static_cast<T>(B);
    for (std::size_t b = 0; b < B; ++b) {
      const T* row = lv + b * K;
      T mx = row[0];
      for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
      T se = T(0);
      for (std::size_t j = 0; j < K; ++j) se += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < K; ++j) {
        T p = std::exp(row[j] - mx) / se;
        g[b * K + j] +=
            go * (p - (static_cast<std::size_t>(labels[b]) == j ? T(1) : T(0)));
      }
    }
  };
  return Tensor<T>::make({1}, {static_cast<T>(total)}, "cross_entropy",
                         {logits}, pull);
}

}  // namespace swinfi
