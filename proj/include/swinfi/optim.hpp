#pragma once

// Adam with bias correction, operating in place on leaf parameters.

#include <cmath>
#include <cstddef>
#include <vector>

#include "swinfi/tensor.hpp"

namespace swinfi {

template <class T>
struct AdamState {
  std::size_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<T>> m, v;

  static AdamState init(const std::vector<Tensor<T>>& params, double lr) {
    AdamState st;
    st.lr = lr;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.emplace_back(p.size(), T(0));
      st.v.emplace_back(p.size(), T(0));
    }
    return st;
  }
};

// One bias-corrected update.  Parameters without an accumulated gradient are
// treated as having zero gradient (their moments keep decaying).
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& st) {
  if (params.size() != st.m.size())
    throw ShapeError("adam_step: state tracks a different parameter set");
  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  const T b1 = static_cast<T>(st.beta1), b2 = static_cast<T>(st.beta2);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (p.size() != st.m[pi].size())
      throw ShapeError("adam_step: parameter shape changed");
    auto& pv = p.mutable_values();
    T* m = st.m[pi].data();
    T* v = st.v[pi].data();
    const T* g = p.has_grad() ? p.grad().data() : nullptr;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T gi = g ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      pv[i] -= static_cast<T>(st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

// Scales gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (const T& g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : Tensor<T>::grad_buf(p)) g *= s;
    }
  }
  return norm;
}

}  // namespace swinfi
