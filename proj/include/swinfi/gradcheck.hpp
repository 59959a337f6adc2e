#pragma once

// Central-difference gradient verification.  Meant for 64-bit tensors; the
// relative-error denominator falls back to 1e-8 so identically-zero
// gradients compare in absolute terms.

#include <cmath>
#include <cstddef>
#include <vector>

#include "swinfi/tensor.hpp"

namespace swinfi {

// f builds a scalar-valued graph from x.  Returns the max relative error
// between the autodiff gradient of f at x and central finite differences.
template <class F>
double grad_check(F&& f, Tensor<double>& x, double eps = 1e-5) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor<double> y = f(x);
  if (y.size() != 1) throw ShapeError("grad_check expects a scalar-valued f");
  y.backward();
  std::vector<double> autograd =
      x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);

  double max_rel = 0.0;
  auto& xv = x.mutable_values();
  NoGradGuard ng;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double orig = xv[i];
    xv[i] = orig + eps;
    const double fp = f(x).item();
    xv[i] = orig - eps;
    const double fm = f(x).item();
    xv[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double denom =
        std::max({std::abs(fd), std::abs(autograd[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - autograd[i]) / denom);
  }
  return max_rel;
}

}  // namespace swinfi
