#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mmrec/error.hpp"
#include "mmrec/numerics/tensor.hpp"

namespace mmrec {

/// Adam moments for an ordered parameter list. `m` and `v` mirror the
/// parameter shapes once the first step has run.
template <class T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;

  AdamState() = default;
  explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

/// One bias-corrected Adam update using each parameter's `grad` buffer
/// (an empty buffer counts as a zero gradient).
template <class T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (Tensor<T>* p : params) {
      state.m.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Matrix<T>& m = state.m[i];
    Matrix<T>& v = state.v[i];
    if (m.rows() != p.rows() || m.cols() != p.cols()) {
      throw ShapeError("adam_step: state shape mismatch for '" + p.name + "'");
    }
    if (p.grad.size() == 0) {
      m *= b1;
      v *= b2;
    } else {
      if (p.grad.rows() != p.rows() || p.grad.cols() != p.cols()) {
        throw ShapeError("adam_step: gradient shape mismatch for '" + p.name + "'");
      }
      m = b1 * m + (T(1) - b1) * p.grad;
      v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
    }
    const T step = static_cast<T>(state.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(state.eps);
    p.data.array() -= step * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
  }
}

template <class T>
void adam_step(std::vector<Tensor<T>*>& params, AdamState<T>& state) {
  adam_step(std::span<Tensor<T>* const>(params.data(), params.size()), state);
}

}  // namespace mmrec
