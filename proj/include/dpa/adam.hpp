#pragma once

#include <cmath>

#include "dpa/common.hpp"

// Adam with bias correction. Moment state lives beside each variable; the
// step count is shared by the caller so that multiple variables advance in
// lockstep within one optimizer step.

namespace dpa {

struct AdamParams {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename M>
struct AdamState {
  M m, v;

  void reset_like(const M& var) {
    m = M::Zero(var.rows(), var.cols());
    v = M::Zero(var.rows(), var.cols());
  }
};

// One update of a single variable at (1-based) step t.
template <typename M>
void adam_step(M& var, const M& grad, AdamState<M>& state, long t, const AdamParams& p) {
  if (grad.rows() != var.rows() || grad.cols() != var.cols())
    throw ValidationError("adam_step: gradient shape mismatch");
  if (!grad.allFinite())
    throw NumericalError("adam_step: non-finite gradient; step rejected");
  if (state.m.rows() != var.rows() || state.m.cols() != var.cols())
    state.reset_like(var);

  state.m = p.beta1 * state.m + (1.0 - p.beta1) * grad;
  state.v = p.beta2 * state.v.array().matrix() +
            (1.0 - p.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(p.beta1, double(t));
  const double bc2 = 1.0 - std::pow(p.beta2, double(t));
  const M m_hat = state.m / bc1;
  const M v_hat = state.v / bc2;
  var -= (p.lr * m_hat.array() / (v_hat.array().sqrt() + p.eps)).matrix();
}

}  // namespace dpa
