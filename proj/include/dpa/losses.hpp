#pragma once

#include <cmath>

#include "dpa/common.hpp"

// Scalar losses and their elementwise gradients. Kink conventions: the
// derivative of max(x, k) at x = k is 0, and |x|' at 0 is 0, so constraint
// losses push only strictly violating entries.

namespace dpa {

// Mean squared color error plus mean squared mask error over B pixels.
// In mask-only mode the color term is omitted.
inline double loss_photo(const MatX3& pred_colors, const Vec& pred_masks,
                         const MatX3& gt_colors, const Vec& gt_masks, bool rgb_mode) {
  const Index B = pred_masks.size();
  if (B < 1) throw ValidationError("loss_photo: empty batch");
  if (gt_masks.size() != B)
    throw ValidationError("loss_photo: prediction/ground-truth size mismatch");
  double loss = (pred_masks - gt_masks).squaredNorm() / double(B);
  if (rgb_mode) {
    if (pred_colors.rows() != B || gt_colors.rows() != B)
      throw ValidationError("loss_photo: color batch size mismatch");
    loss += (pred_colors - gt_colors).squaredNorm() / double(B);
  }
  return loss;
}

inline void loss_photo_backward(const MatX3& pred_colors, const Vec& pred_masks,
                                const MatX3& gt_colors, const Vec& gt_masks,
                                bool rgb_mode, MatX3& d_colors, Vec& d_masks) {
  const double inv_b = 1.0 / double(pred_masks.size());
  d_masks = 2.0 * inv_b * (pred_masks - gt_masks);
  if (rgb_mode)
    d_colors = 2.0 * inv_b * (pred_colors - gt_colors);
  else
    d_colors = MatX3::Zero(pred_colors.rows(), 3);
}

// Sum of out-of-range magnitudes of T: max(-T,0) + max(T-1,0) entrywise.
inline double loss_T(const Mat& T) {
  return ((-T).cwiseMax(0.0) + (T.array() - 1.0).matrix().cwiseMax(0.0)).sum();
}

inline Mat loss_T_backward(const Mat& T) {
  Mat g = Mat::Zero(T.rows(), T.cols());
  for (Index i = 0; i < T.rows(); ++i)
    for (Index j = 0; j < T.cols(); ++j) {
      if (T(i, j) < 0.0) g(i, j) = -1.0;
      else if (T(i, j) > 1.0) g(i, j) = 1.0;
    }
  return g;
}

// L1 distance of w from all-ones.
inline double loss_w(const Vec& w) { return (w.array() - 1.0).abs().sum(); }

inline Vec loss_w_backward(const Vec& w) {
  Vec g = Vec::Zero(w.size());
  for (Index j = 0; j < w.size(); ++j) {
    if (w[j] > 1.0) g[j] = 1.0;
    else if (w[j] < 1.0) g[j] = -1.0;
  }
  return g;
}

// Mean over the inside set of max(h, 1.9); h values come from
// overlap_indicator at the points with a* < 0.01. Empty set -> 0 + warning.
inline double loss_overlap(const Vec& h_inside) {
  if (h_inside.size() == 0) {
    warn("loss_overlap: inside set is empty (shape vanished)");
    return 0.0;
  }
  return h_inside.cwiseMax(1.9).mean();
}

inline Vec loss_overlap_backward(const Vec& h_inside) {
  Vec g = Vec::Zero(h_inside.size());
  if (h_inside.size() == 0) return g;
  const double inv_n = 1.0 / double(h_inside.size());
  for (Index i = 0; i < h_inside.size(); ++i)
    if (h_inside[i] > 1.9) g[i] = inv_n;
  return g;
}

}  // namespace dpa
