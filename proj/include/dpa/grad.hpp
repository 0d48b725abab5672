#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dpa/assembly.hpp"
#include "dpa/losses.hpp"
#include "dpa/parallel.hpp"
#include "dpa/render.hpp"

// Reverse-mode gradients of the per-step losses with respect to params, T, w
// and the color table. The computation graph is static per phase, so the
// engine is a set of staged manual adjoints rather than a general tape:
// forward stores the small activations (O, alphas, per-ray aggregates) and
// backward re-derives the large ones (D, ReLU masks) chunk by chunk.
//
// Conventions at non-smooth points: ReLU'(0) = 0; clip' is 0 at and outside
// both boundaries; the hard min routes its gradient to the lowest-index
// argmin among active convexes; |.|'(0) = 0. The opacity guard
// alpha = min(exp(-10 a*), 1) passes gradient through at exactly 1 and blocks
// it strictly above 1: a* = 0 holds on every strictly-interior point (all
// selected distances negative), so blocking at equality would make carving
// impossible, while the clamped region above 1 only arises from negative
// float-mode selection entries.
//
// The union and overlap reductions run over active convexes only, matching
// union_hard; an all-zero T column contributes the constants clip(1-0) = 1
// and exp(0) = 1 at every point, which would saturate a+ and h globally.
//
// Parallel chunks commit their partial reductions in chunk-index order
// (OrderedCommitter), so bundles are bitwise identical for any thread count.

namespace dpa {

struct GradientBundle {
  Mat d_params;     // P x 7
  Mat d_selection;  // P x C
  Vec d_weights;    // C
  MatX3 d_colors;   // C x 3

  void check_finite() const {
    if (!d_params.allFinite() || !d_selection.allFinite() ||
        !d_weights.allFinite() || !d_colors.allFinite())
      throw NumericalError("GradientBundle: non-finite gradient");
  }
};

// A batch of rays with ground truth, flattened ray-major: sample s of ray r
// lives at row r * samples_per_ray + s. The batch must outlive the graph's
// backward pass.
struct PhotoBatch {
  MatX3 points;
  Index n_rays = 0;
  Index samples_per_ray = 0;
  std::vector<char> ray_valid;  // invalid rays render to 0 with no gradient
  MatX3 gt_colors;              // n_rays x 3
  Vec gt_masks;                 // n_rays

  void validate() const {
    if (n_rays <= 0 || samples_per_ray <= 0)
      throw ValidationError("PhotoBatch: empty batch");
    if (points.rows() != n_rays * samples_per_ray)
      throw ValidationError("PhotoBatch: point rows must equal rays * samples");
    if (Index(ray_valid.size()) != n_rays || gt_masks.size() != n_rays ||
        gt_colors.rows() != n_rays)
      throw ValidationError("PhotoBatch: per-ray array size mismatch");
  }
};

enum class FieldKind { SoftOccupancy, HardOccupancy };

template <typename Scalar>
class FitGraph {
 public:
  FitGraph(const PrimitiveBank& bank, const MatX3& colors, Phase phase, bool rgb_mode,
           int threads = 1)
      : bank_(bank), phase_(phase), rgb_(rgb_mode), threads_(threads) {
    bank.validate();
    if (colors.rows() != bank.convex_count())
      throw ValidationError("FitGraph: color table rows must match convex count");
    params_ = bank.params.template cast<Scalar>();
    folded_ = folded_params<Scalar>(params_);
    T_ = bank.selection.template cast<Scalar>();
    w_ = bank.weights.template cast<Scalar>();
    colors_ = colors.template cast<Scalar>();
    active_ = bank.active_convexes();
    for (Index c = 0; c < Index(active_.size()); ++c)
      if (active_[c]) active_ids_.push_back(c);
    if (active_ids_.empty())
      throw ValidationError("FitGraph: no active convexes");
  }

  // Diagnostics hooks -------------------------------------------------------

  void set_branch_tracking(bool on) { track_branches_ = on; }
  std::uint64_t branch_signature() const { return signature_; }

  // Test hook: poison the named backward stage so the stage checker trips.
  void inject_corruption(const std::string& stage) { corrupt_stage_ = stage; }

  // Forward passes ----------------------------------------------------------

  // Photometric forward over a ray batch; returns L_ph.
  double forward_photo(const PhotoBatch& batch) {
    batch.validate();
    photo_ = PhotoTrace{};
    photo_.batch = &batch;
    const Index N = batch.points.rows();
    const Index R = batch.samples_per_ray;
    const Index A = Index(active_ids_.size());

    photo_.q = lift_rows<Scalar>(batch.points.template cast<Scalar>());
    photo_.O.resize(N, A);
    photo_.alphas.resize(N);
    if (phase_ != Phase::One) photo_.argmin.assign(std::size_t(N), 0);
    photo_.chat = MatT<Scalar>::Zero(batch.n_rays, 3);
    photo_.mhat = VecT<Scalar>::Zero(batch.n_rays);

    const Index rays_per_chunk = chunk_rays(R);
    const Index n_chunks = (batch.n_rays + rays_per_chunk - 1) / rays_per_chunk;
    std::vector<std::uint64_t> chunk_hash(std::size_t(n_chunks), 0);

    parallel_for_ranges(batch.n_rays, rays_per_chunk, threads_,
                        [&](Index r0, Index r1, Index chunk) {
      const Index b = r0 * R, n = (r1 - r0) * R;
      const MatT<Scalar> D = photo_.q.middleRows(b, n) * folded_.transpose();
      const MatT<Scalar> relu = D.cwiseMax(Scalar(0));
      MatT<Scalar> O(n, A);
      for (Index k = 0; k < A; ++k)
        O.col(k) = relu * T_.col(active_ids_[std::size_t(k)]);
      photo_.O.middleRows(b, n) = O;

      std::vector<std::uint8_t> bits;
      if (track_branches_) pack_relu_bits(D, bits);

      VecT<Scalar> alpha(n);
      if (phase_ == Phase::One) {
        for (Index i = 0; i < n; ++i) {
          Scalar u = 0;
          for (Index k = 0; k < A; ++k)
            u += w_of(k) * clip_unit(Scalar(1) - O(i, k));
          alpha[i] = clip_unit(u);
          if (track_branches_) {
            bits.push_back(in_open_unit(u) ? 1 : 0);
            for (Index k = 0; k < A; ++k)
              bits.push_back(in_open_unit(Scalar(1) - O(i, k)) ? 1 : 0);
          }
        }
      } else {
        for (Index i = 0; i < n; ++i) {
          Index arg = 0;
          Scalar best = O(i, 0);
          for (Index k = 1; k < A; ++k)
            if (O(i, k) < best) {
              best = O(i, k);
              arg = k;
            }
          photo_.argmin[std::size_t(b + i)] = std::int32_t(arg);
          const Scalar raw = std::exp(Scalar(-10) * best);
          alpha[i] = std::min(raw, Scalar(1));
          if (track_branches_) {
            bits.push_back(raw > Scalar(1) ? 1 : 0);
            bits.push_back(std::uint8_t(arg));
          }
        }
      }

      for (Index r = r0; r < r1; ++r) {
        if (!batch.ray_valid[std::size_t(r)]) {
          alpha.segment((r - r0) * R, R).setZero();
          continue;
        }
        Scalar trans = 1, m = 0;
        Eigen::Matrix<Scalar, 3, 1> c = Eigen::Matrix<Scalar, 3, 1>::Zero();
        for (Index s = 0; s < R; ++s) {
          const Index row = (r - r0) * R + s;
          const Scalar wgt = trans * alpha[row];
          if (rgb_) c += wgt * blend_color(O, row);
          m += wgt;
          trans *= (Scalar(1) - alpha[row]);
        }
        photo_.chat.row(r) = c.transpose();
        photo_.mhat[r] = m;
      }
      photo_.alphas.segment(b, n) = alpha;
      if (track_branches_)
        chunk_hash[std::size_t(chunk)] = fnv1a(bits.data(), bits.size());
    });

    fold_hashes(chunk_hash);
    photo_.ready = true;
    has_forward_ = true;

    return loss_photo(photo_.chat.template cast<double>(),
                      photo_.mhat.template cast<double>(), batch.gt_colors,
                      batch.gt_masks, rgb_);
  }

  // Overlap forward over probe points (Phase 3); returns L_over.
  double forward_overlap(const MatX3& probes) {
    if (phase_ != Phase::Three)
      throw ValidationError("forward_overlap: overlap loss belongs to phase 3");
    over_ = OverTrace{};
    const Index N = probes.rows();
    const Index A = Index(active_ids_.size());
    over_.q = lift_rows<Scalar>(probes.template cast<Scalar>());
    const MatT<Scalar> D = over_.q * folded_.transpose();
    const MatT<Scalar> relu = D.cwiseMax(Scalar(0));
    over_.O.resize(N, A);
    for (Index k = 0; k < A; ++k)
      over_.O.col(k) = relu * T_.col(active_ids_[std::size_t(k)]);

    over_.omega.assign(std::size_t(N), 0);
    over_.h.resize(N);
    Index n_inside = 0;
    for (Index i = 0; i < N; ++i) {
      const Scalar a_star = over_.O.row(i).minCoeff();
      over_.h[i] = (over_.O.row(i) * Scalar(-10)).array().exp().sum();
      if (a_star < Scalar(0.01)) {
        over_.omega[std::size_t(i)] = 1;
        ++n_inside;
      }
    }
    over_.n_inside = n_inside;

    if (track_branches_) {
      std::vector<std::uint8_t> bits;
      pack_relu_bits(D, bits);
      for (Index i = 0; i < N; ++i) {
        bits.push_back(over_.omega[std::size_t(i)]);
        bits.push_back(over_.h[i] > Scalar(1.9) ? 1 : 0);
      }
      fold_hash(fnv1a(bits.data(), bits.size()));
    }

    over_.ready = true;
    has_forward_ = true;
    if (n_inside == 0) {
      warn("loss_overlap: inside set is empty (shape vanished)");
      return 0.0;
    }
    double sum = 0;
    for (Index i = 0; i < N; ++i)
      if (over_.omega[std::size_t(i)]) sum += std::max(double(over_.h[i]), 1.9);
    return sum / double(n_inside);
  }

  // Direct field-sum forward: loss = sum_i a+_i (or a*_i). Lets the gradient
  // checker probe the occupancy chain in isolation.
  double forward_field_sum(const MatX3& points, FieldKind kind) {
    field_ = FieldTrace{};
    field_.kind = kind;
    const Index N = points.rows();
    const Index A = Index(active_ids_.size());
    field_.q = lift_rows<Scalar>(points.template cast<Scalar>());
    const MatT<Scalar> D = field_.q * folded_.transpose();
    const MatT<Scalar> relu = D.cwiseMax(Scalar(0));
    field_.O.resize(N, A);
    for (Index k = 0; k < A; ++k)
      field_.O.col(k) = relu * T_.col(active_ids_[std::size_t(k)]);

    std::vector<std::uint8_t> bits;
    if (track_branches_) pack_relu_bits(D, bits);

    double loss = 0;
    if (kind == FieldKind::SoftOccupancy) {
      for (Index i = 0; i < N; ++i) {
        Scalar u = 0;
        for (Index k = 0; k < A; ++k)
          u += w_of(k) * clip_unit(Scalar(1) - field_.O(i, k));
        loss += double(clip_unit(u));
        if (track_branches_) {
          bits.push_back(in_open_unit(u) ? 1 : 0);
          for (Index k = 0; k < A; ++k)
            bits.push_back(in_open_unit(Scalar(1) - field_.O(i, k)) ? 1 : 0);
        }
      }
    } else {
      field_.argmin.assign(std::size_t(N), 0);
      for (Index i = 0; i < N; ++i) {
        Index arg = 0;
        Scalar best = field_.O(i, 0);
        for (Index k = 1; k < A; ++k)
          if (field_.O(i, k) < best) {
            best = field_.O(i, k);
            arg = k;
          }
        field_.argmin[std::size_t(i)] = std::int32_t(arg);
        loss += double(best);
        if (track_branches_) bits.push_back(std::uint8_t(arg));
      }
    }
    if (track_branches_) fold_hash(fnv1a(bits.data(), bits.size()));
    field_.ready = true;
    has_forward_ = true;
    return loss;
  }

  // Regularizers on the master (double) state; closed-form, no trace.
  double forward_regs() const {
    double loss = 0;
    if (phase_ != Phase::Three) loss += loss_T(bank_.selection);
    if (phase_ == Phase::One) loss += loss_w(bank_.weights);
    return loss;
  }

  // Backward ----------------------------------------------------------------

  GradientBundle backward() {
    if (!has_forward_)
      throw ValidationError("backward: no forward pass recorded");

    const Index P = params_.rows(), C = T_.cols();
    acc_params_ = MatT<Scalar>::Zero(P, 7);
    acc_T_ = MatT<Scalar>::Zero(P, C);
    acc_w_ = VecT<Scalar>::Zero(C);
    acc_colors_ = MatT<Scalar>::Zero(C, 3);

    if (photo_.ready) backward_photo();
    if (over_.ready) backward_overlap();
    if (field_.ready) backward_field();

    GradientBundle bundle;
    bundle.d_params = fold_backward();
    bundle.d_selection = acc_T_.template cast<double>();
    bundle.d_weights = acc_w_.template cast<double>();
    bundle.d_colors = acc_colors_.template cast<double>();

    // Regularizer gradients live on the master state in double.
    if (phase_ != Phase::Three) bundle.d_selection += loss_T_backward(bank_.selection);
    if (phase_ == Phase::One) bundle.d_weights += loss_w_backward(bank_.weights);

    // Phase freezes are literal zeros.
    if (phase_ != Phase::One) bundle.d_weights.setZero();
    if (phase_ == Phase::Three) bundle.d_selection.setZero();
    if (!rgb_) bundle.d_colors.setZero();

    bundle.check_finite();
    has_forward_ = false;
    photo_ = PhotoTrace{};
    over_ = OverTrace{};
    field_ = FieldTrace{};
    return bundle;
  }

 private:
  struct PhotoTrace {
    bool ready = false;
    const PhotoBatch* batch = nullptr;
    MatT<Scalar> q;       // N x 7
    MatT<Scalar> O;       // N x n_active
    VecT<Scalar> alphas;  // N
    std::vector<std::int32_t> argmin;
    MatT<Scalar> chat;  // rays x 3
    VecT<Scalar> mhat;  // rays
  };

  struct OverTrace {
    bool ready = false;
    MatT<Scalar> q, O;
    VecT<Scalar> h;
    std::vector<std::uint8_t> omega;
    Index n_inside = 0;
  };

  struct FieldTrace {
    bool ready = false;
    FieldKind kind = FieldKind::SoftOccupancy;
    MatT<Scalar> q, O;
    std::vector<std::int32_t> argmin;
  };

  // ---- small helpers ------------------------------------------------------

  static Scalar clip_unit(Scalar x) {
    return std::min(std::max(x, Scalar(0)), Scalar(1));
  }
  static bool in_open_unit(Scalar x) { return x > Scalar(0) && x < Scalar(1); }

  Scalar w_of(Index active_col) const {
    return w_[active_ids_[std::size_t(active_col)]];
  }

  // Softmax(-10 O) blend over the active color rows.
  Eigen::Matrix<Scalar, 3, 1> blend_color(const MatT<Scalar>& O, Index row) const {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index k = 0; k < O.cols(); ++k) best = std::max(best, Scalar(-10) * O(row, k));
    Scalar denom = 0;
    Eigen::Matrix<Scalar, 3, 1> rgb = Eigen::Matrix<Scalar, 3, 1>::Zero();
    for (Index k = 0; k < O.cols(); ++k) {
      const Scalar e = std::exp(Scalar(-10) * O(row, k) - best);
      denom += e;
      rgb += e * colors_.row(active_ids_[std::size_t(k)]).transpose();
    }
    return rgb / denom;
  }

  void pack_relu_bits(const MatT<Scalar>& D, std::vector<std::uint8_t>& bits) const {
    const Scalar* d = D.data();
    for (Index i = 0; i < D.size(); ++i) bits.push_back(d[i] > Scalar(0) ? 1 : 0);
  }

  void fold_hash(std::uint64_t h) { signature_ = fnv1a(&h, sizeof(h), signature_); }

  void fold_hashes(const std::vector<std::uint64_t>& hashes) {
    if (!track_branches_) return;
    for (std::uint64_t h : hashes) fold_hash(h);
  }

  Index chunk_rays(Index R) const {
    // Target ~4 MB of recomputed D per chunk.
    const Index budget = Index(4) << 20;
    const Index per_ray = R * params_.rows() * Index(sizeof(Scalar));
    return std::max<Index>(1, budget / std::max<Index>(per_ray, 1));
  }

  template <typename Buf>
  void stage_check(const char* stage, Buf& buf) {
    if (!corrupt_stage_.empty() && corrupt_stage_ == stage && buf.size() > 0)
      buf(0, 0) = std::numeric_limits<Scalar>::quiet_NaN();
    if (!buf.allFinite())
      throw NumericalError(std::string("backward: non-finite adjoint at stage '") +
                           stage + "'");
  }

  // ---- backward chains ----------------------------------------------------

  // Shared tail: given dO over active columns and the chunk's q rows,
  // recompute D/relu and push adjoints to T, params, and optional extras
  // under one ordered commit.
  void backward_tail(const MatT<Scalar>& q_chunk, const MatT<Scalar>& dO, Index chunk,
                     bool train_T, const MatT<Scalar>* d_colors_partial,
                     const VecT<Scalar>* dw_partial) {
    const MatT<Scalar> D = q_chunk * folded_.transpose();
    const MatT<Scalar> relu = D.cwiseMax(Scalar(0));

    MatT<Scalar> dT_partial;
    if (train_T) {
      dT_partial = MatT<Scalar>::Zero(T_.rows(), T_.cols());
      for (std::size_t k = 0; k < active_ids_.size(); ++k)
        dT_partial.col(active_ids_[k]) = relu.transpose() * dO.col(Index(k));
      stage_check("intersect", dT_partial);
    }

    MatT<Scalar> drelu = MatT<Scalar>::Zero(q_chunk.rows(), T_.rows());
    for (std::size_t k = 0; k < active_ids_.size(); ++k)
      drelu += dO.col(Index(k)) * T_.col(active_ids_[k]).transpose();
    stage_check("intersect", drelu);

    MatT<Scalar> dD =
        ((D.array() > Scalar(0)).template cast<Scalar>() * drelu.array()).matrix();
    stage_check("relu", dD);

    MatT<Scalar> dfolded = dD.transpose() * q_chunk;  // P x 7
    stage_check("distance_matrix", dfolded);

    committer_.commit(chunk, [&] {
      acc_params_ += dfolded;
      if (train_T) acc_T_ += dT_partial;
      if (d_colors_partial) acc_colors_ += *d_colors_partial;
      if (dw_partial) acc_w_ += *dw_partial;
    });
  }

  void backward_photo() {
    const PhotoBatch& batch = *photo_.batch;
    const Index R = batch.samples_per_ray;

    MatX3 d_chat_d;
    Vec d_mhat_d;
    loss_photo_backward(photo_.chat.template cast<double>(),
                        photo_.mhat.template cast<double>(), batch.gt_colors,
                        batch.gt_masks, rgb_, d_chat_d, d_mhat_d);
    MatT<Scalar> d_chat = d_chat_d.template cast<Scalar>();
    const VecT<Scalar> d_mhat = d_mhat_d.template cast<Scalar>();
    stage_check("loss_photo", d_chat);

    const Index rays_per_chunk = chunk_rays(R);
    const bool train_T = phase_ != Phase::Three;
    committer_.reset();

    parallel_for_ranges(batch.n_rays, rays_per_chunk, threads_,
                        [&](Index r0, Index r1, Index chunk) {
      try {
        backward_photo_chunk(batch, r0, r1, R, d_chat, d_mhat, chunk, train_T);
      } catch (...) {
        committer_.abort();
        throw;
      }
    });
  }

  void backward_photo_chunk(const PhotoBatch& batch, Index r0, Index r1, Index R,
                            const MatT<Scalar>& d_chat, const VecT<Scalar>& d_mhat,
                            Index chunk, bool train_T) {
    const Index b = r0 * R, n = (r1 - r0) * R;
    const Index A = Index(active_ids_.size());
    const auto O = photo_.O.middleRows(b, n);
    const auto alphas = photo_.alphas.segment(b, n);

    VecT<Scalar> d_alpha = VecT<Scalar>::Zero(n);
    MatT<Scalar> d_sample_color;
    MatT<Scalar> sample_colors;
    if (rgb_) {
      d_sample_color = MatT<Scalar>::Zero(n, 3);
      sample_colors.resize(n, 3);
      for (Index i = 0; i < n; ++i)
        sample_colors.row(i) = blend_color(photo_.O, b + i).transpose();
    }

    // Accumulation adjoint per ray via suffix recurrence (no divisions):
    // d_alpha_i = t_i (g_i - B_i) with g_j = dC.c_j + dM and
    // B_i = sum_{j>i} g_j a_j prod_{i<k<j} (1 - a_k).
    for (Index r = r0; r < r1; ++r) {
      if (!batch.ray_valid[std::size_t(r)]) continue;
      const Index base = (r - r0) * R;
      const Eigen::Matrix<Scalar, 3, 1> gc = d_chat.row(r).transpose();
      const Scalar gm = d_mhat[r];

      VecT<Scalar> g(R);
      for (Index s = 0; s < R; ++s) {
        Scalar gi = gm;
        if (rgb_) gi += gc.dot(sample_colors.row(base + s).transpose());
        g[s] = gi;
      }
      VecT<Scalar> Bs(R);
      Bs[R - 1] = 0;
      for (Index s = R - 2; s >= 0; --s)
        Bs[s] = g[s + 1] * alphas[base + s + 1] +
                (Scalar(1) - alphas[base + s + 1]) * Bs[s + 1];
      Scalar trans = 1;
      for (Index s = 0; s < R; ++s) {
        const Index row = base + s;
        d_alpha[row] = trans * (g[s] - Bs[s]);
        if (rgb_) d_sample_color.row(row) = (trans * alphas[row]) * gc.transpose();
        trans *= (Scalar(1) - alphas[row]);
      }
    }
    stage_check("accumulate", d_alpha);

    // Color softmax adjoint -> dO and d_colors.
    MatT<Scalar> dO = MatT<Scalar>::Zero(n, A);
    MatT<Scalar> d_colors_partial;
    if (rgb_) {
      d_colors_partial = MatT<Scalar>::Zero(colors_.rows(), 3);
      for (Index i = 0; i < n; ++i) {
        const Eigen::Matrix<Scalar, 3, 1> dc = d_sample_color.row(i).transpose();
        if (dc.isZero(Scalar(0))) continue;
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        for (Index k = 0; k < A; ++k) best = std::max(best, Scalar(-10) * O(i, k));
        VecT<Scalar> s(A);
        Scalar denom = 0;
        for (Index k = 0; k < A; ++k) {
          s[k] = std::exp(Scalar(-10) * O(i, k) - best);
          denom += s[k];
        }
        s /= denom;
        Scalar mean_r = 0;
        VecT<Scalar> rdot(A);
        for (Index k = 0; k < A; ++k) {
          rdot[k] = (colors_.row(active_ids_[std::size_t(k)]) * dc)(0, 0);
          mean_r += s[k] * rdot[k];
        }
        for (Index k = 0; k < A; ++k) {
          d_colors_partial.row(active_ids_[std::size_t(k)]) += s[k] * dc.transpose();
          dO(i, k) += Scalar(-10) * s[k] * (rdot[k] - mean_r);
        }
      }
      stage_check("point_color", d_colors_partial);
    }

    // Opacity adjoint -> dO (and the w adjoint in phase 1).
    VecT<Scalar> dw_partial;
    if (phase_ == Phase::One) {
      dw_partial = VecT<Scalar>::Zero(w_.size());
      for (Index i = 0; i < n; ++i) {
        if (d_alpha[i] == Scalar(0)) continue;
        Scalar u = 0;
        for (Index k = 0; k < A; ++k)
          u += w_of(k) * clip_unit(Scalar(1) - O(i, k));
        if (!in_open_unit(u)) continue;  // clip' = 0 at/outside boundaries
        for (Index k = 0; k < A; ++k) {
          const Scalar inner = Scalar(1) - O(i, k);
          dw_partial[active_ids_[std::size_t(k)]] += d_alpha[i] * clip_unit(inner);
          if (in_open_unit(inner)) dO(i, k) -= d_alpha[i] * w_of(k);
        }
      }
      stage_check("union_soft", dw_partial);
    } else {
      for (Index i = 0; i < n; ++i) {
        if (d_alpha[i] == Scalar(0)) continue;
        const Index arg = photo_.argmin[std::size_t(b + i)];
        const Scalar raw = std::exp(Scalar(-10) * O(i, arg));
        if (raw > Scalar(1)) continue;  // opacity guard: clamped region
        dO(i, arg) += Scalar(-10) * raw * d_alpha[i];
      }
      stage_check("union_hard", dO);
    }
    stage_check("opacity", dO);

    backward_tail(photo_.q.middleRows(b, n), dO, chunk, train_T,
                  rgb_ ? &d_colors_partial : nullptr,
                  phase_ == Phase::One ? &dw_partial : nullptr);
  }

  void backward_overlap() {
    if (over_.n_inside == 0) return;
    const Index N = over_.O.rows();
    MatT<Scalar> dO = MatT<Scalar>::Zero(N, over_.O.cols());
    const Scalar inv_n = Scalar(1) / Scalar(over_.n_inside);
    for (Index i = 0; i < N; ++i) {
      if (!over_.omega[std::size_t(i)]) continue;
      if (!(over_.h[i] > Scalar(1.9))) continue;  // max floor: zero slope
      for (Index k = 0; k < over_.O.cols(); ++k)
        dO(i, k) += inv_n * Scalar(-10) * std::exp(Scalar(-10) * over_.O(i, k));
    }
    stage_check("overlap", dO);
    committer_.reset();
    backward_tail(over_.q, dO, 0, /*train_T=*/false, nullptr, nullptr);
  }

  void backward_field() {
    const Index N = field_.O.rows();
    const Index A = Index(active_ids_.size());
    MatT<Scalar> dO = MatT<Scalar>::Zero(N, A);
    VecT<Scalar> dw_partial = VecT<Scalar>::Zero(w_.size());
    if (field_.kind == FieldKind::SoftOccupancy) {
      for (Index i = 0; i < N; ++i) {
        Scalar u = 0;
        for (Index k = 0; k < A; ++k)
          u += w_of(k) * clip_unit(Scalar(1) - field_.O(i, k));
        if (!in_open_unit(u)) continue;
        for (Index k = 0; k < A; ++k) {
          const Scalar inner = Scalar(1) - field_.O(i, k);
          dw_partial[active_ids_[std::size_t(k)]] += clip_unit(inner);
          if (in_open_unit(inner)) dO(i, k) -= w_of(k);
        }
      }
    } else {
      for (Index i = 0; i < N; ++i) dO(i, field_.argmin[std::size_t(i)]) += Scalar(1);
    }
    stage_check("union_soft", dO);
    committer_.reset();
    backward_tail(field_.q, dO, 0, phase_ != Phase::Three, nullptr,
                  phase_ == Phase::One ? &dw_partial : nullptr);
  }

  Mat fold_backward() const {
    Mat d = acc_params_.template cast<double>();
    for (Index p = 0; p < d.rows(); ++p)
      for (Index k = 0; k < 3; ++k) {
        const double a = bank_.params(p, k);
        d(p, k) *= (a > 0.0) ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
      }
    return d;
  }

  // ---- members ------------------------------------------------------------

  const PrimitiveBank& bank_;
  Phase phase_;
  bool rgb_;
  int threads_;

  MatT<Scalar> params_, folded_, T_, colors_;
  VecT<Scalar> w_;
  std::vector<char> active_;
  std::vector<Index> active_ids_;

  PhotoTrace photo_;
  OverTrace over_;
  FieldTrace field_;
  bool has_forward_ = false;

  bool track_branches_ = false;
  std::uint64_t signature_ = 1469598103934665603ull;
  std::string corrupt_stage_;

  MatT<Scalar> acc_params_, acc_T_, acc_colors_;
  VecT<Scalar> acc_w_;
  OrderedCommitter committer_;
};

}  // namespace dpa
