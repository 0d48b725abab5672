#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dpa/adam.hpp"
#include "dpa/fitconfig.hpp"
#include "dpa/grad.hpp"
#include "dpa/grid.hpp"
#include "dpa/metrics.hpp"
#include "dpa/render.hpp"
#include "dpa/sampler.hpp"

// The three-phase per-instance optimization: soft occupancy with trainable
// (params, T, w) first, hard occupancy with (params, T) second, then binary
// frozen T with the overlap penalty and periodic primitive dropout. Each
// phase starts from the previous phase's variables with fresh Adam moments.

namespace dpa {

// ---------------------------------------------------------------------------
// Phase table

struct PhaseConfig {
  Phase phase = Phase::One;
  std::string opacity_rule;  // "a_plus" or "exp(-10 a*)"
  bool train_params = true, train_T = false, train_w = false, train_colors = false;
  bool loss_photo_on = true, loss_T_on = false, loss_w_on = false,
       loss_overlap_on = false;
  Index iters = 0;
  Index dropout_period = 0;  // 0 = no dropout
};

inline PhaseConfig phase_config(Phase phase, const FitConfig& cfg) {
  PhaseConfig pc;
  pc.phase = phase;
  pc.train_colors = cfg.rgb;
  switch (phase) {
    case Phase::One:
      pc.opacity_rule = "a_plus";
      pc.train_T = pc.train_w = true;
      pc.loss_T_on = pc.loss_w_on = true;
      pc.iters = cfg.phase1_iters;
      break;
    case Phase::Two:
      pc.opacity_rule = "exp(-10 a*)";
      pc.train_T = true;
      pc.loss_T_on = true;
      pc.iters = cfg.phase2_iters;
      break;
    case Phase::Three:
      pc.opacity_rule = "exp(-10 a*)";
      pc.loss_overlap_on = true;
      pc.iters = cfg.phase3_iters;
      pc.dropout_period = cfg.dropout_period;
      break;
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Binarization

// Entries strictly above the threshold become 1, everything else 0, and the
// selection mode flips to Binary. Fails without touching the bank if no
// active convex would survive.
inline void binarize_selection(PrimitiveBank& bank, double threshold = 0.01) {
  if (bank.mode != SelectionMode::Float)
    throw ValidationError("binarize_selection: selection is already binary");
  Mat binary = (bank.selection.array() > threshold).cast<double>();
  if (!(binary.array() != 0.0).any())
    throw ValidationError(
        "binarize_selection: no active convex survives the threshold");
  bank.selection = std::move(binary);
  bank.mode = SelectionMode::Binary;
}

// ---------------------------------------------------------------------------
// Probe points and overlap statistics

// Uniform samples in the shape's bounding box dilated on every side; the box
// is measured on a coarse occupancy grid, falling back to the full cube when
// the shape has vanished.
inline MatX3 sample_probe_points(const PrimitiveBank& bank, Index count,
                                 double dilation, Rng& rng, int threads = 0,
                                 Index grid_res = 48) {
  Vec3 lo = Vec3::Constant(-1.0), hi = Vec3::Ones();
  const FieldEvaluator ev(bank, threads);
  bool found = false;
  if (!ev.empty()) {
    GridSpec grid;
    grid.resolution = grid_res;
    Vec3 blo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 bhi = -blo;
    for (Index k = 0; k < grid.resolution; ++k) {
      const MatX3 pts = slab_points(grid, k);
      const Vec a = ev.hard_occupancy(pts);
      for (Index i = 0; i < a.size(); ++i)
        if (a[i] < 0.01) {
          found = true;
          blo = blo.cwiseMin(pts.row(i).transpose());
          bhi = bhi.cwiseMax(pts.row(i).transpose());
        }
    }
    if (found) {
      lo = (blo.array() - dilation).matrix();
      hi = (bhi.array() + dilation).matrix();
    }
  }
  if (!found) warn("sample_probe_points: shape has no interior; probing the full cube");

  MatX3 probes(count, 3);
  for (Index i = 0; i < count; ++i)
    for (int k = 0; k < 3; ++k) probes(i, k) = rng.uniform(lo[k], hi[k]);
  return probes;
}

// Mean of h = sum_c exp(-10 O_c) over probes inside the shape (a* < 0.01);
// 0 when nothing is inside.
inline double mean_overlap_inside(const PrimitiveBank& bank, const MatX3& probes,
                                  int threads = 0) {
  const FieldEvaluator ev(bank, threads);
  if (ev.empty()) return 0.0;
  const Mat O = ev.membership(probes);
  double sum = 0;
  Index n_inside = 0;
  for (Index i = 0; i < O.rows(); ++i) {
    if (O.row(i).minCoeff() >= 0.01) continue;
    sum += (O.row(i).array() * -10.0).exp().sum();
    ++n_inside;
  }
  return n_inside == 0 ? 0.0 : sum / double(n_inside);
}

// ---------------------------------------------------------------------------
// Primitive dropout

struct DropoutResult {
  Index rows_before = 0, rows_after = 0;
  std::vector<Index> dropped_rows;
  std::vector<double> v_values;  // shape-variation fraction per accepted drop
};

// Greedy row sweep in index order: tentatively zero each nonzero T row,
// measure the fraction v of probe points whose inside state (threshold 0.1 on
// the hard occupancy) flips, and keep the row zeroed iff v <= v_threshold.
// Later rows are judged against the updated bank. Occupancy is maintained
// incrementally: zeroing row p subtracts its relu column from the O columns
// that selected it.
inline DropoutResult primitive_dropout(PrimitiveBank& bank, const MatX3& probes,
                                       double v_threshold, int threads = 0) {
  bank.validate();
  if (bank.mode != SelectionMode::Binary)
    throw ValidationError("primitive_dropout: selection must be binary");
  if (probes.rows() < 1)
    throw ValidationError("primitive_dropout: need probe points");

  const Index P = bank.primitive_count(), C = bank.convex_count(), N = probes.rows();
  const Mat q = lift_rows<double>(MatT<double>(probes));
  const Mat folded = folded_params<double>(bank.params);

  std::vector<Index> col_nnz(std::size_t(C), 0);
  for (Index c = 0; c < C; ++c)
    col_nnz[std::size_t(c)] = (bank.selection.col(c).array() != 0.0).count();
  std::vector<char> col_active(std::size_t(C), 0);
  Index active_count = 0;
  for (Index c = 0; c < C; ++c) {
    col_active[std::size_t(c)] = col_nnz[std::size_t(c)] > 0;
    active_count += col_active[std::size_t(c)] ? 1 : 0;
  }

  // O over all columns, accumulated in primitive blocks to bound the D slab.
  Mat O = Mat::Zero(N, C);
  {
    const Index block = std::max<Index>(1, (Index(8) << 20) / (N * Index(sizeof(double))));
    for (Index p0 = 0; p0 < P; p0 += block) {
      const Index b = std::min(block, P - p0);
      const Mat relu = (q * folded.middleRows(p0, b).transpose()).cwiseMax(0.0);
      O.noalias() += relu * bank.selection.middleRows(p0, b);
    }
  }
  (void)threads;

  const double inf = std::numeric_limits<double>::infinity();
  Vec a_star = Vec::Constant(N, inf);
  for (Index c = 0; c < C; ++c)
    if (col_active[std::size_t(c)]) a_star = a_star.cwiseMin(O.col(c));

  DropoutResult result;
  for (Index p = 0; p < P; ++p)
    result.rows_before += (bank.selection.row(p).array() != 0.0).any() ? 1 : 0;
  result.rows_after = result.rows_before;

  Vec b_star(N);
  std::vector<Index> cols_p;
  for (Index p = 0; p < P; ++p) {
    cols_p.clear();
    for (Index c = 0; c < C; ++c)
      if (bank.selection(p, c) != 0.0) cols_p.push_back(c);
    if (cols_p.empty()) continue;

    const Vec relu_p = (q * folded.row(p).transpose()).cwiseMax(0.0);
    Index deactivated = 0;
    for (Index c : cols_p) deactivated += col_nnz[std::size_t(c)] == 1 ? 1 : 0;
    const bool deactivates = deactivated > 0;
    if (deactivated == active_count) continue;  // never empty the whole shape

    Index flips = 0;
    if (!deactivates) {
      // Removal only lowers the affected memberships, so b* <= a*.
      for (Index i = 0; i < N; ++i) {
        double b = a_star[i];
        for (Index c : cols_p) b = std::min(b, O(i, c) - relu_p[i]);
        b_star[i] = b;
        flips += (b < 0.1) != (a_star[i] < 0.1) ? 1 : 0;
      }
    } else {
      // A column loses its last primitive and leaves the union entirely.
      for (Index i = 0; i < N; ++i) {
        double b = inf;
        for (Index c = 0; c < C; ++c) {
          if (!col_active[std::size_t(c)]) continue;
          double oc = O(i, c);
          if (bank.selection(p, c) != 0.0) {
            if (col_nnz[std::size_t(c)] == 1) continue;
            oc -= relu_p[i];
          }
          b = std::min(b, oc);
        }
        b_star[i] = b;
        flips += (b < 0.1) != (a_star[i] < 0.1) ? 1 : 0;
      }
    }

    const double v = double(flips) / double(N);
    if (v <= v_threshold) {
      for (Index c : cols_p) {
        O.col(c) -= relu_p;
        bank.selection(p, c) = 0.0;
        if (--col_nnz[std::size_t(c)] == 0) {
          col_active[std::size_t(c)] = 0;
          --active_count;
        }
      }
      a_star = b_star;
      --result.rows_after;
      result.dropped_rows.push_back(p);
      result.v_values.push_back(v);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Fit driver

struct FitView {
  Camera camera;
  Image image;
  Mat mask;  // binary foreground mask
};

struct DropoutEvent {
  Phase phase = Phase::Three;
  Index iter = 0;  // iteration within the phase, 1-based at invocation
  DropoutResult result;
};

struct FitHooks {
  std::function<void(const PhaseConfig&)> on_phase_start;
  std::function<void(Index iter, const PhaseConfig&, double loss,
                     const PrimitiveBank&, const MatX3&)>
      on_step;
  std::function<void(const DropoutEvent&)> on_dropout;
};

struct FitReport {
  std::array<std::vector<double>, 3> loss_curves;  // indexed by phase - 1
  Index active_primitive_rows = 0;
  Index nonempty_convexes = 0;
  double wall_seconds = 0;
  std::vector<double> psnr_per_view, ssim_per_view, iou_per_view;  // training views
  std::vector<Index> train_view_ids;
  bool under_constrained = false;
  Index rows_pre_dropout = 0, rows_post_dropout = 0;
  double final_mean_h_inside = 0;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
};

struct FitResult {
  PrimitiveBank bank;
  MatX3 colors;
  Phase completed_phase = Phase::Three;
  FitReport report;
};

namespace detail {

// Per-view sampling state reused across steps: the contour of the closed
// mask is fixed for a view, so it is computed once.
struct ViewSampler {
  const FitView* view = nullptr;
  std::vector<std::pair<Index, Index>> contour;  // (y, x)

  explicit ViewSampler(const FitView& v) : view(&v) {
    contour = contour_pixels(morphological_close(v.mask));
    if (contour.empty())
      warn("run_fit: view has no mask contour; contour sampling skipped");
  }

  std::vector<PixelSample> draw(const FitConfig& cfg, Rng& rng) const {
    const Index H = view->mask.rows(), W = view->mask.cols();
    std::vector<PixelSample> samples;
    samples.reserve(std::size_t(cfg.random_pixels + cfg.contour_pixels));
    for (Index i = 0; i < cfg.random_pixels; ++i) {
      PixelSample s;
      s.x = Index(rng.uniform_index(std::uint64_t(W)));
      s.y = Index(rng.uniform_index(std::uint64_t(H)));
      samples.push_back(s);
    }
    if (!contour.empty()) {
      for (Index i = 0; i < cfg.contour_pixels; ++i) {
        const auto& [cy, cx] = contour[rng.uniform_index(contour.size())];
        PixelSample s;
        s.x = std::clamp(Index(std::lround(double(cx) + rng.normal(0.0, cfg.contour_noise_sigma))),
                         Index(0), W - 1);
        s.y = std::clamp(Index(std::lround(double(cy) + rng.normal(0.0, cfg.contour_noise_sigma))),
                         Index(0), H - 1);
        s.source = PixelSource::Contour;
        samples.push_back(s);
      }
    }
    std::vector<PixelSample> out = samples;
    attach_ground_truth(out, view->image, view->mask);
    return out;
  }
};

inline PhotoBatch make_photo_batch(const FitView& view, std::vector<PixelSample> samples,
                                   const FitConfig& cfg, Rng& rng) {
  RayBundle bundle = generate_rays(view.camera, samples);
  QueryBatch qb = sample_along_rays(bundle, cfg.samples_per_ray, cfg.stratified, rng);
  PhotoBatch batch;
  batch.points = std::move(qb.points);
  batch.n_rays = bundle.ray_count();
  batch.samples_per_ray = cfg.samples_per_ray;
  batch.ray_valid = bundle.valid;
  batch.gt_colors.resize(batch.n_rays, 3);
  batch.gt_masks.resize(batch.n_rays);
  for (Index i = 0; i < batch.n_rays; ++i) {
    batch.gt_colors.row(i) = samples[std::size_t(i)].gt_color.transpose();
    batch.gt_masks[i] = samples[std::size_t(i)].gt_mask;
  }
  return batch;
}

inline MatX3 subsample_rows(const MatX3& pool, std::vector<Index>& scratch, Index count,
                            Rng& rng) {
  const Index n = pool.rows();
  if (count >= n) return pool;
  for (Index j = 0; j < count; ++j) {
    const Index k = j + Index(rng.uniform_index(std::uint64_t(n - j)));
    std::swap(scratch[std::size_t(j)], scratch[std::size_t(k)]);
  }
  MatX3 out(count, 3);
  for (Index j = 0; j < count; ++j) out.row(j) = pool.row(scratch[std::size_t(j)]);
  return out;
}

struct AdamBundle {
  AdamState<Mat> params, selection;
  AdamState<Vec> weights;
  AdamState<MatX3> colors;
  Index t = 0;
};

template <typename Scalar>
double fit_step(PrimitiveBank& bank, MatX3& colors, const PhaseConfig& pc,
                const FitConfig& cfg, const AdamParams& ap,
                const std::vector<ViewSampler>& samplers, const MatX3& probes,
                std::vector<Index>& probe_scratch, Index iter, AdamBundle& adam,
                Rng& rng) {
  const Index vi = cfg.round_robin_views
                       ? iter % Index(samplers.size())
                       : Index(rng.uniform_index(samplers.size()));
  const ViewSampler& sampler = samplers[std::size_t(vi)];
  const PhotoBatch batch =
      make_photo_batch(*sampler.view, sampler.draw(cfg, rng), cfg, rng);

  FitGraph<Scalar> graph(bank, colors, pc.phase, cfg.rgb, cfg.threads);
  double loss = graph.forward_photo(batch);
  loss += graph.forward_regs();
  if (pc.loss_overlap_on)
    loss += graph.forward_overlap(
        subsample_rows(probes, probe_scratch, cfg.overlap_batch, rng));

  const GradientBundle grad = graph.backward();
  ++adam.t;
  if (pc.train_params) adam_step(bank.params, grad.d_params, adam.params, adam.t, ap);
  if (pc.train_T) adam_step(bank.selection, grad.d_selection, adam.selection, adam.t, ap);
  if (pc.train_w) adam_step(bank.weights, grad.d_weights, adam.weights, adam.t, ap);
  if (pc.train_colors) {
    adam_step(colors, grad.d_colors, adam.colors, adam.t, ap);
    colors = colors.cwiseMax(0.0).cwiseMin(1.0);  // keep the table renderable
  }
  return loss;
}

inline void validate_fit_inputs(const std::vector<FitView>& views, const FitConfig& cfg,
                                std::vector<Index>& train_ids) {
  cfg.validate();
  if (views.empty()) throw ValidationError("run_fit: no input views");
  std::vector<char> holdout(views.size(), 0);
  for (Index h : cfg.holdout_views) {
    if (h < 0 || h >= Index(views.size()))
      throw ValidationError("run_fit: holdout view index out of range");
    holdout[std::size_t(h)] = 1;
  }
  for (std::size_t v = 0; v < views.size(); ++v) {
    const FitView& view = views[v];
    const std::string tag = "view " + std::to_string(v);
    view.camera.validate();
    view.image.validate();
    if (view.image.width != view.camera.width || view.image.height != view.camera.height)
      throw ValidationError("run_fit: " + tag + ": image size differs from camera");
    if (view.mask.rows() != view.camera.height || view.mask.cols() != view.camera.width)
      throw ValidationError("run_fit: " + tag + ": mask size differs from camera");
    if (!holdout[v] && !(view.mask.array() > 0.5).any())
      throw ValidationError("run_fit: " + tag + ": training mask has no foreground");
  }
  train_ids.clear();
  for (Index v = 0; v < Index(views.size()); ++v)
    if (!holdout[std::size_t(v)]) train_ids.push_back(v);
  if (train_ids.empty()) throw ValidationError("run_fit: every view is held out");
}

}  // namespace detail

// Run the phase schedule starting at `start` from the given state. A fresh
// fit uses run_fit below; resuming from a checkpoint picks the phase after
// the one the checkpoint completed.
inline FitResult run_fit_from(PrimitiveBank bank, MatX3 colors, Phase start,
                              const std::vector<FitView>& views, const FitConfig& cfg,
                              const FitHooks& hooks = {}) {
  std::vector<Index> train_ids;
  detail::validate_fit_inputs(views, cfg, train_ids);
  bank.validate();
  if (colors.rows() != bank.convex_count())
    throw ValidationError("run_fit: color table rows must match convex count");

  const auto t_start = std::chrono::steady_clock::now();
  FitResult result;
  result.report.config_digest = config_hash(cfg);
  result.report.seed = cfg.seed;
  result.report.train_view_ids = train_ids;
  if (train_ids.size() == 1) {
    result.report.under_constrained = true;
    warn("run_fit: single training view; the fit is under-constrained");
  }

  Rng rng(cfg.seed);
  std::vector<detail::ViewSampler> samplers;
  for (Index v : train_ids) samplers.emplace_back(views[std::size_t(v)]);

  const AdamParams ap{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
  MatX3 probes(0, 3);
  std::vector<Index> probe_scratch;

  for (Phase phase : {Phase::One, Phase::Two, Phase::Three}) {
    if (int(phase) < int(start)) continue;
    if (phase == Phase::Three) {
      if (bank.mode == SelectionMode::Float)
        binarize_selection(bank, cfg.binarize_threshold);
      probes = sample_probe_points(bank, cfg.overlap_probes, cfg.probe_dilation, rng,
                                   cfg.threads);
      probe_scratch.resize(std::size_t(probes.rows()));
      std::iota(probe_scratch.begin(), probe_scratch.end(), Index(0));
    }
    const PhaseConfig pc = phase_config(phase, cfg);
    if (hooks.on_phase_start) hooks.on_phase_start(pc);

    detail::AdamBundle adam;  // fresh moments each phase
    auto& curve = result.report.loss_curves[std::size_t(int(phase) - 1)];
    curve.reserve(std::size_t(pc.iters));

    for (Index iter = 0; iter < pc.iters; ++iter) {
      const double loss =
          cfg.use_float32
              ? detail::fit_step<float>(bank, colors, pc, cfg, ap, samplers, probes,
                                        probe_scratch, iter, adam, rng)
              : detail::fit_step<double>(bank, colors, pc, cfg, ap, samplers, probes,
                                         probe_scratch, iter, adam, rng);
      curve.push_back(loss);
      if (hooks.on_step) hooks.on_step(iter, pc, loss, bank, colors);

      if (pc.dropout_period > 0 && (iter + 1) % pc.dropout_period == 0) {
        DropoutEvent event;
        event.phase = phase;
        event.iter = iter + 1;
        event.result =
            primitive_dropout(bank, probes, cfg.dropout_v_threshold, cfg.threads);
        if (result.report.rows_pre_dropout == 0)
          result.report.rows_pre_dropout = event.result.rows_before;
        result.report.rows_post_dropout = event.result.rows_after;
        if (hooks.on_dropout) hooks.on_dropout(event);
      }
    }
  }

  // Final accounting against the fitted state.
  for (Index p = 0; p < bank.primitive_count(); ++p)
    result.report.active_primitive_rows +=
        (bank.selection.row(p).array() != 0.0).any() ? 1 : 0;
  GridSpec count_grid;
  count_grid.resolution = 64;
  result.report.nonempty_convexes =
      Index(nonempty_convexes_on_grid(bank, count_grid, 0.01, cfg.threads).size());
  if (probes.rows() > 0)
    result.report.final_mean_h_inside = mean_overlap_inside(bank, probes, cfg.threads);

  for (Index v : train_ids) {
    const FitView& view = views[std::size_t(v)];
    const RenderedView rendered =
        render_view(bank, colors, view.camera, cfg.samples_per_ray, cfg.threads);
    result.report.psnr_per_view.push_back(psnr(rendered.image, view.image));
    result.report.ssim_per_view.push_back(ssim(rendered.image, view.image));
    result.report.iou_per_view.push_back(mask_iou(rendered.mask, view.mask));
  }

  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  result.bank = std::move(bank);
  result.colors = std::move(colors);
  result.completed_phase = Phase::Three;
  return result;
}

// Fresh fit from the standard random initialization.
inline FitResult run_fit(const std::vector<FitView>& views, const FitConfig& cfg,
                         const FitHooks& hooks = {}) {
  Rng init_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  PrimitiveBank bank =
      PrimitiveBank::random_init(cfg.n_primitives, cfg.n_convexes, init_rng);
  MatX3 colors(cfg.n_convexes, 3);
  for (Index c = 0; c < cfg.n_convexes; ++c)
    for (int k = 0; k < 3; ++k) colors(c, k) = init_rng.uniform(0.25, 0.75);
  return run_fit_from(std::move(bank), std::move(colors), Phase::One, views, cfg, hooks);
}

}  // namespace dpa
