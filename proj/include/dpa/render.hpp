#pragma once

#include <cmath>
#include <vector>

#include "dpa/assembly.hpp"
#include "dpa/camera.hpp"
#include "dpa/image.hpp"
#include "dpa/parallel.hpp"
#include "dpa/sampler.hpp"

// Ray generation, depth sampling, and volume accumulation. Rays are clipped
// to the bounding sphere of the normalized object space (radius sqrt(3));
// rays that miss it are kept in the bundle but flagged invalid and render to
// color 0 / mask 0 with no gradient.

namespace dpa {

inline constexpr double kSceneRadius = 1.7320508075688772;  // sqrt(3)

struct RayBundle {
  MatX3 origins;              // N_rays x 3
  MatX3 directions;           // N_rays x 3, unit
  double near = 0, far = 0;   // bounds over the valid rays
  Index samples_per_ray = 0;  // R, set by sample_along_rays
  Mat depths;                 // N_rays x R
  Vec t_enter, t_exit;        // per-ray sphere interval
  std::vector<char> valid;    // per-ray hit flag

  Index ray_count() const { return origins.rows(); }
};

inline RayBundle generate_rays(const Camera& camera, const std::vector<PixelSample>& pixels) {
  camera.validate();
  const Index n = Index(pixels.size());
  RayBundle bundle;
  bundle.origins.resize(n, 3);
  bundle.directions.resize(n, 3);
  bundle.t_enter = Vec::Zero(n);
  bundle.t_exit = Vec::Zero(n);
  bundle.valid.assign(std::size_t(n), 0);

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (Index i = 0; i < n; ++i) {
    Vec3 o, d;
    camera.pixel_ray(double(pixels[std::size_t(i)].x), double(pixels[std::size_t(i)].y), o, d);
    bundle.origins.row(i) = o.transpose();
    bundle.directions.row(i) = d.transpose();
    double t0, t1;
    if (ray_sphere(o, d, kSceneRadius, t0, t1)) {
      bundle.valid[std::size_t(i)] = 1;
      bundle.t_enter[i] = t0;
      bundle.t_exit[i] = t1;
      lo = std::min(lo, t0);
      hi = std::max(hi, t1);
    }
  }
  bundle.near = std::isfinite(lo) ? lo : 0.0;
  bundle.far = hi;
  return bundle;
}

// R depths per ray: evenly spaced bin midpoints inside the ray's sphere
// interval, optionally jittered uniformly within each bin. Invalid rays get
// all-zero depths and points pinned at the ray origin.
inline QueryBatch sample_along_rays(RayBundle& bundle, Index R, bool stratified, Rng& rng) {
  if (R < 2) throw ValidationError("sample_along_rays: need at least 2 samples per ray");
  const Index n = bundle.ray_count();
  bundle.samples_per_ray = R;
  bundle.depths = Mat::Zero(n, R);

  MatX3 points(n * R, 3);
  for (Index i = 0; i < n; ++i) {
    if (!bundle.valid[std::size_t(i)]) {
      for (Index s = 0; s < R; ++s) points.row(i * R + s) = bundle.origins.row(i);
      continue;
    }
    const double t0 = bundle.t_enter[i], t1 = bundle.t_exit[i];
    const double bin = (t1 - t0) / double(R);
    for (Index s = 0; s < R; ++s) {
      const double u = stratified ? rng.uniform() : 0.5;
      const double t = t0 + (double(s) + u) * bin;
      bundle.depths(i, s) = t;
      points.row(i * R + s) =
          bundle.origins.row(i) + t * bundle.directions.row(i);
    }
  }
  return lift_points(points);
}

// Softmax color blend over active convexes with logits -10*O.
inline Vec3 point_color(const Vec& O_row, const MatX3& colors,
                        const std::vector<char>& active_mask) {
  double best = -std::numeric_limits<double>::infinity();
  for (Index c = 0; c < O_row.size(); ++c)
    if (active_mask[std::size_t(c)]) best = std::max(best, -10.0 * O_row[c]);
  if (!std::isfinite(best)) return Vec3::Zero();
  double denom = 0.0;
  Vec3 rgb = Vec3::Zero();
  for (Index c = 0; c < O_row.size(); ++c) {
    if (!active_mask[std::size_t(c)]) continue;
    const double e = std::exp(-10.0 * O_row[c] - best);
    denom += e;
    rgb += e * colors.row(c).transpose();
  }
  return rgb / denom;
}

// Color of the argmin convex; used for extraction and binary-mode preview.
inline Vec3 argmin_color(const Vec& O_row, const MatX3& colors,
                         const std::vector<char>& active_mask) {
  Index best_c = -1;
  double best = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < O_row.size(); ++c)
    if (active_mask[std::size_t(c)] && O_row[c] < best) {
      best = O_row[c];
      best_c = c;
    }
  return best_c < 0 ? Vec3::Zero() : Vec3(colors.row(best_c).transpose());
}

// Front-to-back accumulation: C = sum_i t_i a_i c_i, M = sum_i t_i a_i,
// t_i = prod_{k<i} (1 - a_k).
inline void accumulate(const Vec& alphas, const MatX3& colors, Vec3& pixel_color,
                       double& pixel_mask) {
  if ((alphas.array() < 0.0).any() || (alphas.array() > 1.0).any())
    throw ValidationError("accumulate: alphas must lie in [0,1]");
  pixel_color.setZero();
  pixel_mask = 0.0;
  double trans = 1.0;
  for (Index i = 0; i < alphas.size(); ++i) {
    const double wi = trans * alphas[i];
    pixel_color += wi * colors.row(i).transpose();
    pixel_mask += wi;
    trans *= (1.0 - alphas[i]);
  }
}

enum class Phase { One = 1, Two = 2, Three = 3 };

inline Vec opacity_for_phase(Phase phase, const Vec& a_star, const Vec& a_plus) {
  if (phase == Phase::One) return a_plus;
  return (a_star * -10.0).array().exp().matrix();
}

// ---------------------------------------------------------------------------
// Full-frame evaluation render (no gradients): exp(-10 a*) opacity with
// softmax-blended colors, row-parallel. Used for previews and image metrics.

struct RenderedView {
  Image image;
  Mat mask;  // rendered mask values in [0,1]
};

inline RenderedView render_view(const PrimitiveBank& bank, const MatX3& colors,
                                const Camera& camera, Index R = 96, int threads = 0) {
  camera.validate();
  RenderedView out;
  out.image = Image::zeros(camera.width, camera.height);
  out.mask = Mat::Zero(camera.height, camera.width);

  const FieldEvaluator ev(bank, 1);  // parallelism is over rows here
  if (ev.empty()) return out;
  const auto col_ids = ev.convex_ids();
  MatX3 active_colors(Index(col_ids.size()), 3);
  for (std::size_t k = 0; k < col_ids.size(); ++k)
    active_colors.row(Index(k)) = colors.row(col_ids[k]);
  const std::vector<char> all_active(col_ids.size(), 1);

  parallel_for_ranges(camera.height, 8, threads, [&](Index y0, Index y1, Index) {
    for (Index y = y0; y < y1; ++y) {
      for (Index x = 0; x < camera.width; ++x) {
        Vec3 o, d;
        camera.pixel_ray(double(x), double(y), o, d);
        double t0, t1;
        if (!ray_sphere(o, d, kSceneRadius, t0, t1)) continue;
        const double bin = (t1 - t0) / double(R);
        MatX3 pts(R, 3);
        for (Index s = 0; s < R; ++s)
          pts.row(s) = (o + (t0 + (double(s) + 0.5) * bin) * d).transpose();
        const Mat O = ev.membership(pts);
        const Vec a_star = O.rowwise().minCoeff();
        const Vec alphas = (a_star * -10.0).array().exp().min(1.0).matrix();
        MatX3 sample_colors(R, 3);
        for (Index s = 0; s < R; ++s)
          sample_colors.row(s) =
              point_color(O.row(s).transpose(), active_colors, all_active).transpose();
        Vec3 c;
        double m;
        accumulate(alphas, sample_colors, c, m);
        out.image.set_pixel(y, x, c);
        out.mask(y, x) = m;
      }
    }
  });
  return out;
}

}  // namespace dpa
