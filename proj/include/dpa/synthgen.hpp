#pragma once

#include <Eigen/Geometry>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/camera.hpp"
#include "dpa/grid.hpp"
#include "dpa/image.hpp"
#include "dpa/marching_cubes.hpp"
#include "dpa/mesh.hpp"
#include "dpa/parallel.hpp"
#include "dpa/render.hpp"

// Analytic CSG scenes rendered exactly: the ground-truth oracle for
// end-to-end tests. Solids are closed, composition is a union, and every
// query is deterministic arithmetic on doubles.

namespace dpa {

enum class SolidKind { Sphere, Box, Cylinder, Ellipsoid };

struct AnalyticSolid {
  SolidKind kind = SolidKind::Sphere;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // local-to-world
  Vec3 center = Vec3::Zero();
  // Sphere: scale[0] = radius. Box: half extents. Cylinder: scale[0] =
  // radius, scale[1] = half length along local z. Ellipsoid: semi-axes.
  Vec3 scale = Vec3::Ones();
  Vec3 color = Vec3::Constant(0.7);
};

inline AnalyticSolid make_sphere(double radius, const Vec3& center, const Vec3& color) {
  AnalyticSolid s;
  s.kind = SolidKind::Sphere;
  s.center = center;
  s.scale = Vec3::Constant(radius);
  s.color = color;
  return s;
}

inline AnalyticSolid make_box(const Vec3& half_extents, const Vec3& center,
                              const Vec3& color,
                              const Eigen::Matrix3d& rotation = Eigen::Matrix3d::Identity()) {
  AnalyticSolid s;
  s.kind = SolidKind::Box;
  s.rotation = rotation;
  s.center = center;
  s.scale = half_extents;
  s.color = color;
  return s;
}

inline AnalyticSolid make_cylinder(double radius, double half_length, const Vec3& center,
                                   const Vec3& color,
                                   const Eigen::Matrix3d& rotation = Eigen::Matrix3d::Identity()) {
  AnalyticSolid s;
  s.kind = SolidKind::Cylinder;
  s.rotation = rotation;
  s.center = center;
  s.scale = Vec3(radius, half_length, 0.0);
  s.color = color;
  return s;
}

inline AnalyticSolid make_ellipsoid(const Vec3& semi_axes, const Vec3& center,
                                    const Vec3& color,
                                    const Eigen::Matrix3d& rotation = Eigen::Matrix3d::Identity()) {
  AnalyticSolid s;
  s.kind = SolidKind::Ellipsoid;
  s.rotation = rotation;
  s.center = center;
  s.scale = semi_axes;
  s.color = color;
  return s;
}

// Implicit value: negative inside, zero on the surface, increasing outward.
inline double solid_value(const AnalyticSolid& s, const Vec3& p) {
  const Vec3 q = s.rotation.transpose() * (p - s.center);
  switch (s.kind) {
    case SolidKind::Sphere:
      return q.norm() - s.scale[0];
    case SolidKind::Box:
      return (q.cwiseAbs() - s.scale).maxCoeff();
    case SolidKind::Cylinder:
      return std::max(std::hypot(q[0], q[1]) - s.scale[0],
                      std::abs(q[2]) - s.scale[1]);
    case SolidKind::Ellipsoid:
      return (q.array() / s.scale.array()).matrix().squaredNorm() - 1.0;
  }
  return 0.0;
}

inline bool solid_contains(const AnalyticSolid& s, const Vec3& p) {
  return solid_value(s, p) <= 0.0;
}

struct AnalyticScene {
  std::vector<AnalyticSolid> solids;

  // Conservative world-space bound: center +- |R| * local half extents.
  void validate() const {
    if (solids.empty()) throw ValidationError("AnalyticScene: no solids");
    for (const AnalyticSolid& s : solids) {
      if ((s.rotation * s.rotation.transpose() - Eigen::Matrix3d::Identity())
              .cwiseAbs()
              .maxCoeff() > 1e-9)
        throw ValidationError("AnalyticScene: solid rotation is not orthonormal");
      Vec3 half = s.scale;
      if (s.kind == SolidKind::Sphere) half = Vec3::Constant(s.scale[0]);
      if (s.kind == SolidKind::Cylinder) half = Vec3(s.scale[0], s.scale[0], s.scale[1]);
      if (half.minCoeff() <= 0.0)
        throw ValidationError("AnalyticScene: solid has non-positive size");
      const Vec3 world_half = s.rotation.cwiseAbs() * half;
      if (((s.center + world_half).array() > 1.0).any() ||
          ((s.center - world_half).array() < -1.0).any())
        throw ValidationError("AnalyticScene: solid escapes [-1,1]^3");
    }
  }

  double value(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const AnalyticSolid& s : solids) best = std::min(best, solid_value(s, p));
    return best;
  }

  // Lowest-index solid containing the point, -1 when outside.
  int owner(const Vec3& p) const {
    for (std::size_t i = 0; i < solids.size(); ++i)
      if (solid_contains(solids[i], p)) return int(i);
    return -1;
  }
};

struct OccupancyResult {
  std::vector<int> owner;  // per point, -1 = outside
  bool inside(Index i) const { return owner[std::size_t(i)] >= 0; }
  Index count_inside() const {
    Index n = 0;
    for (int o : owner) n += (o >= 0);
    return n;
  }
};

inline OccupancyResult analytic_occupancy(const AnalyticScene& scene, const MatX3& points) {
  scene.validate();
  OccupancyResult result;
  result.owner.resize(std::size_t(points.rows()));
  for (Index i = 0; i < points.rows(); ++i)
    result.owner[std::size_t(i)] = scene.owner(points.row(i).transpose());
  return result;
}

// ---------------------------------------------------------------------------
// Exact first-hit rendering: coarse march, then bisection onto the surface.

struct GtRenderConfig {
  double step = 0.005;    // coarse march step; must undercut the thinnest solid
  int bisect_iters = 50;  // surface refinement
  Vec3 light = Vec3(0.5, 0.8, -0.33).normalized();  // direction toward the light
  double ambient = 0.15;
  int threads = 0;
};

namespace detail {

inline constexpr double kSceneRadius = 1.7320508075688772;  // bounds [-1,1]^3

// First-hit parameter along origin + t * dir, or a negative value on miss.
inline double first_hit(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir,
                        double step, int bisect_iters) {
  double t0, t1;
  if (!ray_sphere(origin, dir, kSceneRadius, t0, t1)) return -1.0;
  double prev = t0;
  if (scene.value(origin + t0 * dir) <= 0.0) return t0;  // started inside
  const Index steps = Index(std::ceil((t1 - t0) / step));
  for (Index k = 1; k <= steps; ++k) {
    const double t = std::min(t0 + double(k) * step, t1);
    if (scene.value(origin + t * dir) <= 0.0) {
      double lo = prev, hi = t;  // value(lo) > 0 >= value(hi)
      for (int it = 0; it < bisect_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        (scene.value(origin + mid * dir) <= 0.0 ? hi : lo) = mid;
      }
      return hi;
    }
    prev = t;
  }
  return -1.0;
}

inline Vec3 solid_normal(const AnalyticSolid& s, const Vec3& p) {
  const double h = 1e-5;
  Vec3 n;
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 dp = Vec3::Zero();
    dp[axis] = h;
    n[axis] = solid_value(s, p + dp) - solid_value(s, p - dp);
  }
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::UnitY();
}

}  // namespace detail

inline std::vector<RenderedView> render_gt_views(const AnalyticScene& scene,
                                                 const std::vector<Camera>& cameras,
                                                 const GtRenderConfig& cfg = {}) {
  scene.validate();
  std::vector<RenderedView> views;
  views.reserve(cameras.size());
  for (const Camera& camera : cameras) {
    camera.validate();
    RenderedView view;
    view.image = Image::zeros(camera.width, camera.height);
    view.mask = Mask::Zero(camera.height, camera.width);
    parallel_for_ranges(camera.height, 8, cfg.threads, [&](Index y0, Index y1, Index) {
      for (Index y = y0; y < y1; ++y)
        for (Index x = 0; x < camera.width; ++x) {
          Vec3 origin, dir;
          camera.pixel_ray(double(x), double(y), origin, dir);
          const double t =
              detail::first_hit(scene, origin, dir, cfg.step, cfg.bisect_iters);
          if (t < 0.0) continue;
          const Vec3 p = origin + t * dir;
          const int owner = scene.owner(p);
          const AnalyticSolid& solid = scene.solids[std::size_t(owner >= 0 ? owner : 0)];
          const Vec3 n = detail::solid_normal(solid, p);
          const double lambert =
              cfg.ambient + (1.0 - cfg.ambient) * std::max(0.0, n.dot(cfg.light));
          view.mask(y, x) = 1.0;
          view.image.set_pixel(y, x, (solid.color * lambert).cwiseMin(1.0).cwiseMax(0.0));
        }
    });
    views.push_back(std::move(view));
  }
  return views;
}

// Marching cubes over the analytic union field at iso 0.
inline TriMesh gt_mesh(const AnalyticScene& scene, Index resolution = 256,
                       int threads = 0) {
  scene.validate();
  GridSpec grid;
  grid.resolution = resolution;
  const int nthreads = threads;
  auto field = [&scene, nthreads](const MatX3& pts) {
    Vec values(pts.rows());
    parallel_for_ranges(pts.rows(), 1024, nthreads, [&](Index b, Index e, Index) {
      for (Index i = b; i < e; ++i) values[i] = scene.value(pts.row(i).transpose());
    });
    return values;
  };
  return marching_cubes(field, grid, 0.0);
}

// ---------------------------------------------------------------------------
// Pinned catalog: scene + 4-view rig (3 training azimuths plus a held-out
// view), cameras on a 30-degree-elevation ring looking at the origin.

struct SceneSpec {
  std::string name;
  AnalyticScene scene;
  std::vector<Camera> cameras;  // cameras[3] is the held-out view
  Index holdout_index = 3;
};

inline Camera rig_camera(double azimuth_deg, double elevation_deg, Index resolution,
                         double distance = 2.2) {
  const double az = azimuth_deg * M_PI / 180.0;
  const double el = elevation_deg * M_PI / 180.0;
  const Vec3 eye(distance * std::cos(el) * std::cos(az), distance * std::sin(el),
                 distance * std::cos(el) * std::sin(az));
  return Camera::look_at(eye, Vec3::Zero(), Vec3::UnitY(), double(resolution),
                         resolution, resolution);
}

inline std::vector<Camera> standard_rig(Index resolution = 128) {
  return {rig_camera(0.0, 30.0, resolution), rig_camera(120.0, 30.0, resolution),
          rig_camera(240.0, 30.0, resolution), rig_camera(60.0, 30.0, resolution)};
}

inline std::vector<SceneSpec> standard_scenes(Index resolution = 128) {
  const std::vector<Camera> rig = standard_rig(resolution);
  std::vector<SceneSpec> catalog;

  {
    SceneSpec spec{"sphere", {}, rig};
    spec.scene.solids = {make_sphere(0.6, Vec3::Zero(), Vec3(0.85, 0.35, 0.25))};
    catalog.push_back(std::move(spec));
  }
  {
    SceneSpec spec{"box", {}, rig};
    spec.scene.solids = {
        make_box(Vec3(0.5, 0.35, 0.45), Vec3::Zero(), Vec3(0.3, 0.55, 0.85))};
    catalog.push_back(std::move(spec));
  }
  {
    SceneSpec spec{"two-boxes-L", {}, rig};
    spec.scene.solids = {
        make_box(Vec3(0.5, 0.15, 0.2), Vec3(0.0, -0.25, 0.0), Vec3(0.85, 0.6, 0.2)),
        make_box(Vec3(0.15, 0.35, 0.2), Vec3(-0.35, 0.25, 0.0), Vec3(0.2, 0.7, 0.4))};
    catalog.push_back(std::move(spec));
  }
  {
    SceneSpec spec{"table", {}, rig};
    const Vec3 top_color(0.75, 0.5, 0.3);
    const Vec3 leg_color(0.5, 0.35, 0.2);
    spec.scene.solids = {
        make_box(Vec3(0.55, 0.06, 0.38), Vec3(0.0, 0.32, 0.0), top_color)};
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0})
        spec.scene.solids.push_back(make_box(Vec3(0.06, 0.32, 0.06),
                                             Vec3(0.45 * sx, -0.06, 0.28 * sz),
                                             leg_color));
    catalog.push_back(std::move(spec));
  }
  {
    SceneSpec spec{"dumbbell", {}, rig};
    Eigen::Matrix3d z_to_x;  // exact quarter turn about y
    z_to_x << 0, 0, 1, 0, 1, 0, -1, 0, 0;
    spec.scene.solids = {
        make_sphere(0.28, Vec3(-0.45, 0, 0), Vec3(0.8, 0.25, 0.25)),
        make_sphere(0.28, Vec3(0.45, 0, 0), Vec3(0.25, 0.25, 0.8)),
        make_cylinder(0.1, 0.45, Vec3::Zero(), Vec3(0.6, 0.6, 0.6), z_to_x)};
    catalog.push_back(std::move(spec));
  }
  {
    // Concave: an open-top container. Documented negative example for the
    // union-of-convexes model, not an accuracy target.
    SceneSpec spec{"bowl", {}, rig};
    const Vec3 c(0.6, 0.55, 0.45);
    spec.scene.solids = {
        make_box(Vec3(0.4, 0.05, 0.4), Vec3(0.0, -0.35, 0.0), c),
        make_box(Vec3(0.05, 0.25, 0.4), Vec3(-0.35, -0.05, 0.0), c),
        make_box(Vec3(0.05, 0.25, 0.4), Vec3(0.35, -0.05, 0.0), c),
        make_box(Vec3(0.4, 0.25, 0.05), Vec3(0.0, -0.05, -0.35), c),
        make_box(Vec3(0.4, 0.25, 0.05), Vec3(0.0, -0.05, 0.35), c)};
    catalog.push_back(std::move(spec));
  }

  for (SceneSpec& spec : catalog) spec.scene.validate();
  return catalog;
}

inline SceneSpec standard_scene(const std::string& name, Index resolution = 128) {
  std::vector<SceneSpec> catalog = standard_scenes(resolution);
  for (SceneSpec& spec : catalog)
    if (spec.name == name) return std::move(spec);
  std::ostringstream msg;
  msg << "unknown scene '" << name << "'; catalog:";
  for (const SceneSpec& spec : catalog) msg << ' ' << spec.name;
  throw ValidationError(msg.str());
}

}  // namespace dpa
