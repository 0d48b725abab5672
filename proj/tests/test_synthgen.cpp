#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dpa/rng.hpp"
#include "dpa/synthgen.hpp"

using namespace dpa;
using Catch::Approx;

namespace {

// From-scratch scalar containment tests, one formula per solid kind.
bool brute_contains(const AnalyticSolid& s, const Vec3& p) {
  const Vec3 d = p - s.center;
  const Vec3 ax = s.rotation.col(0), ay = s.rotation.col(1), az = s.rotation.col(2);
  const double qx = ax.dot(d), qy = ay.dot(d), qz = az.dot(d);
  switch (s.kind) {
    case SolidKind::Sphere:
      return d.squaredNorm() <= s.scale[0] * s.scale[0];
    case SolidKind::Box:
      return std::abs(qx) <= s.scale[0] && std::abs(qy) <= s.scale[1] &&
             std::abs(qz) <= s.scale[2];
    case SolidKind::Cylinder:
      return qx * qx + qy * qy <= s.scale[0] * s.scale[0] &&
             std::abs(qz) <= s.scale[1];
    case SolidKind::Ellipsoid: {
      const double u = qx / s.scale[0], v = qy / s.scale[1], w = qz / s.scale[2];
      return u * u + v * v + w * w <= 1.0;
    }
  }
  return false;
}

int brute_owner(const AnalyticScene& scene, const Vec3& p) {
  for (std::size_t i = 0; i < scene.solids.size(); ++i)
    if (brute_contains(scene.solids[i], p)) return int(i);
  return -1;
}

struct EdgeAudit {
  bool watertight = true;
  Index undirected_edges = 0;
};

EdgeAudit audit_edges(const TriMesh& mesh) {
  std::map<std::pair<Index, Index>, std::pair<int, int>> edges;
  for (Index f = 0; f < mesh.face_count(); ++f)
    for (int k = 0; k < 3; ++k) {
      const Index a = mesh.faces(f, k);
      const Index b = mesh.faces(f, (k + 1) % 3);
      auto& counts = edges[{std::min(a, b), std::max(a, b)}];
      (a < b ? counts.first : counts.second) += 1;
    }
  EdgeAudit audit;
  audit.undirected_edges = Index(edges.size());
  for (const auto& [edge, counts] : edges)
    if (counts.first != 1 || counts.second != 1) audit.watertight = false;
  return audit;
}

Index euler_characteristic(const TriMesh& mesh) {
  return mesh.vertex_count() - audit_edges(mesh).undirected_edges + mesh.face_count();
}

double signed_volume(const TriMesh& mesh) {
  double vol = 0;
  for (Index f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    vol += a.dot(b.cross(c)) / 6.0;
  }
  return vol;
}

double azimuth_deg(const Camera& cam) {
  const Vec3 c = cam.center();
  double az = std::atan2(c[2], c[0]) * 180.0 / M_PI;
  if (az < -1e-9) az += 360.0;
  return az;
}

double elevation_deg(const Camera& cam) {
  const Vec3 c = cam.center();
  return std::asin(c[1] / c.norm()) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("occupancy follows closed-union semantics", "[synthgen]") {
  SECTION("origin is inside a centered sphere") {
    AnalyticScene scene;
    scene.solids = {make_sphere(0.6, Vec3::Zero(), Vec3::Constant(0.5))};
    MatX3 pts(2, 3);
    pts << 0, 0, 0, 2, 0, 0;
    const OccupancyResult occ = analytic_occupancy(scene, pts);
    REQUIRE(occ.inside(0));
    REQUIRE(occ.owner[0] == 0);
    REQUIRE_FALSE(occ.inside(1));  // outside [-1,1]^3, outside any scene
    REQUIRE(occ.owner[1] == -1);
    REQUIRE(occ.count_inside() == 1);
  }

  SECTION("points on a box face count as inside") {
    AnalyticScene scene;
    scene.solids = {make_box(Vec3(0.5, 0.4, 0.3), Vec3::Zero(), Vec3::Constant(0.5))};
    MatX3 pts(3, 3);
    pts << 0.5, 0.0, 0.0,   // face
        0.5, 0.4, 0.3,      // corner
        0.5000001, 0, 0;    // just off the face
    const OccupancyResult occ = analytic_occupancy(scene, pts);
    REQUIRE(occ.inside(0));
    REQUIRE(occ.inside(1));
    REQUIRE_FALSE(occ.inside(2));
  }

  SECTION("overlap ties go to the lowest solid index") {
    AnalyticScene scene;
    scene.solids = {make_sphere(0.4, Vec3(-0.1, 0, 0), Vec3::Constant(0.2)),
                    make_sphere(0.4, Vec3(0.1, 0, 0), Vec3::Constant(0.8))};
    MatX3 pts(3, 3);
    pts << 0, 0, 0,  // inside both
        -0.45, 0, 0,  // only solid 0
        0.45, 0, 0;   // only solid 1
    const OccupancyResult occ = analytic_occupancy(scene, pts);
    REQUIRE(occ.owner[0] == 0);
    REQUIRE(occ.owner[1] == 0);
    REQUIRE(occ.owner[2] == 1);
  }

  SECTION("invalid scenes are rejected") {
    AnalyticScene empty;
    REQUIRE_THROWS_AS(analytic_occupancy(empty, MatX3::Zero(1, 3)), ValidationError);

    AnalyticScene escapes;
    escapes.solids = {make_sphere(0.5, Vec3(0.8, 0, 0), Vec3::Constant(0.5))};
    REQUIRE_THROWS_AS(escapes.validate(), ValidationError);

    AnalyticScene flat;
    flat.solids = {make_box(Vec3(0.5, 0.0, 0.5), Vec3::Zero(), Vec3::Constant(0.5))};
    REQUIRE_THROWS_AS(flat.validate(), ValidationError);
  }
}

TEST_CASE("occupancy matches a brute-force oracle on a million points", "[synthgen]") {
  const Eigen::Matrix3d tilt =
      Eigen::AngleAxisd(0.83, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  AnalyticScene mixed;
  mixed.solids = {
      make_ellipsoid(Vec3(0.5, 0.25, 0.35), Vec3(0.1, -0.1, 0.0),
                     Vec3::Constant(0.5), tilt),
      make_box(Vec3(0.3, 0.2, 0.25), Vec3(-0.2, 0.2, 0.1), Vec3::Constant(0.5),
               Eigen::AngleAxisd(-0.5, Vec3(0, 1, 1).normalized()).toRotationMatrix()),
      make_cylinder(0.15, 0.4, Vec3(0.2, 0.0, -0.2), Vec3::Constant(0.5), tilt)};
  mixed.validate();

  const std::vector<AnalyticScene> scenes = {standard_scene("table").scene,
                                             standard_scene("dumbbell").scene, mixed};

  Rng rng(404);
  const Index n = 1000000;
  MatX3 pts(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) pts(i, k) = rng.uniform(-1.1, 1.1);

  for (const AnalyticScene& scene : scenes) {
    const OccupancyResult occ = analytic_occupancy(scene, pts);
    Index mismatches = 0;
    for (Index i = 0; i < n; ++i)
      if (occ.owner[std::size_t(i)] != brute_owner(scene, pts.row(i).transpose()))
        ++mismatches;
    REQUIRE(mismatches == 0);
    REQUIRE(occ.count_inside() > 0);
  }
}

TEST_CASE("ground-truth rendering is exact and deterministic", "[synthgen]") {
  SECTION("camera aimed at empty space sees nothing") {
    const AnalyticScene scene = standard_scene("table").scene;
    const Camera away =
        Camera::look_at(Vec3(0, 0, -3), Vec3(0, 0, -5), Vec3::UnitY(), 64.0, 64, 64);
    const std::vector<RenderedView> views = render_gt_views(scene, {away});
    REQUIRE(views.size() == 1);
    REQUIRE(views[0].mask.sum() == 0.0);
    REQUIRE(views[0].image.r.cwiseAbs().sum() == 0.0);
    REQUIRE(views[0].image.g.cwiseAbs().sum() == 0.0);
    REQUIRE(views[0].image.b.cwiseAbs().sum() == 0.0);
  }

  SECTION("far camera sees a sphere as a disk of the analytic area") {
    const AnalyticScene scene = standard_scene("sphere").scene;
    const double dist = 40.0, focal = 2666.0, radius = 0.6;
    const Camera far_cam = Camera::look_at(Vec3(0, 0, -dist), Vec3::Zero(),
                                           Vec3::UnitY(), focal, 128, 128);
    const std::vector<RenderedView> views = render_gt_views(scene, {far_cam});
    const double pixel_radius = focal * std::tan(std::asin(radius / dist));
    const double analytic_area = M_PI * pixel_radius * pixel_radius;
    REQUIRE(views[0].mask.sum() == Approx(analytic_area).epsilon(0.02));

    SECTION("masks are strictly binary") {
      const Mask& m = views[0].mask;
      REQUIRE(((m.array() == 0.0) || (m.array() == 1.0)).all());
    }
  }

  SECTION("mirror-symmetric cameras produce mirrored masks") {
    // The dumbbell is symmetric under z -> -z, and so is the camera pair.
    const AnalyticScene scene = standard_scene("dumbbell").scene;
    const std::vector<Camera> pair = {rig_camera(30.0, 20.0, 96),
                                      rig_camera(-30.0, 20.0, 96)};
    const std::vector<RenderedView> views = render_gt_views(scene, pair);
    const Mask& a = views[0].mask;
    const Mask& b = views[1].mask;
    REQUIRE(a.sum() > 200.0);
    REQUIRE((a - b.rowwise().reverse()).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("rendering twice is bitwise identical") {
    const SceneSpec spec = standard_scene("two-boxes-L", 64);
    const std::vector<Camera> one_cam = {spec.cameras[0]};
    const std::vector<RenderedView> first = render_gt_views(spec.scene, one_cam);
    const std::vector<RenderedView> second = render_gt_views(spec.scene, one_cam);
    REQUIRE((first[0].mask - second[0].mask).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((first[0].image.r - second[0].image.r).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((first[0].image.g - second[0].image.g).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((first[0].image.b - second[0].image.b).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("mask pixels agree with an occupancy-based fine march") {
    const SceneSpec spec = standard_scene("two-boxes-L", 64);
    const std::vector<RenderedView> views =
        render_gt_views(spec.scene, {spec.cameras[1]});
    const Camera& cam = spec.cameras[1];
    Index disagreements = 0;
    for (Index y = 0; y < cam.height; ++y)
      for (Index x = 0; x < cam.width; ++x) {
        Vec3 origin, dir;
        cam.pixel_ray(double(x), double(y), origin, dir);
        double t0, t1;
        bool hit = false;
        if (ray_sphere(origin, dir, std::sqrt(3.0), t0, t1)) {
          const Index steps = Index((t1 - t0) / 0.002) + 1;
          MatX3 samples(steps, 3);
          for (Index k = 0; k < steps; ++k)
            samples.row(k) = (origin + (t0 + double(k) * 0.002) * dir).transpose();
          hit = analytic_occupancy(spec.scene, samples).count_inside() > 0;
        }
        if (hit != (views[0].mask(y, x) == 1.0)) ++disagreements;
      }
    REQUIRE(disagreements <= 8);  // grazing rays only
  }

  SECTION("foreground colors are lit solid colors") {
    const SceneSpec spec = standard_scene("sphere", 64);
    const std::vector<RenderedView> views = render_gt_views(spec.scene, {spec.cameras[0]});
    const Vec3 base = spec.scene.solids[0].color;
    for (Index y = 0; y < 64; ++y)
      for (Index x = 0; x < 64; ++x) {
        if (views[0].mask(y, x) == 0.0) continue;
        const Vec3 c = views[0].image.pixel(y, x);
        for (int k = 0; k < 3; ++k) {
          REQUIRE(c[k] >= 0.0);
          REQUIRE(c[k] <= base[k] + 1e-12);  // Lambert only darkens
        }
        // Ambient floor keeps the object visible everywhere.
        REQUIRE(c.maxCoeff() >= 0.15 * base.maxCoeff() - 1e-12);
      }
  }
}

TEST_CASE("the pinned catalog exposes the disparate-view rig", "[synthgen]") {
  const std::vector<SceneSpec> catalog = standard_scenes();

  SECTION("catalog names and sizes") {
    std::vector<std::string> names;
    for (const SceneSpec& spec : catalog) names.push_back(spec.name);
    REQUIRE(names == std::vector<std::string>{"sphere", "box", "two-boxes-L", "table",
                                              "dumbbell", "bowl"});
    REQUIRE(standard_scene("table").scene.solids.size() == 5);
    REQUIRE(standard_scene("dumbbell").scene.solids.size() == 3);
    REQUIRE(standard_scene("dumbbell").scene.solids[2].kind == SolidKind::Cylinder);
    REQUIRE(standard_scene("bowl").scene.solids.size() == 5);
  }

  SECTION("every scene validates and carries a 4-camera rig") {
    for (const SceneSpec& spec : catalog) {
      spec.scene.validate();
      REQUIRE(spec.cameras.size() == 4);
      REQUIRE(spec.holdout_index == 3);
      for (const Camera& cam : spec.cameras) {
        cam.validate();
        REQUIRE(cam.width == 128);
        REQUIRE(cam.height == 128);
        REQUIRE(cam.center().norm() == Approx(2.2).margin(1e-9));
        REQUIRE(elevation_deg(cam) == Approx(30.0).margin(1e-9));
      }
    }
  }

  SECTION("training azimuths are 120 degrees apart, holdout between them") {
    const SceneSpec& spec = catalog[0];
    REQUIRE(azimuth_deg(spec.cameras[0]) == Approx(0.0).margin(1e-9));
    REQUIRE(azimuth_deg(spec.cameras[1]) == Approx(120.0).margin(1e-9));
    REQUIRE(azimuth_deg(spec.cameras[2]) == Approx(240.0).margin(1e-9));
    REQUIRE(azimuth_deg(spec.cameras[3]) == Approx(60.0).margin(1e-9));
  }

  SECTION("resolution parameter scales the rig") {
    const SceneSpec small = standard_scene("box", 32);
    REQUIRE(small.cameras[0].width == 32);
    REQUIRE(small.cameras[0].fx == 32.0);
  }

  SECTION("unknown names list the catalog") {
    REQUIRE_THROWS_WITH(standard_scene("chair"),
                        Catch::Matchers::ContainsSubstring("chair") &&
                            Catch::Matchers::ContainsSubstring("dumbbell"));
  }
}

TEST_CASE("ground-truth meshes are watertight", "[synthgen]") {
  for (const SceneSpec& spec : standard_scenes()) {
    DYNAMIC_SECTION("scene " << spec.name) {
      const TriMesh mesh = gt_mesh(spec.scene, 256, 1);
      REQUIRE(mesh.face_count() > 0);
      mesh.validate();
      REQUIRE(audit_edges(mesh).watertight);
      REQUIRE(euler_characteristic(mesh) == 2);
      REQUIRE(signed_volume(mesh) > 0.0);
    }
  }

  SECTION("sphere and box volumes match the analytic solids") {
    const TriMesh sphere = gt_mesh(standard_scene("sphere").scene, 192, 1);
    REQUIRE(signed_volume(sphere) ==
            Approx(4.0 / 3.0 * M_PI * 0.6 * 0.6 * 0.6).epsilon(0.01));
    const TriMesh box = gt_mesh(standard_scene("box").scene, 192, 1);
    REQUIRE(signed_volume(box) == Approx(8.0 * 0.5 * 0.35 * 0.45).epsilon(0.01));
  }
}
