#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/assembly.hpp"
#include "dpa/extract.hpp"
#include "dpa/openscad.hpp"

using namespace dpa;
using Catch::Approx;

namespace {

Eigen::Matrix<double, 1, 7> sphere_row(double r, const Vec3& c = Vec3::Zero()) {
  Eigen::Matrix<double, 1, 7> row;
  row << 1, 1, 1, -2 * c[0], -2 * c[1], -2 * c[2], c.squaredNorm() - r * r;
  return row;
}

PrimitiveBank sphere_bank(double r, const Vec3& c = Vec3::Zero()) {
  PrimitiveBank bank;
  bank.params.resize(1, 7);
  bank.params = sphere_row(r, c);
  bank.selection = Mat::Ones(1, 1);
  bank.weights = Vec::Ones(1);
  bank.mode = SelectionMode::Binary;
  return bank;
}

PrimitiveBank cube_bank(double h) {
  PrimitiveBank bank;
  bank.params = Mat::Zero(6, 7);
  for (int axis = 0; axis < 3; ++axis) {
    bank.params(2 * axis, 3 + axis) = 1.0;
    bank.params(2 * axis, 6) = -h;
    bank.params(2 * axis + 1, 3 + axis) = -1.0;
    bank.params(2 * axis + 1, 6) = -h;
  }
  bank.selection = Mat::Ones(6, 1);
  bank.weights = Vec::Ones(1);
  bank.mode = SelectionMode::Binary;
  return bank;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t at = text.find(needle); at != std::string::npos;
       at = text.find(needle, at + needle.size()))
    ++n;
  return n;
}

// Pulls the three extents out of every "cube([a, b, c]" in the script.
std::vector<Vec3> parse_cube_extents(const std::string& text) {
  std::vector<Vec3> out;
  for (std::size_t at = text.find("cube(["); at != std::string::npos;
       at = text.find("cube([", at + 1)) {
    std::istringstream in(text.substr(at + 6));
    Vec3 e;
    char sep;
    in >> e[0] >> sep >> e[1] >> sep >> e[2];
    REQUIRE(in.good());
    out.push_back(e);
  }
  return out;
}

// Regular grid filling an axis-aligned box of the given full extents.
MatX3 box_cloud(const Vec3& extents, int per_axis) {
  MatX3 pts(per_axis * per_axis * per_axis, 3);
  Index row = 0;
  for (int i = 0; i < per_axis; ++i)
    for (int j = 0; j < per_axis; ++j)
      for (int k = 0; k < per_axis; ++k) {
        const Vec3 frac(double(i) / (per_axis - 1), double(j) / (per_axis - 1),
                        double(k) / (per_axis - 1));
        pts.row(row++) = ((frac.array() - 0.5) * extents.array()).matrix().transpose();
      }
  return pts;
}

TriMesh flat_square() {
  TriMesh mesh;
  mesh.vertices.resize(4, 3);
  mesh.vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  mesh.faces.resize(2, 3);
  mesh.faces << 0, 1, 2, 0, 2, 3;
  return mesh;
}

std::string temp_path(const std::string& name) { return "/tmp/dpa_test_" + name; }

}  // namespace

TEST_CASE("fit_obb recovers a rotated box", "[openscad]") {
  const Vec3 extents(0.3, 0.5, 0.8);
  const MatX3 cloud = box_cloud(extents, 7);

  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(0.7, Vec3(1, 2, -1).normalized()) *
       Eigen::AngleAxisd(-0.4, Vec3::UnitY()))
          .toRotationMatrix();
  const Vec3 shift(0.2, -0.6, 0.35);
  MatX3 world = cloud * rot.transpose();
  world.rowwise() += shift.transpose();

  const ObbFit fit = fit_obb(world);

  SECTION("axes stay orthonormal") {
    const Eigen::Matrix3d gram = fit.axes.transpose() * fit.axes;
    REQUIRE((gram - Eigen::Matrix3d::Identity()).norm() == Approx(0.0).margin(1e-9));
    REQUIRE(fit.axes.determinant() == Approx(1.0).margin(1e-9));
  }

  SECTION("extents match up to axis order") {
    std::vector<double> got{fit.extents[0], fit.extents[1], fit.extents[2]};
    std::vector<double> want{extents[0], extents[1], extents[2]};
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    for (int k = 0; k < 3; ++k) REQUIRE(got[k] == Approx(want[k]).epsilon(0.02));
  }

  SECTION("center and volume") {
    REQUIRE((fit.center - shift).norm() == Approx(0.0).margin(0.02));
    const Vec3 aabb = (world.colwise().maxCoeff() - world.colwise().minCoeff()).transpose();
    REQUIRE(fit.extents.prod() <= aabb.prod() + 1e-12);
  }

  SECTION("every input point lies inside the fitted box") {
    const MatX3 local = (world.rowwise() - fit.center.transpose()) * fit.axes;
    for (int axis = 0; axis < 3; ++axis) {
      REQUIRE(local.col(axis).minCoeff() >= -fit.extents[axis] / 2 - 1e-9);
      REQUIRE(local.col(axis).maxCoeff() <= fit.extents[axis] / 2 + 1e-9);
    }
  }
}

TEST_CASE("fitted boxes match analytic shapes", "[openscad]") {
  SECTION("axis-aligned cuboid") {
    const double hs = 0.41;
    const PartMesh parts = extract_parts(cube_bank(hs), 64, 0.01, 1);
    REQUIRE(parts.part_count() == 1);

    const std::string path = temp_path("cuboid.scad");
    export_openscad(parts, path, ScadMode::FittedBox);
    const std::string text = slurp(path);

    const ScadCheck check = check_openscad(text);
    INFO(check.error);
    REQUIRE(check.ok);

    const std::vector<Vec3> cubes = parse_cube_extents(text);
    REQUIRE(cubes.size() == 1);
    for (int axis = 0; axis < 3; ++axis)
      REQUIRE(cubes[0][axis] == Approx(2 * hs).epsilon(0.02));
  }

  SECTION("sphere collapses to a cube of side one diameter") {
    const double radius = 0.5;
    const double r_iso = std::sqrt(radius * radius + 0.01);
    const PartMesh parts = extract_parts(sphere_bank(radius), 64, 0.01, 1);
    REQUIRE(parts.part_count() == 1);

    const std::string path = temp_path("sphere.scad");
    export_openscad(parts, path, ScadMode::FittedBox);
    const std::vector<Vec3> cubes = parse_cube_extents(slurp(path));
    REQUIRE(cubes.size() == 1);
    for (int axis = 0; axis < 3; ++axis)
      REQUIRE(cubes[0][axis] == Approx(2 * r_iso).epsilon(0.02));
  }
}

TEST_CASE("polyhedron mode emits one solid per part inside a union", "[openscad]") {
  PrimitiveBank bank;
  bank.params.resize(2, 7);
  bank.params.row(0) = sphere_row(0.35, Vec3(-0.5, 0, 0));
  bank.params.row(1) = sphere_row(0.3, Vec3(0.5, 0, 0));
  bank.selection = Mat::Zero(2, 3);
  bank.selection(0, 0) = 1.0;
  bank.selection(1, 2) = 1.0;
  bank.weights = Vec::Ones(3);
  bank.mode = SelectionMode::Binary;

  MatX3 colors(3, 3);
  colors << 0.8, 0.2, 0.2, 0.5, 0.5, 0.5, 0.1, 0.3, 0.9;

  const PartMesh parts = extract_parts(bank, colors, 48, 0.01, 1);
  REQUIRE(parts.part_count() == 2);

  const std::string path = temp_path("pair.scad");
  export_openscad(parts, path, ScadMode::Polyhedron);
  const std::string text = slurp(path);

  const ScadCheck check = check_openscad(text);
  INFO(check.error);
  REQUIRE(check.ok);

  REQUIRE(text.rfind("union() {", 0) == 0);
  REQUIRE(count_occurrences(text, "polyhedron(points = [") == 2);
  REQUIRE(count_occurrences(text, "color([") == 2);
  REQUIRE(text.find("color([0.8, 0.2, 0.2])") != std::string::npos);
  REQUIRE(text.find("color([0.1, 0.3, 0.9])") != std::string::npos);
  REQUIRE(count_occurrences(text, "cube(") == 0);

  SECTION("fitted-box mode emits one cube per part") {
    export_openscad(parts, path, ScadMode::FittedBox);
    const std::string boxes = slurp(path);
    REQUIRE(check_openscad(boxes).ok);
    REQUIRE(count_occurrences(boxes, "multmatrix([") == 2);
    REQUIRE(parse_cube_extents(boxes).size() == 2);
    REQUIRE(count_occurrences(boxes, "polyhedron(") == 0);
  }
}

TEST_CASE("degenerate parts are skipped with a warning", "[openscad]") {
  PartMesh shape;
  Part good;
  good.convex_id = 0;
  good.color = Vec3(0.6, 0.6, 0.6);
  good.mesh = extract_mesh(sphere_bank(0.4), 32, 0.01, 1);
  Part flat;
  flat.convex_id = 1;
  flat.color = Vec3(0.2, 0.2, 0.2);
  flat.mesh = flat_square();
  shape.parts = {good, flat};
  shape.merged = good.mesh;

  std::vector<std::string> warnings;
  WarningSink::instance().attach(&warnings);
  const std::string path = temp_path("degenerate.scad");
  export_openscad(shape, path, ScadMode::FittedBox);
  WarningSink::instance().detach();

  REQUIRE(warnings.size() == 1);
  REQUIRE(warnings[0].find("degenerate part 1") != std::string::npos);

  const std::string text = slurp(path);
  REQUIRE(check_openscad(text).ok);
  REQUIRE(parse_cube_extents(text).size() == 1);

  SECTION("polyhedron mode skips it too") {
    WarningSink::instance().attach(&warnings);
    export_openscad(shape, path, ScadMode::Polyhedron);
    WarningSink::instance().detach();
    REQUIRE(count_occurrences(slurp(path), "polyhedron(") == 1);
  }

  SECTION("empty part list still writes a valid script") {
    PartMesh empty;
    WarningSink::instance().attach(&warnings);
    export_openscad(empty, path, ScadMode::Polyhedron);
    WarningSink::instance().detach();
    REQUIRE(!warnings.empty());
    REQUIRE(warnings.back().find("no parts") != std::string::npos);
    REQUIRE(check_openscad(slurp(path)).ok);
  }

  SECTION("unwritable path names the file") {
    REQUIRE_THROWS_WITH(export_openscad(shape, "/nonexistent/x.scad", ScadMode::Polyhedron),
                        Catch::Matchers::ContainsSubstring("/nonexistent/x.scad"));
  }
}

TEST_CASE("grammar checker accepts good scripts and rejects bad ones", "[openscad]") {
  SECTION("accepts hand-written valid scripts") {
    REQUIRE(check_openscad("union() { }").ok);
    REQUIRE(check_openscad("cube([1, 2, 3], center = true);").ok);
    REQUIRE(check_openscad("// comment\nunion() {\n  color([1, 0, 0]) sphere(r = 2);\n}\n")
                .ok);
    REQUIRE(check_openscad("multmatrix([[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]) "
                           "cube([1,1,1]);")
                .ok);
    REQUIRE(check_openscad("").ok);
  }

  SECTION("rejects malformed scripts with a reason") {
    ScadCheck c = check_openscad("union() { cube([1,1,1]); ");
    REQUIRE_FALSE(c.ok);
    REQUIRE(c.error.find("}") != std::string::npos);

    c = check_openscad("frobnicate(1);");
    REQUIRE_FALSE(c.ok);
    REQUIRE(c.error.find("frobnicate") != std::string::npos);

    c = check_openscad("cube([1, 2, 3], center = true)");
    REQUIRE_FALSE(c.ok);

    c = check_openscad("cube([1, nan, 3]);");
    REQUIRE_FALSE(c.ok);
    REQUIRE(c.error.find("nan") != std::string::npos);

    c = check_openscad("cube([1, 2, 3);");
    REQUIRE_FALSE(c.ok);
    REQUIRE(c.error.find("bracket") != std::string::npos);

    REQUIRE_FALSE(check_openscad("cube(;);").ok);
    REQUIRE_FALSE(check_openscad("union() { 42; }").ok);
  }

  SECTION("file variant reads from disk") {
    const std::string path = temp_path("check.scad");
    std::ofstream(path) << "union() { cube([1, 1, 1]); }\n";
    REQUIRE(check_openscad_file(path).ok);
    REQUIRE_THROWS_WITH(check_openscad_file("/nonexistent/y.scad"),
                        Catch::Matchers::ContainsSubstring("/nonexistent/y.scad"));
  }
}
