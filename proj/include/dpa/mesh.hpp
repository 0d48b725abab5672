#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dpa/common.hpp"
#include "dpa/rng.hpp"

// Indexed triangle meshes in normalized object space plus area-weighted
// surface sampling, the common currency between extraction and evaluation.

namespace dpa {

using FaceMat = Eigen::Matrix<Index, Eigen::Dynamic, 3>;

struct TriMesh {
  MatX3 vertices;  // V x 3
  FaceMat faces;   // F x 3 vertex indices, CCW when viewed from outside

  Index vertex_count() const { return vertices.rows(); }
  Index face_count() const { return faces.rows(); }
  bool empty() const { return faces.rows() == 0; }

  void validate() const {
    if (!vertices.allFinite())
      throw ValidationError("TriMesh: non-finite vertex positions");
    const Index V = vertices.rows();
    for (Index f = 0; f < faces.rows(); ++f)
      for (int k = 0; k < 3; ++k)
        if (faces(f, k) < 0 || faces(f, k) >= V)
          throw ValidationError("TriMesh: face index out of range");
  }
};

inline Vec3 face_normal(const TriMesh& mesh, Index f) {
  const Vec3 a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
  const Vec3 b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
  const Vec3 c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
  const Vec3 n = (b - a).cross(c - a);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

inline double face_area(const TriMesh& mesh, Index f) {
  const Vec3 a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
  const Vec3 b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
  const Vec3 c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
  return 0.5 * (b - a).cross(c - a).norm();
}

inline double surface_area(const TriMesh& mesh) {
  double area = 0;
  for (Index f = 0; f < mesh.face_count(); ++f) area += face_area(mesh, f);
  return area;
}

inline void bounding_box(const TriMesh& mesh, Vec3& lo, Vec3& hi) {
  if (mesh.vertex_count() == 0)
    throw ValidationError("bounding_box: empty mesh");
  lo = mesh.vertices.colwise().minCoeff().transpose();
  hi = mesh.vertices.colwise().maxCoeff().transpose();
}

struct SurfaceSamples {
  MatX3 points;   // n x 3
  MatX3 normals;  // n x 3, per-face normals
};

// n points drawn area-weighted over the triangles, uniform within each via
// the sqrt barycentric map. Deterministic for a fixed seed.
inline SurfaceSamples sample_surface(const TriMesh& mesh, Index n, std::uint64_t seed) {
  mesh.validate();
  if (mesh.empty()) throw ValidationError("sample_surface: empty mesh");
  if (n < 1) throw ValidationError("sample_surface: need at least one sample");

  std::vector<double> cumulative(std::size_t(mesh.face_count()));
  double total = 0;
  for (Index f = 0; f < mesh.face_count(); ++f) {
    total += face_area(mesh, f);
    cumulative[std::size_t(f)] = total;
  }
  if (!(total > 0.0)) throw ValidationError("sample_surface: mesh has zero area");

  Rng rng(seed);
  SurfaceSamples out;
  out.points.resize(n, 3);
  out.normals.resize(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double pick = rng.uniform(0.0, total);
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), pick);
    const Index f = Index(it - cumulative.begin()) < mesh.face_count()
                        ? Index(it - cumulative.begin())
                        : mesh.face_count() - 1;
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    const double u = std::sqrt(rng.uniform());
    const double v = rng.uniform();
    out.points.row(i) = ((1.0 - u) * a + u * (1.0 - v) * b + u * v * c).transpose();
    out.normals.row(i) = face_normal(mesh, f).transpose();
  }
  return out;
}

}  // namespace dpa
