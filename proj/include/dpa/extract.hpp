#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/assembly.hpp"
#include "dpa/marching_cubes.hpp"

// Meshing of the fitted field: the merged a* surface, one mesh per convex
// part, and OBJ/PLY writers.

namespace dpa {

// Marching-cubes surface of the union field a* at the inside iso level.
inline TriMesh extract_mesh(const PrimitiveBank& bank, Index resolution = 128,
                            double iso = 0.01, int threads = 0) {
  if (resolution < 16)
    throw ValidationError("extract_mesh: resolution must be at least 16");
  bank.validate();
  const FieldEvaluator ev(bank, threads);
  if (ev.empty()) {
    warn("extract_mesh: no active convexes; returning an empty mesh");
    return TriMesh{};
  }
  GridSpec grid;
  grid.resolution = resolution;
  TriMesh mesh =
      marching_cubes([&](const MatX3& pts) { return ev.hard_occupancy(pts); }, grid, iso);
  if (mesh.empty()) warn("extract_mesh: field has no surface at the iso level");
  return mesh;
}

struct Part {
  Index convex_id = 0;  // column index in the bank
  Vec3 color = Vec3::Constant(0.7);
  TriMesh mesh;
};

struct PartMesh {
  std::vector<Part> parts;
  TriMesh merged;

  Index part_count() const { return Index(parts.size()); }
};

// Per-convex meshes at the same iso as the merged surface. Convexes without
// an interior grid sample produce no triangles and are omitted, so the part
// count matches the non-empty convex count reported by the fit.
inline PartMesh extract_parts(const PrimitiveBank& bank, const MatX3& colors,
                              Index resolution = 128, double iso = 0.01,
                              int threads = 0) {
  if (bank.mode != SelectionMode::Binary)
    throw ValidationError("extract_parts: selection must be binary");
  if (colors.rows() != 0 && colors.rows() != bank.convex_count())
    throw ValidationError("extract_parts: color table rows must match convex count");

  PartMesh out;
  out.merged = extract_mesh(bank, resolution, iso, threads);

  const FieldEvaluator ev(bank, threads);
  GridSpec grid;
  grid.resolution = resolution;
  for (std::size_t k = 0; k < ev.convex_ids().size(); ++k) {
    TriMesh mesh = marching_cubes(
        [&](const MatX3& pts) { return ev.membership_of(pts, Index(k)); }, grid, iso);
    if (mesh.empty()) continue;
    Part part;
    part.convex_id = ev.convex_ids()[k];
    if (colors.rows() > 0) part.color = colors.row(part.convex_id).transpose();
    part.mesh = std::move(mesh);
    out.parts.push_back(std::move(part));
  }
  return out;
}

inline PartMesh extract_parts(const PrimitiveBank& bank, Index resolution = 128,
                              double iso = 0.01, int threads = 0) {
  return extract_parts(bank, MatX3(0, 3), resolution, iso, threads);
}

// ---------------------------------------------------------------------------
// OBJ / PLY writers

namespace detail {

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ValidationError("export: cannot open " + path);
  return out;
}

inline std::string stem_of(const std::string& path) {
  const std::size_t slash = path.find_last_of('/');
  const std::size_t start = slash == std::string::npos ? 0 : slash + 1;
  const std::size_t dot = path.find_last_of('.');
  const std::size_t end = (dot == std::string::npos || dot < start) ? path.size() : dot;
  return path.substr(start, end - start);
}

inline void write_obj_mesh(std::ofstream& out, const TriMesh& mesh, Index vertex_base) {
  char buf[128];
  for (Index v = 0; v < mesh.vertex_count(); ++v) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", mesh.vertices(v, 0),
                  mesh.vertices(v, 1), mesh.vertices(v, 2));
    out << buf;
  }
  for (Index f = 0; f < mesh.face_count(); ++f)
    out << "f " << vertex_base + mesh.faces(f, 0) + 1 << ' '
        << vertex_base + mesh.faces(f, 1) + 1 << ' ' << vertex_base + mesh.faces(f, 2) + 1
        << '\n';
}

}  // namespace detail

// ASCII OBJ with one group per part and a material per part color in a
// sidecar .mtl next to the file. A PartMesh without parts exports the merged
// mesh as a single group.
inline void export_obj(const PartMesh& shape, const std::string& path) {
  const std::string stem = detail::stem_of(path);
  const std::string mtl_path =
      path.substr(0, path.size() - (path.size() >= 4 && path.substr(path.size() - 4) == ".obj"
                                        ? 4
                                        : 0)) +
      ".mtl";

  std::ofstream mtl = detail::open_out(mtl_path);
  char buf[160];
  if (shape.parts.empty()) {
    mtl << "newmtl shape\nKd 0.7 0.7 0.7\n";
  } else {
    for (const Part& part : shape.parts) {
      std::snprintf(buf, sizeof buf, "newmtl part_%lld\nKd %.6g %.6g %.6g\n",
                    static_cast<long long>(part.convex_id), part.color[0], part.color[1],
                    part.color[2]);
      mtl << buf;
    }
  }
  if (!mtl) throw ValidationError("export_obj: write failed for " + mtl_path);

  std::ofstream out = detail::open_out(path);
  out << "mtllib " << detail::stem_of(mtl_path) << ".mtl\n";
  if (shape.parts.empty()) {
    shape.merged.validate();
    out << "g shape\nusemtl shape\n";
    detail::write_obj_mesh(out, shape.merged, 0);
  } else {
    Index base = 0;
    for (const Part& part : shape.parts) {
      part.mesh.validate();
      out << "g part_" << part.convex_id << "\nusemtl part_" << part.convex_id << '\n';
      detail::write_obj_mesh(out, part.mesh, base);
      base += part.mesh.vertex_count();
    }
  }
  if (!out) throw ValidationError("export_obj: write failed for " + path);
}

inline void export_obj(const TriMesh& mesh, const std::string& path) {
  PartMesh shape;
  shape.merged = mesh;
  export_obj(shape, path);
}

// Binary little-endian PLY of a single mesh.
inline void export_ply(const TriMesh& mesh, const std::string& path) {
  mesh.validate();
  std::ofstream out = detail::open_out(path, true);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertex_count() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.face_count() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (Index v = 0; v < mesh.vertex_count(); ++v) {
    const float xyz[3] = {float(mesh.vertices(v, 0)), float(mesh.vertices(v, 1)),
                          float(mesh.vertices(v, 2))};
    out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
  }
  for (Index f = 0; f < mesh.face_count(); ++f) {
    const unsigned char n = 3;
    const std::int32_t idx[3] = {std::int32_t(mesh.faces(f, 0)),
                                 std::int32_t(mesh.faces(f, 1)),
                                 std::int32_t(mesh.faces(f, 2))};
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(idx), sizeof idx);
  }
  if (!out) throw ValidationError("export_ply: write failed for " + path);
}

// Reads the binary little-endian triangle PLY layout export_ply writes:
// float xyz vertices, uchar-count + int32 index faces.
inline TriMesh import_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("import_ply: cannot open " + path);

  std::string line;
  std::getline(in, line);
  if (line != "ply") throw ValidationError("import_ply: " + path + " is not a PLY file");
  Index n_vertices = -1, n_faces = -1;
  bool little_endian = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      little_endian = (fmt == "binary_little_endian");
    } else if (word == "element") {
      std::string kind;
      long long count = 0;
      ls >> kind >> count;
      if (kind == "vertex") n_vertices = Index(count);
      if (kind == "face") n_faces = Index(count);
    }
  }
  if (!little_endian)
    throw ValidationError("import_ply: " + path + " is not binary little-endian");
  if (n_vertices < 0 || n_faces < 0)
    throw ValidationError("import_ply: " + path + " lacks vertex/face elements");

  TriMesh mesh;
  mesh.vertices.resize(n_vertices, 3);
  for (Index v = 0; v < n_vertices; ++v) {
    float xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof xyz);
    for (int k = 0; k < 3; ++k) mesh.vertices(v, k) = double(xyz[k]);
  }
  mesh.faces.resize(n_faces, 3);
  for (Index f = 0; f < n_faces; ++f) {
    unsigned char n = 0;
    std::int32_t idx[3];
    in.read(reinterpret_cast<char*>(&n), 1);
    if (in && n != 3)
      throw ValidationError("import_ply: " + path + " has a non-triangle face");
    in.read(reinterpret_cast<char*>(idx), sizeof idx);
    for (int k = 0; k < 3; ++k) mesh.faces(f, k) = Index(idx[k]);
  }
  if (!in) throw ValidationError("import_ply: truncated file " + path);
  mesh.validate();
  return mesh;
}

}  // namespace dpa
