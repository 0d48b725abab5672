#pragma once

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dpa/extract.hpp"

// OpenSCAD script emission: either the raw part meshes as polyhedra or one
// fitted oriented box per part, both inside a single union. A small grammar
// checker validates emitted scripts in tests without the external CAD tool.

namespace dpa {

enum class ScadMode { Polyhedron, FittedBox };

// ---------------------------------------------------------------------------
// Minimum-volume oriented bounding box, PCA-initialized then refined by a
// deterministic rotational hill climb.

struct ObbFit {
  Eigen::Matrix3d axes = Eigen::Matrix3d::Identity();  // columns = box axes
  Vec3 center = Vec3::Zero();
  Vec3 extents = Vec3::Zero();  // full side lengths
};

namespace detail {

inline double obb_measure(const MatX3& pts, const Eigen::Matrix3d& axes, Vec3& center,
                          Vec3& extents) {
  const MatX3 local = pts * axes;  // rows projected onto the axes
  const Vec3 lo = local.colwise().minCoeff().transpose();
  const Vec3 hi = local.colwise().maxCoeff().transpose();
  extents = hi - lo;
  center = axes * ((lo + hi) * 0.5);
  return extents[0] * extents[1] * extents[2];
}

}  // namespace detail

inline ObbFit fit_obb(const MatX3& pts) {
  if (pts.rows() < 4) throw ValidationError("fit_obb: need at least 4 points");

  const Vec3 mean = pts.colwise().mean().transpose();
  const MatX3 centered = pts.rowwise() - mean.transpose();
  const Eigen::Matrix3d cov = centered.transpose() * centered / double(pts.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Matrix3d axes = eig.eigenvectors();
  if (axes.determinant() < 0) axes.col(0) = -axes.col(0);

  ObbFit fit;
  double volume = detail::obb_measure(pts, axes, fit.center, fit.extents);
  fit.axes = axes;

  double step = 0.2;
  while (step > 1e-4) {
    bool improved = false;
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {1.0, -1.0}) {
        const Eigen::Matrix3d candidate =
            fit.axes * Eigen::AngleAxisd(sign * step, Vec3::Unit(axis)).toRotationMatrix();
        Vec3 center, extents;
        const double v = detail::obb_measure(pts, candidate, center, extents);
        if (v < volume * (1.0 - 1e-12)) {
          volume = v;
          fit.axes = candidate;
          fit.center = center;
          fit.extents = extents;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Script emission

namespace detail {

inline std::string scad_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void scad_color(std::ofstream& out, const Vec3& c) {
  out << "color([" << scad_num(c[0]) << ", " << scad_num(c[1]) << ", " << scad_num(c[2])
      << "]) ";
}

// OpenSCAD wants polyhedron faces wound clockwise seen from outside, the
// reverse of the mesh convention.
inline void scad_polyhedron(std::ofstream& out, const TriMesh& mesh) {
  out << "polyhedron(points = [";
  for (Index v = 0; v < mesh.vertex_count(); ++v) {
    if (v) out << ", ";
    out << '[' << scad_num(mesh.vertices(v, 0)) << ", " << scad_num(mesh.vertices(v, 1))
        << ", " << scad_num(mesh.vertices(v, 2)) << ']';
  }
  out << "], faces = [";
  for (Index f = 0; f < mesh.face_count(); ++f) {
    if (f) out << ", ";
    out << '[' << mesh.faces(f, 0) << ", " << mesh.faces(f, 2) << ", " << mesh.faces(f, 1)
        << ']';
  }
  out << "], convexity = 10);\n";
}

inline void scad_fitted_box(std::ofstream& out, const ObbFit& fit) {
  out << "multmatrix([";
  for (int r = 0; r < 3; ++r) {
    out << '[' << scad_num(fit.axes(r, 0)) << ", " << scad_num(fit.axes(r, 1)) << ", "
        << scad_num(fit.axes(r, 2)) << ", " << scad_num(fit.center[r]) << "], ";
  }
  out << "[0, 0, 0, 1]]) cube([" << scad_num(fit.extents[0]) << ", "
      << scad_num(fit.extents[1]) << ", " << scad_num(fit.extents[2])
      << "], center = true);\n";
}

inline double mesh_volume(const TriMesh& mesh) {
  double vol = 0;
  for (Index f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
    vol += a.dot(b.cross(c)) / 6.0;
  }
  return vol;
}

}  // namespace detail

inline void export_openscad(const PartMesh& shape, const std::string& path,
                            ScadMode mode) {
  std::ofstream out(path);
  if (!out) throw ValidationError("export_openscad: cannot open " + path);

  out << "union() {\n";
  if (shape.parts.empty()) warn("export_openscad: no parts to export");
  for (const Part& part : shape.parts) {
    part.mesh.validate();
    if (std::abs(detail::mesh_volume(part.mesh)) < 1e-9) {
      warn("export_openscad: skipping degenerate part " + std::to_string(part.convex_id));
      continue;
    }
    out << "  ";
    detail::scad_color(out, part.color);
    if (mode == ScadMode::Polyhedron) {
      detail::scad_polyhedron(out, part.mesh);
    } else {
      detail::scad_fitted_box(out, fit_obb(part.mesh.vertices));
    }
  }
  out << "}\n";
  if (!out) throw ValidationError("export_openscad: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Grammar smoke checker: a recursive-descent pass over the module-call
// structure the exporter can emit. Not a full OpenSCAD parser.

struct ScadCheck {
  bool ok = true;
  std::string error;
};

namespace detail {

struct ScadScanner {
  const std::string& text;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[pos]))) {
        ++pos;
      } else if (text[pos] == '/' && pos + 1 < text.size() && text[pos + 1] == '/') {
        while (pos < text.size() && text[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  bool eof() {
    skip_space();
    return pos >= text.size();
  }

  char peek() {
    skip_space();
    return pos < text.size() ? text[pos] : '\0';
  }

  bool ident(std::string& out) {
    skip_space();
    std::size_t start = pos;
    while (pos < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
      ++pos;
    out = text.substr(start, pos - start);
    return !out.empty();
  }
};

inline bool scad_args(ScadScanner& s, std::string& error) {
  // Consume a balanced (...) group, allowing nested () and [] but no braces.
  if (s.peek() != '(') {
    error = "expected '(' at offset " + std::to_string(s.pos);
    return false;
  }
  std::vector<char> stack;
  for (; s.pos < s.text.size(); ++s.pos) {
    const char c = s.text[s.pos];
    if (c == '(' || c == '[') {
      stack.push_back(c);
    } else if (c == ')' || c == ']') {
      const char open = c == ')' ? '(' : '[';
      if (stack.empty() || stack.back() != open) {
        error = "mismatched bracket at offset " + std::to_string(s.pos);
        return false;
      }
      stack.pop_back();
      if (stack.empty()) {
        ++s.pos;
        return true;
      }
    } else if (c == '{' || c == '}' || c == ';') {
      error = std::string("unexpected '") + c + "' inside arguments";
      return false;
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      std::string word;
      while (s.pos < s.text.size() &&
             std::isalnum(static_cast<unsigned char>(s.text[s.pos])))
        word += s.text[s.pos++];
      --s.pos;
      std::string lower;
      for (char w : word) lower += char(std::tolower(static_cast<unsigned char>(w)));
      if (lower == "nan" || lower == "inf") {
        error = "non-finite number '" + word + "' in arguments";
        return false;
      }
    }
  }
  error = "unterminated argument list";
  return false;
}

inline bool scad_call(ScadScanner& s, std::string& error);

inline bool scad_block(ScadScanner& s, std::string& error) {
  ++s.pos;  // consume '{'
  while (!s.eof() && s.peek() != '}') {
    if (!scad_call(s, error)) return false;
  }
  if (s.peek() != '}') {
    error = "missing '}'";
    return false;
  }
  ++s.pos;
  return true;
}

inline bool scad_call(ScadScanner& s, std::string& error) {
  static const std::set<std::string> known = {
      "union",      "difference", "intersection", "color",  "multmatrix",
      "translate",  "rotate",     "scale",        "cube",   "sphere",
      "polyhedron", "cylinder"};
  std::string name;
  if (!s.ident(name)) {
    error = "expected a module name at offset " + std::to_string(s.pos);
    return false;
  }
  if (known.find(name) == known.end()) {
    error = "unknown module '" + name + "'";
    return false;
  }
  if (!scad_args(s, error)) return false;
  const char next = s.peek();
  if (next == ';') {
    ++s.pos;
    return true;
  }
  if (next == '{') return scad_block(s, error);
  return scad_call(s, error);  // modifier chain, e.g. color(...) cube(...);
}

}  // namespace detail

inline ScadCheck check_openscad(const std::string& script) {
  detail::ScadScanner scanner{script};
  ScadCheck result;
  while (!scanner.eof()) {
    if (!detail::scad_call(scanner, result.error)) {
      result.ok = false;
      return result;
    }
  }
  return result;
}

inline ScadCheck check_openscad_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("check_openscad: cannot open " + path);
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  return check_openscad(text);
}

}  // namespace dpa
