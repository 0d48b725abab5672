#pragma once

#include <vector>

#include "dpa/assembly.hpp"

// Regular evaluation grids over normalized object space. Grid nodes span
// [lo, hi] inclusively along each axis; slabs are z-constant planes with x
// varying fastest, matching the marching-cubes traversal order.

namespace dpa {

struct GridSpec {
  Index resolution = 64;  // nodes per axis, >= 2
  double lo = -1.0, hi = 1.0;

  void validate() const {
    if (resolution < 2) throw ValidationError("GridSpec: resolution must be >= 2");
    if (!(hi > lo)) throw ValidationError("GridSpec: empty extent");
  }
  double coord(Index i) const {
    return lo + (hi - lo) * double(i) / double(resolution - 1);
  }
  double cell() const { return (hi - lo) / double(resolution - 1); }
};

// The resolution^2 node positions of z-slab k (x fastest, then y).
inline MatX3 slab_points(const GridSpec& grid, Index k) {
  const Index n = grid.resolution;
  MatX3 pts(n * n, 3);
  const double z = grid.coord(k);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      const Index row = y * n + x;
      pts(row, 0) = grid.coord(x);
      pts(row, 1) = grid.coord(y);
      pts(row, 2) = z;
    }
  return pts;
}

// Convex ids (original column indices) whose membership dips below iso at
// some grid node -- the convexes that contribute visible volume.
inline std::vector<Index> nonempty_convexes_on_grid(const PrimitiveBank& bank,
                                                    const GridSpec& grid,
                                                    double iso = 0.01,
                                                    int threads = 0) {
  grid.validate();
  const FieldEvaluator ev(bank, threads);
  if (ev.empty()) return {};
  const Index A = ev.active_convex_count();
  std::vector<char> seen(std::size_t(A), 0);
  for (Index k = 0; k < grid.resolution; ++k) {
    const Mat O = ev.membership(slab_points(grid, k));
    for (Index c = 0; c < A; ++c)
      if (!seen[std::size_t(c)] && (O.col(c).array() < iso).any())
        seen[std::size_t(c)] = 1;
  }
  std::vector<Index> ids;
  for (Index c = 0; c < A; ++c)
    if (seen[std::size_t(c)]) ids.push_back(ev.convex_ids()[std::size_t(c)]);
  return ids;
}

}  // namespace dpa
