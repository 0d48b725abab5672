#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "dpa/image.hpp"
#include "dpa/mesh.hpp"
#include "dpa/parallel.hpp"

// Evaluation metrics. Mesh metrics (CD, ECD, NC) operate on area-weighted
// surface samples with a kd-tree for nearest neighbors; image metrics (PSNR,
// SSIM, mask IoU) operate on [0,1] rasters. Everything is deterministic for a
// fixed sampling seed.

namespace dpa {

// ---------------------------------------------------------------------------
// Nearest-neighbor index

class KdTree3 {
 public:
  explicit KdTree3(const MatX3& pts) : pts_(pts), idx_(std::size_t(pts.rows())) {
    std::iota(idx_.begin(), idx_.end(), Index(0));
    if (pts.rows() > 0) root_ = build(0, pts.rows());
  }

  // Squared distance to and index of the nearest stored point.
  std::pair<double, Index> nearest(const Vec3& q) const {
    if (root_ < 0) throw ValidationError("KdTree3: empty index");
    double best = std::numeric_limits<double>::infinity();
    Index best_i = -1;
    search(root_, q, best, best_i);
    return {best, best_i};
  }

  // The k nearest stored points, closest first.
  std::vector<std::pair<double, Index>> knearest(const Vec3& q, Index k) const {
    if (root_ < 0) throw ValidationError("KdTree3: empty index");
    KBest best{{}, std::min<Index>(k, pts_.rows())};
    search_k(root_, q, best);
    std::sort(best.heap.begin(), best.heap.end());
    return best.heap;
  }

 private:
  struct Node {
    bool leaf = false;
    Index axis = 0;
    double split = 0;
    Index left = -1, right = -1;  // children for inner nodes
    Index begin = 0, end = 0;     // idx_ range for leaves
  };
  static constexpr Index kLeafSize = 8;

  struct KBest {
    std::vector<std::pair<double, Index>> heap;  // max-heap on distance
    Index k;
    void offer(double d2, Index i) {
      if (Index(heap.size()) < k) {
        heap.emplace_back(d2, i);
        std::push_heap(heap.begin(), heap.end());
      } else if (d2 < heap.front().first) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = {d2, i};
        std::push_heap(heap.begin(), heap.end());
      }
    }
    double bound() const {
      return Index(heap.size()) < k ? std::numeric_limits<double>::infinity()
                                    : heap.front().first;
    }
  };

  Index build(Index b, Index e) {
    Node node;
    if (e - b <= kLeafSize) {
      node.leaf = true;
      node.begin = b;
      node.end = e;
      nodes_.push_back(node);
      return Index(nodes_.size()) - 1;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (Index i = b; i < e; ++i) {
      const Vec3 p = pts_.row(idx_[std::size_t(i)]).transpose();
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    Index axis = 0;
    (hi - lo).maxCoeff(&axis);
    const Index m = (b + e) / 2;
    std::nth_element(idx_.begin() + b, idx_.begin() + m, idx_.begin() + e,
                     [&](Index i, Index j) { return pts_(i, axis) < pts_(j, axis); });
    node.axis = axis;
    node.split = pts_(idx_[std::size_t(m)], axis);
    const Index self = Index(nodes_.size());
    nodes_.push_back(node);
    const Index left = build(b, m);
    const Index right = build(m, e);
    nodes_[std::size_t(self)].left = left;
    nodes_[std::size_t(self)].right = right;
    return self;
  }

  void search(Index ni, const Vec3& q, double& best, Index& best_i) const {
    const Node& node = nodes_[std::size_t(ni)];
    if (node.leaf) {
      for (Index i = node.begin; i < node.end; ++i) {
        const Index pi = idx_[std::size_t(i)];
        const double d2 = (pts_.row(pi).transpose() - q).squaredNorm();
        if (d2 < best) {
          best = d2;
          best_i = pi;
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const Index first = diff < 0 ? node.left : node.right;
    const Index second = diff < 0 ? node.right : node.left;
    search(first, q, best, best_i);
    if (diff * diff < best) search(second, q, best, best_i);
  }

  void search_k(Index ni, const Vec3& q, KBest& best) const {
    const Node& node = nodes_[std::size_t(ni)];
    if (node.leaf) {
      for (Index i = node.begin; i < node.end; ++i) {
        const Index pi = idx_[std::size_t(i)];
        best.offer((pts_.row(pi).transpose() - q).squaredNorm(), pi);
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const Index first = diff < 0 ? node.left : node.right;
    const Index second = diff < 0 ? node.right : node.left;
    search_k(first, q, best);
    if (diff * diff < best.bound()) search_k(second, q, best);
  }

  MatX3 pts_;
  std::vector<Index> idx_;
  std::vector<Node> nodes_;
  Index root_ = -1;
};

// ---------------------------------------------------------------------------
// Mesh metrics

namespace detail {

// Mean squared nearest-neighbor distance pooled over both directions.
// Per-chunk partials are reduced in chunk order, so the result is
// deterministic for any thread count.
inline double pooled_squared_nn(const MatX3& pa, const MatX3& pb, int threads) {
  const KdTree3 ta(pa), tb(pb);
  double sum = 0;
  auto accumulate_dir = [&](const MatX3& from, const KdTree3& to) {
    const Index n = from.rows();
    const Index chunk = 1024;
    std::vector<double> partial(std::size_t((n + chunk - 1) / chunk), 0.0);
    parallel_for_ranges(n, chunk, threads, [&](Index b, Index e, Index ci) {
      double s = 0;
      for (Index i = b; i < e; ++i) s += to.nearest(from.row(i).transpose()).first;
      partial[std::size_t(ci)] = s;
    });
    for (double s : partial) sum += s;
  };
  accumulate_dir(pa, tb);
  accumulate_dir(pb, ta);
  return sum / double(pa.rows() + pb.rows());
}

// Rows of s whose k-nearest neighborhood (self included) contains a pair of
// normals with dot below the threshold -- sharp-feature samples.
inline MatX3 edge_subset(const SurfaceSamples& s, Index k, double dot_threshold,
                         int threads) {
  const Index n = s.points.rows();
  const KdTree3 tree(s.points);
  std::vector<char> is_edge(std::size_t(n), 0);
  parallel_for_ranges(n, 512, threads, [&](Index b, Index e, Index) {
    for (Index i = b; i < e; ++i) {
      const auto nbrs = tree.knearest(s.points.row(i).transpose(), k);
      double min_dot = 1.0;
      for (std::size_t a = 0; a < nbrs.size(); ++a)
        for (std::size_t c = a + 1; c < nbrs.size(); ++c)
          min_dot = std::min(
              min_dot, s.normals.row(nbrs[a].second).dot(s.normals.row(nbrs[c].second)));
      if (min_dot < dot_threshold) is_edge[std::size_t(i)] = 1;
    }
  });
  Index count = 0;
  for (char f : is_edge) count += f;
  MatX3 edges(count, 3);
  Index at = 0;
  for (Index i = 0; i < n; ++i)
    if (is_edge[std::size_t(i)]) edges.row(at++) = s.points.row(i);
  return edges;
}

}  // namespace detail

// Symmetric Chamfer distance x1000: pooled mean of squared nearest-neighbor
// distances over n_samples area-weighted samples per mesh. Both meshes are
// sampled with the same seed, so identical meshes score exactly zero.
inline double chamfer(const TriMesh& a, const TriMesh& b, Index n_samples = 10000,
                      std::uint64_t seed = 0, int threads = 0) {
  if (a.empty() || b.empty()) throw ValidationError("chamfer: empty mesh");
  const SurfaceSamples sa = sample_surface(a, n_samples, seed);
  const SurfaceSamples sb = sample_surface(b, n_samples, seed);
  return 1000.0 * detail::pooled_squared_nn(sa.points, sb.points, threads);
}

struct EdgeChamferResult {
  bool has_edges = false;  // false: a smooth surface produced no edge samples
  double value = 0;        // ECD x1000, valid only when has_edges
  Index edge_samples_a = 0, edge_samples_b = 0;
};

// Chamfer restricted to sharp-feature samples. Neighborhood size k and the
// minimum pairwise normal dot threshold are this artifact's pinned
// convention.
inline EdgeChamferResult edge_chamfer(const TriMesh& a, const TriMesh& b,
                                      Index n_samples = 10000, Index k = 10,
                                      double dot_threshold = 0.1,
                                      std::uint64_t seed = 0, int threads = 0) {
  if (a.empty() || b.empty()) throw ValidationError("edge_chamfer: empty mesh");
  const SurfaceSamples sa = sample_surface(a, n_samples, seed);
  const SurfaceSamples sb = sample_surface(b, n_samples, seed);
  const MatX3 ea = detail::edge_subset(sa, k, dot_threshold, threads);
  const MatX3 eb = detail::edge_subset(sb, k, dot_threshold, threads);
  EdgeChamferResult result;
  result.edge_samples_a = ea.rows();
  result.edge_samples_b = eb.rows();
  if (ea.rows() == 0 || eb.rows() == 0) return result;  // no-edges sentinel
  result.has_edges = true;
  result.value = 1000.0 * detail::pooled_squared_nn(ea, eb, threads);
  return result;
}

// Mean |n_a . n_b| over nearest-neighbor pairs, symmetric average.
inline double normal_consistency(const TriMesh& a, const TriMesh& b,
                                 Index n_samples = 10000, std::uint64_t seed = 0,
                                 int threads = 0) {
  if (a.empty() || b.empty()) throw ValidationError("normal_consistency: empty mesh");
  const SurfaceSamples sa = sample_surface(a, n_samples, seed);
  const SurfaceSamples sb = sample_surface(b, n_samples, seed);
  const KdTree3 ta(sa.points), tb(sb.points);

  auto direction = [&](const SurfaceSamples& from, const SurfaceSamples& to,
                       const KdTree3& tree) {
    const Index n = from.points.rows();
    const Index chunk = 1024;
    std::vector<double> partial(std::size_t((n + chunk - 1) / chunk), 0.0);
    parallel_for_ranges(n, chunk, threads, [&](Index b0, Index e0, Index ci) {
      double s = 0;
      for (Index i = b0; i < e0; ++i) {
        const Index j = tree.nearest(from.points.row(i).transpose()).second;
        s += std::abs(from.normals.row(i).dot(to.normals.row(j)));
      }
      partial[std::size_t(ci)] = s;
    });
    double sum = 0;
    for (double s : partial) sum += s;
    return sum / double(n);
  };
  return 0.5 * (direction(sa, sb, tb) + direction(sb, sa, ta));
}

// ---------------------------------------------------------------------------
// Image metrics

// PSNR in dB for [0,1] images; exact matches are capped at 99 dB.
inline double psnr_gray(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("psnr: image sizes differ");
  const double mse = (a - b).squaredNorm() / double(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

inline double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw ValidationError("psnr: image sizes differ");
  const double mse = ((a.r - b.r).squaredNorm() + (a.g - b.g).squaredNorm() +
                      (a.b - b.b).squaredNorm()) /
                     double(3 * a.r.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline Vec ssim_kernel() {
  Vec k(11);
  const double sigma = 1.5;
  for (Index i = 0; i < 11; ++i) {
    const double x = double(i) - 5.0;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  return k / k.sum();
}

// Separable valid-region convolution: output is (H-10) x (W-10).
inline Mat gauss_valid(const Mat& img, const Vec& k) {
  const Index H = img.rows(), W = img.cols(), r = k.size() - 1;
  Mat horiz(H, W - r);
  for (Index i = 0; i < H; ++i)
    for (Index j = 0; j + r < W; ++j) {
      double s = 0;
      for (Index t = 0; t < k.size(); ++t) s += img(i, j + t) * k[t];
      horiz(i, j) = s;
    }
  Mat out(H - r, W - r);
  for (Index i = 0; i + r < H; ++i)
    for (Index j = 0; j < W - r; ++j) {
      double s = 0;
      for (Index t = 0; t < k.size(); ++t) s += horiz(i + t, j) * k[t];
      out(i, j) = s;
    }
  return out;
}

}  // namespace detail

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, unit
// dynamic range; mean over the valid interior.
inline double ssim_gray(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("ssim: image sizes differ");
  if (a.rows() < 11 || a.cols() < 11)
    throw ValidationError("ssim: image smaller than the 11x11 window");
  const Vec k = detail::ssim_kernel();
  const Mat mu_a = detail::gauss_valid(a, k);
  const Mat mu_b = detail::gauss_valid(b, k);
  const Mat e_aa = detail::gauss_valid(a.cwiseProduct(a), k);
  const Mat e_bb = detail::gauss_valid(b.cwiseProduct(b), k);
  const Mat e_ab = detail::gauss_valid(a.cwiseProduct(b), k);

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Mat var_a = e_aa - mu_a.cwiseProduct(mu_a);
  const Mat var_b = e_bb - mu_b.cwiseProduct(mu_b);
  const Mat cov = e_ab - mu_a.cwiseProduct(mu_b);

  double total = 0;
  for (Index i = 0; i < mu_a.rows(); ++i)
    for (Index j = 0; j < mu_a.cols(); ++j) {
      const double num = (2.0 * mu_a(i, j) * mu_b(i, j) + c1) * (2.0 * cov(i, j) + c2);
      const double den = (mu_a(i, j) * mu_a(i, j) + mu_b(i, j) * mu_b(i, j) + c1) *
                         (var_a(i, j) + var_b(i, j) + c2);
      total += num / den;
    }
  return total / double(mu_a.size());
}

inline double ssim(const Image& a, const Image& b) {
  return (ssim_gray(a.r, b.r) + ssim_gray(a.g, b.g) + ssim_gray(a.b, b.b)) / 3.0;
}

// IoU of thresholded masks; two empty masks count as a perfect match.
inline double mask_iou(const Mat& pred, const Mat& gt, double threshold = 0.5) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ValidationError("mask_iou: mask sizes differ");
  Index inter = 0, uni = 0;
  for (Index i = 0; i < pred.rows(); ++i)
    for (Index j = 0; j < pred.cols(); ++j) {
      const bool p = pred(i, j) > threshold, g = gt(i, j) > threshold;
      inter += (p && g) ? 1 : 0;
      uni += (p || g) ? 1 : 0;
    }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// ---------------------------------------------------------------------------

struct EvalReport {
  bool has_mesh_metrics = false;
  double cd = 0;  // x1000
  EdgeChamferResult ecd;
  double nc = 0;
  Index parts = 0;
  std::vector<double> psnr_per_view, ssim_per_view, iou_per_view;
};

}  // namespace dpa
