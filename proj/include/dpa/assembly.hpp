#pragma once

#include <limits>
#include <vector>

#include "dpa/common.hpp"
#include "dpa/parallel.hpp"
#include "dpa/rng.hpp"

// Primitive assembly state and the forward evaluations from query points to
// occupancy. A shape is a union of C convexes, each the intersection of
// quadric primitives selected by one column of the P x C selection matrix T.
// A primitive is the quadric |a|x^2 + |b|y^2 + |c|z^2 + dx + ey + fz + g,
// negative inside. The evaluation functions are templated on the scalar type:
// double is the reference path, float is the fast path (same contracts at
// relaxed tolerance).

namespace dpa {

enum class SelectionMode { Float, Binary };

template <typename Scalar>
using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct PrimitiveBank {
  Mat params;      // P x 7, rows (a,b,c,d,e,f,g); a,b,c enter through |.|
  Mat selection;   // T, P x C; exactly {0,1} in Binary mode
  Vec weights;     // w, length C
  SelectionMode mode = SelectionMode::Float;

  Index primitive_count() const { return params.rows(); }
  Index convex_count() const { return selection.cols(); }

  // Convexes whose T column has any nonzero entry. An all-zero column would
  // evaluate to O = 0 everywhere and mark all space inside, so union and
  // overlap evaluations exclude it.
  std::vector<char> active_convexes() const {
    std::vector<char> active(convex_count(), 0);
    for (Index c = 0; c < selection.cols(); ++c)
      active[c] = (selection.col(c).array() != 0.0).any() ? 1 : 0;
    return active;
  }

  // Primitives appearing with a nonzero entry in some active convex.
  std::vector<Index> active_primitives() const {
    const auto cols = active_convexes();
    std::vector<Index> rows;
    for (Index p = 0; p < selection.rows(); ++p) {
      for (Index c = 0; c < selection.cols(); ++c) {
        if (cols[c] && selection(p, c) != 0.0) {
          rows.push_back(p);
          break;
        }
      }
    }
    return rows;
  }

  void validate() const {
    if (params.cols() != 7)
      throw ValidationError("PrimitiveBank: params must have 7 columns");
    if (selection.rows() != params.rows())
      throw ValidationError("PrimitiveBank: selection rows must match primitive count");
    if (weights.size() != selection.cols())
      throw ValidationError("PrimitiveBank: weights length must match convex count");
    if (!params.allFinite() || !selection.allFinite() || !weights.allFinite())
      throw ValidationError("PrimitiveBank: non-finite state");
    if (mode == SelectionMode::Binary) {
      for (Index p = 0; p < selection.rows(); ++p)
        for (Index c = 0; c < selection.cols(); ++c) {
          const double t = selection(p, c);
          if (t != 0.0 && t != 1.0)
            throw ValidationError("PrimitiveBank: Binary mode requires T entries in {0,1}");
        }
    }
  }

  // Gaussian coefficients with the constant term shifted negative so initial
  // primitives have nonempty interiors near the origin; small positive
  // selections; unit weights.
  static PrimitiveBank random_init(Index P, Index C, Rng& rng) {
    PrimitiveBank bank;
    bank.params.resize(P, 7);
    for (Index p = 0; p < P; ++p)
      for (Index k = 0; k < 7; ++k)
        bank.params(p, k) = rng.normal(0.0, 0.1) + (k == 6 ? -0.2 : 0.0);
    bank.selection.resize(P, C);
    for (Index p = 0; p < P; ++p)
      for (Index c = 0; c < C; ++c) bank.selection(p, c) = rng.uniform(0.0, 0.05);
    bank.weights = Vec::Ones(C);
    bank.mode = SelectionMode::Float;
    return bank;
  }
};

struct QueryBatch {
  MatX3 points;  // N x 3, normalized object space
  Mat q_rows;    // N x 7, row = (x^2, y^2, z^2, x, y, z, 1)
};

struct FieldSample {
  Mat D;       // N x P signed distance approximations
  Mat O;       // N x C convex membership, 0 = inside
  Vec a_star;  // hard occupancy, min over active convexes
  Vec a_plus;  // soft occupancy in [0,1], 1 ~ inside
};

// ---------------------------------------------------------------------------
// Forward evaluations

template <typename Scalar>
MatT<Scalar> lift_rows(const MatT<Scalar>& points) {
  if (points.cols() != 3)
    throw ValidationError("lift_points: expected N x 3 points");
  if (!points.allFinite())
    throw ValidationError("lift_points: non-finite coordinates in query points");
  MatT<Scalar> q(points.rows(), 7);
  q.col(0) = points.col(0).cwiseProduct(points.col(0));
  q.col(1) = points.col(1).cwiseProduct(points.col(1));
  q.col(2) = points.col(2).cwiseProduct(points.col(2));
  q.col(3) = points.col(0);
  q.col(4) = points.col(1);
  q.col(5) = points.col(2);
  q.col(6).setOnes();
  return q;
}

inline QueryBatch lift_points(const MatX3& points) {
  QueryBatch batch;
  batch.points = points;
  batch.q_rows = lift_rows<double>(points);
  return batch;
}

// Params with |.| applied to the three leading coefficients, so every
// evaluated primitive is convex.
template <typename Scalar>
MatT<Scalar> folded_params(const MatT<Scalar>& params) {
  MatT<Scalar> folded = params;
  folded.leftCols(3) = folded.leftCols(3).cwiseAbs();
  return folded;
}

template <typename Scalar>
MatT<Scalar> distance_matrix(const MatT<Scalar>& q_rows, const MatT<Scalar>& params) {
  if (q_rows.cols() != 7 || params.cols() != 7)
    throw ValidationError("distance_matrix: query rows and params must have 7 columns");
  if (!params.allFinite())
    throw ValidationError("distance_matrix: non-finite primitive parameters");
  return q_rows * folded_params(params).transpose();
}

inline Mat distance_matrix(const QueryBatch& q, const PrimitiveBank& bank) {
  return distance_matrix<double>(q.q_rows, bank.params);
}

template <typename Scalar>
MatT<Scalar> intersect(const MatT<Scalar>& D, const MatT<Scalar>& T) {
  if (D.cols() != T.rows())
    throw ValidationError("intersect: D columns must match selection rows");
  return D.cwiseMax(Scalar(0)) * T;
}

// Hard union: min-pool of membership over active convexes. 0 = inside.
template <typename Scalar>
VecT<Scalar> union_hard(const MatT<Scalar>& O, const std::vector<char>& active_mask) {
  if (Index(active_mask.size()) != O.cols())
    throw ValidationError("union_hard: active mask length must match convex count");
  std::vector<Index> active;
  for (Index c = 0; c < O.cols(); ++c)
    if (active_mask[c]) active.push_back(c);
  if (active.empty())
    throw ValidationError("union_hard: no active convexes");
  VecT<Scalar> a_star(O.rows());
  for (Index i = 0; i < O.rows(); ++i) {
    Scalar m = O(i, active[0]);
    for (std::size_t k = 1; k < active.size(); ++k)
      m = std::min(m, O(i, active[k]));
    a_star[i] = m;
  }
  return a_star;
}

// As above but also reports the argmin convex (lowest index on ties), which
// is where the hard-min gradient routes.
template <typename Scalar>
void union_hard_argmin(const MatT<Scalar>& O, const std::vector<char>& active_mask,
                       VecT<Scalar>& a_star, std::vector<Index>& argmin) {
  if (Index(active_mask.size()) != O.cols())
    throw ValidationError("union_hard: active mask length must match convex count");
  bool any = false;
  for (char a : active_mask) any = any || a;
  if (!any) throw ValidationError("union_hard: no active convexes");
  a_star.resize(O.rows());
  argmin.assign(O.rows(), -1);
  for (Index i = 0; i < O.rows(); ++i) {
    Scalar best = std::numeric_limits<Scalar>::infinity();
    Index best_c = -1;
    for (Index c = 0; c < O.cols(); ++c) {
      if (!active_mask[c]) continue;
      if (O(i, c) < best) {
        best = O(i, c);
        best_c = c;
      }
    }
    a_star[i] = best;
    argmin[i] = best_c;
  }
}

// Soft union: clip(sum_c w_c clip(1 - O_c)), 1 ~ inside.
template <typename Scalar>
VecT<Scalar> union_soft(const MatT<Scalar>& O, const VecT<Scalar>& w) {
  if (O.cols() != w.size())
    throw ValidationError("union_soft: weight length must match convex count");
  MatT<Scalar> v = (MatT<Scalar>::Ones(O.rows(), O.cols()) - O)
                       .cwiseMax(Scalar(0))
                       .cwiseMin(Scalar(1));
  VecT<Scalar> u = v * w;
  return u.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

// h_i = sum_c exp(-10 O_ic); counts, softly, how many convexes contain i.
template <typename Scalar>
VecT<Scalar> overlap_indicator(const MatT<Scalar>& O) {
  return (O * Scalar(-10)).array().exp().matrix().rowwise().sum();
}

inline FieldSample field_sample(const PrimitiveBank& bank, const MatX3& points) {
  FieldSample fs;
  const QueryBatch q = lift_points(points);
  fs.D = distance_matrix(q, bank);
  fs.O = intersect<double>(fs.D, bank.selection);
  fs.a_star = union_hard<double>(fs.O, bank.active_convexes());
  fs.a_plus = union_soft<double>(fs.O, bank.weights);
  return fs;
}

// ---------------------------------------------------------------------------
// Compacted read-only evaluator for probing, meshing and evaluation renders.
// Restricts work to active rows/columns and parallelizes over point chunks.

class FieldEvaluator {
 public:
  explicit FieldEvaluator(const PrimitiveBank& bank, int threads = 0,
                          Index chunk = 8192)
      : threads_(threads), chunk_(chunk) {
    const auto col_mask = bank.active_convexes();
    for (Index c = 0; c < bank.convex_count(); ++c)
      if (col_mask[c]) col_ids_.push_back(c);
    row_ids_ = bank.active_primitives();
    folded_.resize(Index(row_ids_.size()), 7);
    Mat folded_all = folded_params<double>(bank.params);
    for (std::size_t r = 0; r < row_ids_.size(); ++r)
      folded_.row(Index(r)) = folded_all.row(row_ids_[r]);
    selection_.resize(Index(row_ids_.size()), Index(col_ids_.size()));
    for (std::size_t r = 0; r < row_ids_.size(); ++r)
      for (std::size_t c = 0; c < col_ids_.size(); ++c)
        selection_(Index(r), Index(c)) = bank.selection(row_ids_[r], col_ids_[c]);
  }

  bool empty() const { return col_ids_.empty() || row_ids_.empty(); }
  Index active_convex_count() const { return Index(col_ids_.size()); }
  const std::vector<Index>& convex_ids() const { return col_ids_; }
  const std::vector<Index>& primitive_ids() const { return row_ids_; }
  const Mat& compact_selection() const { return selection_; }
  const Mat& compact_folded_params() const { return folded_; }

  // Membership values O for the active convexes only (N x n_active).
  Mat membership(const MatX3& pts) const {
    Mat O(pts.rows(), Index(col_ids_.size()));
    if (empty()) return O;
    parallel_for_ranges(pts.rows(), chunk_, threads_, [&](Index b, Index e, Index) {
      const Mat q = lift_rows<double>(MatT<double>(pts.middleRows(b, e - b)));
      O.middleRows(b, e - b) = (q * folded_.transpose()).cwiseMax(0.0) * selection_;
    });
    return O;
  }

  // Hard occupancy a*; +inf when the bank has no active convex.
  Vec hard_occupancy(const MatX3& pts) const {
    if (empty())
      return Vec::Constant(pts.rows(), std::numeric_limits<double>::infinity());
    Vec a(pts.rows());
    parallel_for_ranges(pts.rows(), chunk_, threads_, [&](Index b, Index e, Index) {
      const Mat q = lift_rows<double>(MatT<double>(pts.middleRows(b, e - b)));
      const Mat O = (q * folded_.transpose()).cwiseMax(0.0) * selection_;
      a.segment(b, e - b) = O.rowwise().minCoeff();
    });
    return a;
  }

  // Membership for a single active convex (index into convex_ids()).
  Vec membership_of(const MatX3& pts, Index active_col) const {
    Vec m(pts.rows());
    parallel_for_ranges(pts.rows(), chunk_, threads_, [&](Index b, Index e, Index) {
      const Mat q = lift_rows<double>(MatT<double>(pts.middleRows(b, e - b)));
      m.segment(b, e - b) =
          (q * folded_.transpose()).cwiseMax(0.0) * selection_.col(active_col);
    });
    return m;
  }

 private:
  std::vector<Index> row_ids_, col_ids_;
  Mat folded_;     // active rows, |.| applied
  Mat selection_;  // active rows x active cols
  int threads_;
  Index chunk_;
};

}  // namespace dpa
