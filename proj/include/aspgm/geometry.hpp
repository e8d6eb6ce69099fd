#pragma once

// Preconditioned geometry. A GeometryHandle realizes an SPD matrix B from a
// limited memory of curvature pairs (s_i, y_i) and provides the products
//
//   apply_B(v)     = B v        (two-loop recursion, B is the inverse-Hessian
//                                approximation of L-BFGS)
//   apply_B_inv(v) = B^{-1} v   (compact representation, one 2t x 2t solve)
//
// together with the induced inner product <u, v>_B = <u, B^{-1} v>, the
// B-gradient grad_B f(x) = B grad f(x), and the local smoothness / strong
// convexity estimators.  With an empty memory the handle is the identity
// and every product is a no-op.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "aspgm/rng.hpp"

namespace aspgm {

// One joint (f, grad f) evaluation.  f returns the value, grad is written
// into the second argument.
using Oracle = std::function<double(const Vec&, Vec&)>;

struct CurvaturePair {
  Vec s;  // iterate difference, problem units
  Vec y;  // raw-gradient difference
};

struct IllConditionedMemory : std::runtime_error {
  IllConditionedMemory()
      : std::runtime_error(
            "curvature memory is numerically singular; rebuild the geometry "
            "with fewer pairs") {}
};

class GeometryHandle {
 public:
  enum class Mode { Identity, LBFGS };

  GeometryHandle() = default;  // Identity

  // Keeps the newest <= t pairs passing the curvature filter
  // <s, y> > curvature_tol * |s| * |y| (standard Euclidean). Degenerate
  // input degrades to the identity.
  GeometryHandle(const std::vector<CurvaturePair>& pairs, int t,
                 double curvature_tol = 1e-12) {
    if (t <= 0) return;
    std::vector<const CurvaturePair*> kept;
    for (const auto& p : pairs) {
      const double sy = p.s.dot(p.y);
      if (sy > curvature_tol * p.s.norm() * p.y.norm()) kept.push_back(&p);
    }
    if (kept.empty()) return;
    const int nkeep = std::min<int>(t, static_cast<int>(kept.size()));
    const int first = static_cast<int>(kept.size()) - nkeep;
    const Eigen::Index d = kept.front()->s.size();
    S_.resize(d, nkeep);
    Y_.resize(d, nkeep);
    for (int i = 0; i < nkeep; ++i) {
      S_.col(i) = kept[first + i]->s;
      Y_.col(i) = kept[first + i]->y;
    }
    eta_.resize(nkeep);
    for (int i = 0; i < nkeep; ++i) eta_[i] = 1.0 / S_.col(i).dot(Y_.col(i));
    const int last = nkeep - 1;
    theta_ = Y_.col(last).squaredNorm() / S_.col(last).dot(Y_.col(last));

    // middle matrix of the compact representation:
    //   M = [ theta S^T S   T ]      T_{ij} = s_i^T y_j for i > j, else 0
    //       [ T^T          -D ]      D = diag(s_i^T y_i)
    Mat M(2 * nkeep, 2 * nkeep);
    M.topLeftCorner(nkeep, nkeep) = theta_ * (S_.transpose() * S_);
    Mat T = Mat::Zero(nkeep, nkeep);
    for (int i = 0; i < nkeep; ++i)
      for (int j = 0; j < i; ++j) T(i, j) = S_.col(i).dot(Y_.col(j));
    M.topRightCorner(nkeep, nkeep) = T;
    M.bottomLeftCorner(nkeep, nkeep) = T.transpose();
    M.bottomRightCorner(nkeep, nkeep) = Mat::Zero(nkeep, nkeep);
    for (int i = 0; i < nkeep; ++i)
      M(nkeep + i, nkeep + i) = -1.0 / eta_[i];
    M_lu_.compute(M);
    M_ok_ = M_lu_.isInvertible();
    if (M_ok_) {
      // pivot-ratio condition guard: a solve with no accurate digits is as
      // bad as a singular factorization
      const Vec piv = M_lu_.matrixLU().diagonal().cwiseAbs();
      if (piv.minCoeff() < piv.maxCoeff() * 2 * nkeep * 1e-16) M_ok_ = false;
    }
    mode_ = Mode::LBFGS;
  }

  Mode mode() const { return mode_; }
  bool is_identity() const { return mode_ == Mode::Identity; }
  int pair_count() const {
    return is_identity() ? 0 : static_cast<int>(S_.cols());
  }
  const Mat& S() const { return S_; }
  const Mat& Y() const { return Y_; }

  // B v via the two-loop recursion; O(t d) work, no d x d storage.
  Vec apply_B(const Vec& v) const {
    if (is_identity()) return v;
    const int t = pair_count();
    Vec q = v;
    Eigen::VectorXd alpha(t);
    for (int i = t - 1; i >= 0; --i) {
      alpha[i] = eta_[i] * S_.col(i).dot(q);
      q -= alpha[i] * Y_.col(i);
    }
    Vec r = (1.0 / theta_) * q;
    for (int i = 0; i < t; ++i) {
      const double beta = eta_[i] * Y_.col(i).dot(r);
      r += (alpha[i] - beta) * S_.col(i);
    }
    return r;
  }

  // B^{-1} v via the compact representation
  //   B^{-1} = theta I - [theta S  Y] M^{-1} [theta S^T; Y^T].
  Vec apply_B_inv(const Vec& v) const {
    if (is_identity()) return v;
    if (!M_ok_) throw IllConditionedMemory();
    const int t = pair_count();
    Vec w(2 * t);
    w.head(t) = theta_ * (S_.transpose() * v);
    w.tail(t) = Y_.transpose() * v;
    Vec q = M_lu_.solve(w);
    if (!q.allFinite()) throw IllConditionedMemory();
    return theta_ * v - theta_ * (S_ * q.head(t)) - Y_ * q.tail(t);
  }

  // <u, v>_B = <u, B^{-1} v>
  double inner_B(const Vec& u, const Vec& v) const {
    if (is_identity()) return u.dot(v);
    return u.dot(apply_B_inv(v));
  }

  double norm_B_sq(const Vec& v) const {
    return std::max(0.0, inner_B(v, v));
  }
  double norm_B(const Vec& v) const { return std::sqrt(norm_B_sq(v)); }

  // grad_B f = B grad f
  Vec grad_B(const Vec& raw_grad) const { return apply_B(raw_grad); }

 private:
  Mode mode_ = Mode::Identity;
  Mat S_, Y_;                    // pairs as columns, oldest -> newest
  std::vector<double> eta_;      // 1 / (y_i^T s_i)
  double theta_ = 1.0;           // y_t^T y_t / s_t^T y_t
  Eigen::FullPivLU<Mat> M_lu_;
  bool M_ok_ = false;
};

inline GeometryHandle build_geometry(const std::vector<CurvaturePair>& pairs,
                                     int t, double curvature_tol = 1e-12) {
  return GeometryHandle(pairs, t, curvature_tol);
}

// One first-order evaluation under a fixed geometry.  g = B g_raw.  In
// identity mode the raw gradient and the B-gradient coincide, so only one
// vector is stored; history entries drop g_raw to respect the storage
// budget and must recover it with apply_B_inv when needed.
struct OracleSample {
  Vec x;
  double f = 0.0;
  Vec g;        // B-gradient
  Vec g_raw;    // raw gradient; empty when identical to g or stripped
  bool raw_same_as_g = false;
  long oracle_index = 0;

  bool has_raw() const { return raw_same_as_g || g_raw.size() > 0; }
  const Vec& raw_grad() const {
    if (raw_same_as_g) return g;
    if (g_raw.size() == 0)
      throw std::logic_error("raw gradient was stripped from this sample");
    return g_raw;
  }
  // |g|_B^2 = <raw, B raw>; one B-apply already done at construction, no
  // B^{-1}-apply on this path.
  double grad_norm_B_sq() const { return std::max(0.0, g.dot(raw_grad())); }
  double grad_norm_B() const { return std::sqrt(grad_norm_B_sq()); }
  void strip_raw() {
    if (!raw_same_as_g) g_raw = Vec();
  }
};

inline OracleSample make_sample(const GeometryHandle& h, Vec x, double f,
                                Vec g_raw, long oracle_index = 0) {
  OracleSample s;
  s.x = std::move(x);
  s.f = f;
  s.oracle_index = oracle_index;
  if (h.is_identity()) {
    s.g = std::move(g_raw);
    s.raw_same_as_g = true;
  } else {
    s.g = h.apply_B(g_raw);
    s.g_raw = std::move(g_raw);
  }
  return s;
}

// Smallest L with f(b) >= f(a) + <g_a, x_b - x_a>_B + |g_a - g_b|_B^2 / 2L,
// i.e. |g_a - g_b|_B^2 / 2 divided by the convexity slack.  Conventions:
// equal gradients -> 0 (any L works); positive gradient difference with a
// nonpositive slack -> +inf (no finite L works).
inline double local_L(const GeometryHandle& /*h*/, const OracleSample& a,
                      const OracleSample& b) {
  const double slack = b.f - a.f - a.raw_grad().dot(b.x - a.x);
  const double gg = 0.5 * (a.g - b.g).dot(a.raw_grad() - b.raw_grad());
  if (gg <= 0.0) return 0.0;
  if (slack <= 0.0) return std::numeric_limits<double>::infinity();
  return gg / slack;
}

// Largest mu with f(b) >= f(a) + <g_a, x_b - x_a>_B + mu/2 |x_a - x_b|_B^2.
// Identical points give the +inf sentinel (no information).
inline double local_mu(const GeometryHandle& h, const OracleSample& a,
                       const OracleSample& b) {
  const double num = b.f - a.f - a.raw_grad().dot(b.x - a.x);
  const double den = 0.5 * h.norm_B_sq(a.x - b.x);
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return num / den;
}

}  // namespace aspgm
