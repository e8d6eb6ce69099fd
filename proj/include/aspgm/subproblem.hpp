#pragma once

// Per-iteration subgame subproblem: aggregation weights (rho, gamma) over the
// remembered certificates U_i and convexity inequalities W_{*,i} maximizing
// the next certificate weight tau', subject to the single concave quadratic
// constraint epsilon(rho, gamma) >= 0.
//
// The memory keeps, besides the entries themselves, every pairwise B-inner
// product between the stored z-columns and gradients, so the subproblem is
// assembled and evaluated from O(k^2) scalars; the only d-dimensional work
// per push is one B^{-1}-apply for the new z-column plus O(k) dot products.
//
// The solver is self-contained: a log-barrier damped-Newton homotopy in
// dimension <= 2k, warm-started at the guaranteed fallback point
// rho = (L_n/L_s) e_s.  Any near-feasible answer is clipped back onto the
// feasible set by scalar scaling (valid because the set is convex and
// contains the origin), and the fallback is returned whenever the solver
// cannot beat it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "aspgm/induction.hpp"

namespace aspgm {

struct HistoryEntry {
  OracleSample sample;  // raw gradient stripped once the caches are built
  double tau = 0.0;
  Vec z;                // z_{i+1}
  double L = 1.0;       // L_i in force when the entry was produced
  double Delta = 0.0;
  // cached B-inner-product scalars (zd := z - x0)
  double zz = 0.0;      // <zd, zd>_B
  double zx0 = 0.0;     // <zd, x0>_B
  double gxx0 = 0.0;    // <g, x - x0>_B
  double gx0 = 0.0;     // <g, x0>_B
  double gg = 0.0;      // |g|_B^2
};

// Bounded history window with the strategic eviction rule: the oldest entry
// is dropped unless it is the only one left with tau > 0, in which case the
// second-oldest goes instead.  This keeps J = {i : tau_i > 0} nonempty.
class SubgameMemory {
 public:
  SubgameMemory(int k, Vec x0) : k_(std::max(1, k)), x0_(std::move(x0)) {}

  void push(const GeometryHandle& h, OracleSample sample, double tau, Vec z,
            double L, double Delta) {
    HistoryEntry e;
    e.tau = tau;
    e.z = std::move(z);
    e.L = L;
    e.Delta = Delta;

    const int n = static_cast<int>(entries_.size());
    grow_caches(n + 1);

    const Vec& raw = sample.raw_grad();
    const Vec zd = e.z - x0_;
    const bool zd_zero = zd.squaredNorm() == 0.0;
    Vec Bzd;
    if (!zd_zero) Bzd = h.apply_B_inv(zd);

    for (int i = 0; i < n; ++i) {
      const Vec zdi = entries_[i].z - x0_;
      zz_(i, n) = zz_(n, i) = zd_zero ? 0.0 : zdi.dot(Bzd);
      gg_(i, n) = gg_(n, i) = entries_[i].sample.g.dot(raw);
      zg_(i, n) = zdi.dot(raw);                              // <zd_i, g_new>_B
      zg_(n, i) = zd_zero ? 0.0 : Bzd.dot(entries_[i].sample.g);
    }
    zz_(n, n) = zd_zero ? 0.0 : zd.dot(Bzd);
    gg_(n, n) = sample.g.dot(raw);
    zg_(n, n) = zd_zero ? 0.0 : zd.dot(raw);

    e.zz = zz_(n, n);
    e.zx0 = zd_zero ? 0.0 : Bzd.dot(x0_);
    e.gxx0 = raw.dot(sample.x - x0_);
    e.gx0 = raw.dot(x0_);
    e.gg = gg_(n, n);

    sample.strip_raw();
    e.sample = std::move(sample);
    entries_.push_back(std::move(e));

    if (static_cast<int>(entries_.size()) > k_) {
      const bool oldest_is_last_certified =
          entries_.front().tau > 0.0 &&
          std::none_of(entries_.begin() + 1, entries_.end(),
                       [](const HistoryEntry& h2) { return h2.tau > 0.0; });
      evict(oldest_is_last_certified ? 1 : 0);
    }
  }

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return k_; }
  const HistoryEntry& entry(int i) const { return entries_[i]; }
  const Vec& x0() const { return x0_; }

  double zz(int i, int j) const { return zz_(i, j); }
  double gg(int i, int j) const { return gg_(i, j); }
  double zg(int i, int j) const { return zg_(i, j); }

 private:
  void grow_caches(int n) {
    zz_.conservativeResize(n, n);
    gg_.conservativeResize(n, n);
    zg_.conservativeResize(n, n);
  }

  void evict(int idx) {
    entries_.erase(entries_.begin() + idx);
    const int n = static_cast<int>(zz_.rows());
    drop_row_col(zz_, idx, n);
    drop_row_col(gg_, idx, n);
    drop_row_col(zg_, idx, n);
  }

  static void drop_row_col(Mat& M, int idx, int n) {
    Mat out(n - 1, n - 1);
    for (int i = 0, ii = 0; i < n; ++i) {
      if (i == idx) continue;
      for (int j = 0, jj = 0; j < n; ++j) {
        if (j == idx) continue;
        out(ii, jj) = M(i, j);
        ++jj;
      }
      ++ii;
    }
    M = std::move(out);
  }

  int k_;
  Vec x0_;
  std::vector<HistoryEntry> entries_;
  Mat zz_{0, 0}, gg_{0, 0}, zg_{0, 0};
};

struct EmptyJ : std::logic_error {
  EmptyJ() : std::logic_error("no history entry with tau > 0") {}
};

// m = argmin_{i in J} v_i (ties -> smallest index), s = max J,
// with v_i = f_i - |g_i|_B^2 / (2 L_n).
inline std::pair<int, int> select_indices(const SubgameMemory& mem,
                                          double L_n) {
  int m = -1, s = -1;
  double vmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mem.size(); ++i) {
    const HistoryEntry& e = mem.entry(i);
    if (e.tau <= 0.0) continue;
    const double v = e.sample.f - e.gg / (2.0 * L_n);
    if (v < vmin) {
      vmin = v;
      m = i;
    }
    s = i;
  }
  if (m < 0) throw EmptyJ();
  return {m, s};
}

struct SubproblemData {
  int k_eff = 0;  // entries in the window
  Eigen::VectorXd tau, v, a, b;
  double delta_n = 0.0;
  Mat ZZ, GG, ZG;          // Gram blocks of the scaled columns under <.,.>_B
  Eigen::VectorXd Zx0, Gx0;  // <Z_i, x0>_B and <G_i, x0>_B
  int m = 0, s = 0;
  double L_n = 1.0;
  Eigen::VectorXd Lvec, Delta;
  std::vector<char> active;  // rho_i participates iff tau_i > 0
};

// Columns implied: Z_i = (L_i/L_n)(z_{i+1} - x0), G_i = g_i / L_n.
// Everything is filled from the memory's cached scalars.
inline SubproblemData assemble(const SubgameMemory& mem, double L_n) {
  SubproblemData d;
  const int k = mem.size();
  d.k_eff = k;
  d.L_n = L_n;
  auto [m, s] = select_indices(mem, L_n);
  d.m = m;
  d.s = s;

  d.tau.resize(k);
  d.v.resize(k);
  d.a.resize(k);
  d.b.resize(k);
  d.Lvec.resize(k);
  d.Delta.resize(k);
  d.Zx0.resize(k);
  d.Gx0.resize(k);
  d.active.resize(k);

  for (int i = 0; i < k; ++i) {
    const HistoryEntry& e = mem.entry(i);
    d.tau[i] = e.tau;
    d.v[i] = e.sample.f - e.gg / (2.0 * L_n);
    d.Lvec[i] = e.L;
    d.Delta[i] = e.Delta;
    d.active[i] = e.tau > 0.0 ? 1 : 0;
  }
  const double v_m = d.v[m];
  for (int i = 0; i < k; ++i) {
    const HistoryEntry& e = mem.entry(i);
    // a_i = tau_i (f_i - |g_i|^2/(2L_i)) + L_i/2 |z|^2 - L_i/2 |x0|^2
    //       - v_m tau_i - <L_i (z - x0), x0>_B; the x0 terms collapse to
    //       L_i/2 |z - x0|^2.
    d.a[i] = e.tau * (e.sample.f - e.gg / (2.0 * e.L) - v_m) + 0.5 * e.L * e.zz;
    d.b[i] = e.sample.f - e.gxx0 - v_m;
    d.Zx0[i] = (e.L / L_n) * e.zx0;
    d.Gx0[i] = e.gx0 / L_n;
  }
  {
    const HistoryEntry& es = mem.entry(s);
    d.delta_n = L_n * es.tau *
                (1.0 / (es.L * es.L) - 1.0 / (L_n * L_n)) * 0.5 * es.gg;
  }
  d.ZZ.resize(k, k);
  d.GG.resize(k, k);
  d.ZG.resize(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      d.ZZ(i, j) = (d.Lvec[i] * d.Lvec[j] / (L_n * L_n)) * mem.zz(i, j);
      d.GG(i, j) = mem.gg(i, j) / (L_n * L_n);
      d.ZG(i, j) = (d.Lvec[i] / (L_n * L_n)) * mem.zg(i, j);
    }
  }
  return d;
}

// epsilon(rho, gamma) = <rho, a> + <gamma, b> + delta_n
//                       - L_n/2 (rho'ZZrho - 2 rho'ZGgamma + gamma'GGgamma)
inline double epsilon_eval(const SubproblemData& d, const Eigen::VectorXd& rho,
                           const Eigen::VectorXd& gamma) {
  const double quad = rho.dot(d.ZZ * rho) - 2.0 * rho.dot(d.ZG * gamma) +
                      gamma.dot(d.GG * gamma);
  return rho.dot(d.a) + gamma.dot(d.b) + d.delta_n - 0.5 * d.L_n * quad;
}

struct SubproblemSolution {
  Eigen::VectorXd rho, gamma;
  double tau_prime = 0.0;
  double delta_prime = 0.0;  // <rho, Delta>
  enum class Status { Optimal, Unbounded, Fallback } status = Status::Fallback;
};

// rho = (L_n/L_s) e_s, gamma = 0: always feasible, reproduces the plain OBL
// continuation and guarantees tau' >= tau_s.
inline SubproblemSolution fallback(const SubproblemData& d) {
  SubproblemSolution out;
  out.rho = Eigen::VectorXd::Zero(d.k_eff);
  out.gamma = Eigen::VectorXd::Zero(d.k_eff);
  const double kappa = d.L_n / d.Lvec[d.s];
  out.rho[d.s] = kappa;
  out.tau_prime = kappa * d.tau[d.s];
  out.delta_prime = kappa * d.Delta[d.s];
  out.status = SubproblemSolution::Status::Fallback;
  return out;
}

namespace detail {

// Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_simplex(Eigen::VectorXd v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  int rho = 0;
  for (int j = 0; j < n; ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / (j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      theta = t;
    }
  }
  for (int i = 0; i < n; ++i) v[i] = std::max(v[i] - theta, 0.0);
  return v;
}

struct Restricted {
  // maps the active subproblem coordinates u = (rho_act, gamma) to vectors
  std::vector<int> rho_idx;     // active rho positions in [0, k)
  int k = 0;
  Eigen::VectorXd c;            // objective coefficients
  Eigen::VectorXd lin;          // linear part of epsilon
  Mat P;                        // epsilon(u) = delta + lin.u - 1/2 u'Pu
  double delta = 0.0;

  int dim() const { return static_cast<int>(c.size()); }

  void expand(const Eigen::VectorXd& u, Eigen::VectorXd& rho,
              Eigen::VectorXd& gamma) const {
    rho = Eigen::VectorXd::Zero(k);
    gamma = Eigen::VectorXd::Zero(k);
    const int na = static_cast<int>(rho_idx.size());
    for (int i = 0; i < na; ++i) rho[rho_idx[i]] = u[i];
    for (int j = 0; j < k; ++j) gamma[j] = u[na + j];
  }

  double eps(const Eigen::VectorXd& u) const {
    return delta + lin.dot(u) - 0.5 * u.dot(P * u);
  }
};

inline Restricted restrict_data(const SubproblemData& d) {
  Restricted r;
  r.k = d.k_eff;
  for (int i = 0; i < d.k_eff; ++i)
    if (d.active[i]) r.rho_idx.push_back(i);
  const int na = static_cast<int>(r.rho_idx.size());
  const int nv = na + d.k_eff;
  r.c.resize(nv);
  r.lin.resize(nv);
  r.P.resize(nv, nv);
  for (int i = 0; i < na; ++i) {
    r.c[i] = d.tau[r.rho_idx[i]];
    r.lin[i] = d.a[r.rho_idx[i]];
  }
  for (int j = 0; j < d.k_eff; ++j) {
    r.c[na + j] = 1.0;
    r.lin[na + j] = d.b[j];
  }
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < na; ++j)
      r.P(i, j) = d.L_n * d.ZZ(r.rho_idx[i], r.rho_idx[j]);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < d.k_eff; ++j) {
      r.P(i, na + j) = -d.L_n * d.ZG(r.rho_idx[i], j);
      r.P(na + j, i) = r.P(i, na + j);
    }
  for (int i = 0; i < d.k_eff; ++i)
    for (int j = 0; j < d.k_eff; ++j) r.P(na + i, na + j) = d.L_n * d.GG(i, j);
  r.delta = d.delta_n;
  return r;
}

}  // namespace detail

// Searches for a recession ray: (rho, gamma) >= 0 on the unit simplex with
// vanishing quadratic form, nonnegative linear part, and positive objective.
// Realized as a projected-gradient minimum-eigenvalue search (200 iterations)
// from a few deterministic starts.
inline std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>>
detect_unbounded(const SubproblemData& d) {
  const detail::Restricted r = detail::restrict_data(d);
  const int nv = r.dim();
  if (nv == 0) return std::nullopt;
  // quadratic form without the L_n/2 factor
  const Mat Q = r.P / d.L_n;
  const double ray_tol = 1e-10 * (1.0 + Q.trace());

  std::vector<Eigen::VectorXd> starts;
  {
    // position of the fallback coordinate rho_s in the restricted vector
    int spos = -1;
    for (int i = 0; i < static_cast<int>(r.rho_idx.size()); ++i)
      if (r.rho_idx[i] == d.s) spos = i;
    if (spos >= 0) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(nv);
      e[spos] = 1.0;
      starts.push_back(e);
    }
    starts.push_back(Eigen::VectorXd::Constant(nv, 1.0 / nv));
    const double csum = r.c.sum();
    if (csum > 0) starts.push_back(r.c / csum);
  }

  const double step = 1.0 / (2.0 * Q.norm() + 1e-300);
  for (Eigen::VectorXd u : starts) {
    for (int it = 0; it < 200; ++it)
      u = detail::project_simplex(u - step * (2.0 * (Q * u)));
    const double quad = u.dot(Q * u);
    if (quad <= ray_tol && r.lin.dot(u) >= -ray_tol && r.c.dot(u) > ray_tol) {
      Eigen::VectorXd rho, gamma;
      r.expand(u, rho, gamma);
      return std::make_pair(std::move(rho), std::move(gamma));
    }
  }
  return std::nullopt;
}

namespace detail {

// Log-barrier damped-Newton homotopy for
//   max c.u  s.t.  eps(u) >= 0, u >= 0.
// Phase 1 centers on the pure barrier from a point near the fallback;
// phase 2 follows the central path with mu cut by 0.2 per stage and at most
// 50 damped Newton steps per stage.  mu_0 comes from the Newton-decrement
// condition at the analytic center, so the iterate never jams against the
// constraint boundary.  Returns nullopt when no interior start exists.
inline std::optional<Eigen::VectorXd> barrier_maximize(
    const Restricted& r, const Eigen::VectorXd& u_fallback) {
  const int nv = r.dim();

  Eigen::VectorXd u;
  {
    bool found = false;
    const double base = 1.0 + u_fallback.lpNorm<Eigen::Infinity>();
    for (double scale : {0.5, 0.25, 0.1, 0.0}) {
      double eta = 1e-3 * base;
      for (int trial = 0; trial < 10 && !found; ++trial, eta *= 0.1) {
        Eigen::VectorXd cand =
            scale * u_fallback + Eigen::VectorXd::Constant(nv, eta);
        if (r.eps(cand) > 0.0 && cand.minCoeff() > 0.0) {
          u = std::move(cand);
          found = true;
        }
      }
      if (found) break;
    }
    if (!found) return std::nullopt;
  }

  // damped Newton on F_mu(u) = -weight c.u - mu (log eps + sum log u_i);
  // weight 0 gives the pure centering objective
  const auto minimize = [&](double weight, double mu, int max_steps) {
    const auto value = [&](const Eigen::VectorXd& w) {
      const double e = r.eps(w);
      if (e <= 0.0 || w.minCoeff() <= 0.0)
        return std::numeric_limits<double>::infinity();
      return -weight * r.c.dot(w) - mu * std::log(e) -
             mu * w.array().log().sum();
    };
    for (int newton = 0; newton < max_steps; ++newton) {
      const double e = r.eps(u);
      const Eigen::VectorXd ge = r.lin - r.P * u;  // grad eps
      Eigen::VectorXd grad = -weight * r.c - (mu / e) * ge;
      grad.array() -= mu / u.array();
      Mat H = (mu / (e * e)) * (ge * ge.transpose()) + (mu / e) * r.P;
      H.diagonal().array() += mu / u.array().square();

      Eigen::VectorXd p = H.ldlt().solve(-grad);
      if (!p.allFinite()) {
        H.diagonal().array() += 1e-12 * (1.0 + H.trace());
        p = H.ldlt().solve(-grad);
        if (!p.allFinite()) return;
      }
      const double decrement = -grad.dot(p);
      if (decrement <= 1e-16 * mu) return;

      // fraction-to-boundary on u >= 0 and eps >= 0
      double alpha = 1.0;
      for (int i = 0; i < nv; ++i)
        if (p[i] < 0.0) alpha = std::min(alpha, -u[i] / p[i] * 0.95);
      {
        const double gp = ge.dot(p);
        const double q2 = 0.5 * p.dot(r.P * p);
        if (q2 > 0.0) {
          const double disc = gp * gp + 4.0 * q2 * e;
          const double ab = (gp + std::sqrt(std::max(0.0, disc))) / (2.0 * q2);
          if (ab > 0.0) alpha = std::min(alpha, 0.95 * ab);
        } else if (gp < 0.0) {
          alpha = std::min(alpha, 0.95 * e / (-gp));
        }
      }
      const double f0 = value(u);
      int bt = 0;
      while (bt < 60 &&
             value(u + alpha * p) > f0 - 1e-4 * alpha * decrement) {
        alpha *= 0.5;
        ++bt;
      }
      if (bt == 60) return;
      u += alpha * p;
      if (alpha * p.lpNorm<Eigen::Infinity>() <
          1e-16 * (1.0 + u.lpNorm<Eigen::Infinity>()))
        return;
    }
  };

  // phase 1: analytic center
  minimize(0.0, 1.0, 200);

  // mu_0 from the decrement of the full objective at the center:
  // lambda^2 = c' H^{-1} c / mu <= 1/4  =>  mu_0 = 4 c' H^{-1} c
  double mu0 = 1.0;
  {
    const double e = r.eps(u);
    if (e > 0.0) {
      const Eigen::VectorXd ge = r.lin - r.P * u;
      Mat H = (1.0 / (e * e)) * (ge * ge.transpose()) + (1.0 / e) * r.P;
      H.diagonal().array() += u.array().square().inverse();
      const Eigen::VectorXd hc = H.ldlt().solve(r.c);
      if (hc.allFinite())
        mu0 = std::max(1e-8, 4.0 * r.c.dot(hc));
    }
  }

  double mu = mu0;
  for (int stage = 0; stage < 120; ++stage) {
    minimize(1.0, mu, 50);
    // duality-gap heuristic: the path point is mu (nv + 1) from optimal
    if (mu * (nv + 1) <= 1e-10 * (1.0 + std::abs(r.c.dot(u)))) break;
    mu *= 0.2;
  }
  return u;
}

}  // namespace detail

// Solves the subgame subproblem.  Bounded instances return a feasible
// (rho, gamma) with status Optimal whose objective is never below the
// fallback's (L_n/L_s) tau_s; recession rays return status Unbounded; any
// solver failure degrades to the fallback point.
inline SubproblemSolution solve(const SubproblemData& d) {
  if (auto ray = detect_unbounded(d)) {
    SubproblemSolution out;
    out.rho = std::move(ray->first);
    out.gamma = std::move(ray->second);
    out.tau_prime = std::numeric_limits<double>::infinity();
    out.delta_prime = 0.0;
    out.status = SubproblemSolution::Status::Unbounded;
    return out;
  }

  SubproblemSolution fb = fallback(d);
  const detail::Restricted r = detail::restrict_data(d);
  const int na = static_cast<int>(r.rho_idx.size());

  Eigen::VectorXd u_fb = Eigen::VectorXd::Zero(r.dim());
  for (int i = 0; i < na; ++i)
    if (r.rho_idx[i] == d.s) u_fb[i] = fb.rho[d.s];

  auto u_opt = detail::barrier_maximize(r, u_fb);
  if (!u_opt) return fb;
  Eigen::VectorXd u = std::move(*u_opt);
  u = u.cwiseMax(0.0);

  // feasibility clipping: scale back toward the origin, which is feasible
  // since eps(0,0) = delta_n >= 0
  if (r.eps(u) < 0.0) {
    const double l = r.lin.dot(u);
    const double q = u.dot(r.P * u);
    double cstar = 1.0;
    if (q > 0.0) {
      cstar = (l + std::sqrt(std::max(0.0, l * l + 2.0 * q * r.delta))) / q;
    } else if (l < 0.0) {
      cstar = r.delta / (-l);
    }
    cstar = std::clamp(cstar, 0.0, 1.0);
    u *= cstar;
    for (int guard = 0; guard < 8 && r.eps(u) < 0.0; ++guard)
      u *= 1.0 - 1e-12;
    if (r.eps(u) < 0.0) return fb;
  }

  double tau_prime = r.c.dot(u);
  if (!std::isfinite(tau_prime)) return fb;

  // Near-unbounded aggregations carry multipliers that destroy double
  // precision in the downstream z' combination.  Scaling the multipliers
  // toward the origin keeps them feasible (the set is convex and contains
  // the origin), so cap the per-step growth of the certificate weight.
  const double cap = 1e6 * std::max(1.0, d.tau[d.s]);
  if (tau_prime > cap) {
    u *= cap / tau_prime;
    tau_prime = r.c.dot(u);
  }

  if (tau_prime < fb.tau_prime) {
    // the fallback point is at least as good; when the barrier certifies it
    // as (near-)optimal keep it with Optimal status, otherwise the solver
    // genuinely failed
    if (tau_prime >= fb.tau_prime - 1e-9 * (1.0 + fb.tau_prime))
      fb.status = SubproblemSolution::Status::Optimal;
    return fb;
  }

  SubproblemSolution out;
  r.expand(u, out.rho, out.gamma);
  out.tau_prime = tau_prime;
  out.delta_prime = out.rho.dot(d.Delta);
  out.status = SubproblemSolution::Status::Optimal;
  return out;
}

}  // namespace aspgm
