#pragma once

// ASPGM epoch orchestration: per-epoch smoothness seeding, BSPGM with a
// restart hook, a live strong-convexity estimate, and preconditioner
// reconstruction from the last t steps of each epoch.

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <utility>

#include "aspgm/bspgm.hpp"
#include "aspgm/rng.hpp"

namespace aspgm {

struct AspgmConfig {
  int k = 5;                 // subgame memory
  int t = 5;                 // preconditioner memory
  int min_epoch_iters = 20;  // restart heuristics
  int max_epoch_iters = 100;
  long budget = 100000;      // total oracle calls
  double grad_tol = 0.0;
  std::uint64_t rng_seed = 0;
  double curvature_tol = 1e-12;
};

struct EpochState {
  int epoch_index = 1;
  GeometryHandle geometry;
  Vec x0_epoch;
  double mu_est = std::numeric_limits<double>::infinity();
  double L0_epoch = 1.0;
  long iter_in_epoch = 0;
};

// Draws y = x0 + 1e-4 N(0,1) and returns local_L(x0, y); zero or non-finite
// results are redrawn up to 5 times before falling back to 1.  Every draw
// costs one oracle call, reported through `calls`.
inline double estimate_epoch_L0(const Oracle& oracle,
                                const GeometryHandle& geom,
                                const OracleSample& s0, Rng& rng,
                                long& calls) {
  const Eigen::Index d = s0.x.size();
  for (int attempt = 0; attempt < 6; ++attempt) {
    const Vec y = s0.x + 1e-4 * rng.normal_vec(d);
    Vec gy(d);
    const double fy = oracle(y, gy);
    ++calls;
    if (!std::isfinite(fy) || !gy.allFinite()) continue;
    const OracleSample sy = make_sample(geom, y, fy, std::move(gy));
    const double L = local_L(geom, s0, sy);
    if (std::isfinite(L) && L > 0.0) return L;
  }
  return 1.0;
}

// mu_n = min(mu_{n-1}, mu~_B(x_m, x_n)); the +inf sentinel (identical
// points) leaves the estimate unchanged, as do non-positive values.
inline void update_mu(EpochState& state, const GeometryHandle& geom,
                      const OracleSample& sample_m,
                      const OracleSample& sample_n) {
  const double mu = local_mu(geom, sample_m, sample_n);
  if (std::isfinite(mu) && mu > 0.0)
    state.mu_est = std::min(state.mu_est, mu);
}

// Restart test at serious steps: fires when the certificate weight has
// outgrown 2 L_n / mu + L_n Delta_n / (f(x0) - f(x_n)) after at least
// min_epoch iterations, or unconditionally after max_epoch iterations.
// mu_est = +inf (no strong-convexity evidence yet) disables the test.
inline bool restart_check(const EpochState& state, double tau_n, double L_n,
                          double Delta_n, double f_x0, double f_xn,
                          long iter_in_epoch, int min_epoch_iters,
                          int max_epoch_iters) {
  if (iter_in_epoch >= max_epoch_iters) return true;
  if (iter_in_epoch < min_epoch_iters) return false;
  const double decrease = f_x0 - f_xn;
  if (!(decrease > 0.0)) return false;
  if (!std::isfinite(state.mu_est) || state.mu_est <= 0.0) return false;
  const double threshold =
      2.0 * L_n / state.mu_est + L_n * Delta_n / decrease;
  return tau_n >= threshold;
}

// Curvature pairs from consecutive iterates of the epoch history, raw
// gradients in standard coordinates; degenerate input gives the identity.
inline GeometryHandle rebuild_preconditioner(
    const std::deque<RecentPair>& recent, int t,
    double curvature_tol = 1e-12) {
  if (t <= 0 || static_cast<int>(recent.size()) < 2) return GeometryHandle();
  std::vector<CurvaturePair> pairs;
  for (std::size_t i = 0; i + 1 < recent.size(); ++i)
    pairs.push_back(
        {recent[i + 1].x - recent[i].x, recent[i + 1].g_raw - recent[i].g_raw});
  return build_geometry(pairs, t, curvature_tol);
}

struct AspgmResult {
  Vec x_out;
  RunTrace trace;
  long oracle_calls = 0;
  int epochs = 0;
  Vec x_best;
  double f_best = std::numeric_limits<double>::infinity();
};

inline AspgmResult run_aspgm(const Oracle& oracle, const Vec& x0,
                             const AspgmConfig& cfg) {
  AspgmResult res;
  res.x_out = x0;
  if (cfg.budget <= 0) {
    res.trace.status = RunStatus::Budget;
    return res;
  }

  Rng rng(cfg.rng_seed);
  GeometryHandle geometry;  // identity for the first epoch
  Vec x0e = x0;
  long calls = 0;

  for (int epoch = 1; calls < cfg.budget; ++epoch) {
    res.epochs = epoch;
    EpochState state;
    state.epoch_index = epoch;
    state.geometry = geometry;
    state.x0_epoch = x0e;

    Vec g0(x0e.size());
    const double f0 = oracle(x0e, g0);
    ++calls;
    if (!std::isfinite(f0) || !g0.allFinite()) {
      res.trace.status = RunStatus::Aborted;
      break;
    }
    OracleSample s0 = make_sample(geometry, x0e, f0, std::move(g0), calls);
    if (s0.f < res.f_best) {
      res.f_best = s0.f;
      res.x_best = s0.x;
    }
    state.L0_epoch = estimate_epoch_L0(oracle, geometry, s0, rng, calls);

    BspgmConfig bcfg;
    bcfg.k = cfg.k;
    bcfg.L0 = state.L0_epoch;
    bcfg.grad_tol = cfg.grad_tol;
    bcfg.keep_recent = cfg.t + 1;
    bcfg.call_offset = calls;
    bcfg.epoch = epoch;
    // the hook ends the epoch within a few steps of max_epoch_iters
    bcfg.max_iters = std::min<long>(cfg.budget - calls, cfg.max_epoch_iters + 8);
    bcfg.stop_hook = [&state, &cfg, this_geom = geometry](
                         const IterationView& v) {
      state.iter_in_epoch = v.iter;
      update_mu(state, this_geom, v.sample_m, v.sample_n);
      if (!v.serious) return false;
      return restart_check(state, v.tau_n, v.L_n, v.Delta_n, v.f_x0,
                           v.sample_n.f, v.iter, cfg.min_epoch_iters,
                           cfg.max_epoch_iters);
    };

    BspgmResult er = run_bspgm(oracle, geometry, x0e, bcfg, std::move(s0));
    calls += er.oracle_calls;
    for (const TraceRecord& r : er.trace.records)
      res.trace.records.push_back(r);
    if (er.f_best < res.f_best) {
      res.f_best = er.f_best;
      res.x_best = er.x_best;
    }
    res.x_out = er.x_out;
    res.trace.status = er.trace.status;

    if (er.trace.status == RunStatus::GradTol ||
        er.trace.status == RunStatus::UnboundedOptimal ||
        er.trace.status == RunStatus::Aborted)
      break;
    if (calls >= cfg.budget) {
      res.trace.status = RunStatus::Budget;
      break;
    }

    // next epoch: rebuild the preconditioner from the last t steps; a fast
    // epoch with fewer than t+1 iterates keeps the previous geometry
    if (cfg.t > 0 && static_cast<int>(er.recent.size()) >= cfg.t + 1)
      geometry = rebuild_preconditioner(er.recent, cfg.t, cfg.curvature_tol);
    x0e = er.x_out;
  }

  res.trace.total_oracle_calls = calls;
  res.oracle_calls = calls;
  return res;
}

}  // namespace aspgm
