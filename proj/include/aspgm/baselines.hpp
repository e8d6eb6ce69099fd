#pragma once

// Reference methods with shared oracle accounting: OGM with a known L, OBL
// with backtracking, fixed-step gradient descent with adaptive L, and L-BFGS
// with Armijo backtracking.  Every (f, grad f) evaluation counts, including
// rejected candidates and linesearch trials.

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "aspgm/bspgm.hpp"

namespace aspgm {

struct BaselineResult {
  Vec x_out;
  RunTrace trace;
  Certificate final_cert;  // meaningful for OGM / OBL only
  Vec final_x;
  bool final_evaluated = false;
  double f_final = std::numeric_limits<double>::quiet_NaN();
  Vec x_best;
  double f_best = std::numeric_limits<double>::infinity();
  long oracle_calls = 0;
};

namespace detail {

struct BaselineRun {
  const Oracle& oracle;
  BaselineResult& res;
  long calls = 0;
  long call_offset = 0;
  bool finite = true;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  GeometryHandle geom;  // identity; baselines run in standard coordinates

  OracleSample eval(const Vec& x) {
    Vec g(x.size());
    const double f = oracle(x, g);
    ++calls;
    if (!std::isfinite(f) || !g.allFinite()) finite = false;
    OracleSample s = make_sample(geom, x, f, std::move(g), calls);
    if (finite && s.f < res.f_best) {
      res.f_best = s.f;
      res.x_best = s.x;
    }
    return s;
  }
  void record(long iter, StepKind kind, double L, double tau, double Delta,
              const OracleSample& s) {
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.trace.records.push_back({iter, kind, L, tau, Delta, s.f,
                                 s.grad_norm_B(), call_offset + calls, dt, 0});
  }
  BaselineResult& finish(RunStatus st) {
    res.trace.status = st;
    res.trace.total_oracle_calls = call_offset + calls;
    res.oracle_calls = calls;
    return res;
  }
};

}  // namespace detail

// OGM with known global L: tau_0 = 2, z_1 = x0 - 2 g_0 / L, final-step
// branch at n = N.  Guarantee f_N - f* <= L |x0 - x*|^2 / (2 tau_N).
inline BaselineResult run_ogm(const Oracle& oracle, const Vec& x0, double L,
                              long N, double grad_tol = 0.0,
                              std::optional<OracleSample> seed = std::nullopt,
                              long call_offset = 0) {
  BaselineResult res;
  res.x_out = x0;
  detail::BaselineRun run{oracle, res};
  run.call_offset = call_offset;

  OracleSample s = seed ? std::move(*seed) : run.eval(x0);
  if (seed && s.f < res.f_best) {
    res.f_best = s.f;
    res.x_best = s.x;
  }
  if (!run.finite) return run.finish(RunStatus::Aborted);
  double tau = 2.0;
  Vec z = x0 - (2.0 / L) * s.g;
  run.record(0, StepKind::Serious, L, tau, 0.0, s);
  res.final_cert = {tau, z, L, 0.0};
  res.final_x = x0;
  if (s.grad_norm_B() <= grad_tol) {
    res.final_evaluated = true;
    res.f_final = s.f;
    return run.finish(RunStatus::GradTol);
  }

  for (long n = 1; n <= N; ++n) {
    const bool final_step = n == N;
    const double tau_n = ogm_tau(tau, final_step);
    const Vec x_n =
        (tau / tau_n) * (s.x - s.g / L) + ((tau_n - tau) / tau_n) * z;
    OracleSample s_n = run.eval(x_n);
    if (!run.finite) return run.finish(RunStatus::Aborted);
    z = certificate_z_next(z, tau_n, tau, L, s_n.g);
    tau = tau_n;
    run.record(n, final_step ? StepKind::Final : StepKind::Serious, L, tau,
               0.0, s_n);
    s = std::move(s_n);
    res.x_out = s.x;
    res.final_x = s.x;
    res.final_cert = {tau, z, L, 0.0};
    res.final_evaluated = true;
    res.f_final = s.f;
    if (s.grad_norm_B() <= grad_tol) return run.finish(RunStatus::GradTol);
  }
  return run.finish(RunStatus::Budget);
}

// OBL: candidates failing Q_{n-1,n}(L_n) >= 0 are discarded (the oracle
// call still counts), L doubles, and delta_n is recomputed with the doubled
// L before the retry.  The certificate state only mutates on acceptance.
inline BaselineResult run_obl(const Oracle& oracle, const Vec& x0, double L0,
                              long budget, double grad_tol = 0.0,
                              std::optional<OracleSample> seed = std::nullopt,
                              long call_offset = 0) {
  BaselineResult res;
  res.x_out = x0;
  detail::BaselineRun run{oracle, res};
  run.call_offset = call_offset;

  OracleSample s = seed ? std::move(*seed) : run.eval(x0);
  if (seed && s.f < res.f_best) {
    res.f_best = s.f;
    res.x_best = s.x;
  }
  if (!run.finite) return run.finish(RunStatus::Aborted);
  double tau = 1.0, Delta = 0.0, L_prev = L0;
  Vec z = x0 - s.g / L0;
  run.record(0, StepKind::Serious, L0, tau, Delta, s);
  res.final_cert = {tau, z, L0, 0.0};
  res.final_x = x0;
  if (s.grad_norm_B() <= grad_tol) {
    res.final_evaluated = true;
    res.f_final = s.f;
    return run.finish(RunStatus::GradTol);
  }

  // saved pre-acceptance state for the in-place final-step re-take
  struct Last {
    bool valid = false;
    double tau_hat, L, Delta_hat, delta;
    Vec x, g, z;
  } last;
  const auto retake_final = [&] {
    if (!last.valid) return;
    const double tau_f = obl_tau(last.tau_hat, true);
    res.final_x = (last.tau_hat / tau_f) * (last.x - last.g / last.L) +
                  ((tau_f - last.tau_hat) / tau_f) * last.z;
    res.final_cert =
        Certificate{tau_f, last.z, last.L, last.Delta_hat + last.delta};
    res.final_evaluated = false;
    res.x_out = res.final_x;
  };

  long n = 0;
  double L_n = L_prev;
  while (run.calls < budget) {
    ++n;
    while (true) {
      if (run.calls >= budget) {
        retake_final();
        return run.finish(RunStatus::Budget);
      }
      const bool final_step = run.calls == budget - 1;
      const double delta =
          L_n * tau * (1.0 / (L_prev * L_prev) - 1.0 / (L_n * L_n)) * 0.5 *
          s.grad_norm_B_sq();
      const double Delta_hat = (L_n / L_prev) * Delta;
      const double tau_n = obl_tau(tau, final_step);
      const Vec x_n =
          (tau / tau_n) * (s.x - s.g / L_n) + ((tau_n - tau) / tau_n) * z;
      OracleSample s_n = run.eval(x_n);
      if (!run.finite) return run.finish(RunStatus::Aborted);
      // roundoff guard: Q = 0 exactly on the boundary must not reject
      const double q_tol = 1e-12 * (1.0 + std::abs(s.f) + std::abs(s_n.f));
      if (compute_Q(run.geom, s, s_n, L_n) < -q_tol) {
        L_n *= 2.0;  // reject: nothing else mutates
        continue;
      }
      last = {true, tau, L_n, Delta_hat, delta, s.x, s.g, z};
      z = certificate_z_next(z, tau_n, tau, L_n, s_n.g);
      tau = tau_n;
      Delta = Delta_hat + delta;
      L_prev = L_n;
      s = std::move(s_n);
      run.record(n, final_step ? StepKind::Final : StepKind::Serious, L_n,
                 tau, Delta, s);
      res.x_out = s.x;
      res.final_x = s.x;
      res.final_cert = {tau, z, L_n, Delta};
      res.final_evaluated = true;
      res.f_final = s.f;
      if (final_step) return run.finish(RunStatus::Budget);
      if (s.grad_norm_B() <= grad_tol) {
        retake_final();
        return run.finish(RunStatus::GradTol);
      }
      break;
    }
  }
  retake_final();
  return run.finish(RunStatus::Budget);
}

// Fixed-step gradient descent, step 1/L, doubling L on Armijo failure.
inline BaselineResult run_gd(const Oracle& oracle, const Vec& x0, double L0,
                             long budget, double grad_tol = 0.0,
                             double armijo_c1 = 1e-4,
                             std::optional<OracleSample> seed = std::nullopt,
                             long call_offset = 0) {
  BaselineResult res;
  res.x_out = x0;
  detail::BaselineRun run{oracle, res};
  run.call_offset = call_offset;

  OracleSample s = seed ? std::move(*seed) : run.eval(x0);
  if (seed && s.f < res.f_best) {
    res.f_best = s.f;
    res.x_best = s.x;
  }
  if (!run.finite) return run.finish(RunStatus::Aborted);
  double L = L0;
  run.record(0, StepKind::Serious, L, 0.0, 0.0, s);
  if (s.grad_norm_B() <= grad_tol) return run.finish(RunStatus::GradTol);

  long n = 0;
  while (run.calls < budget) {
    const double gg = s.grad_norm_B_sq();
    OracleSample s_n = run.eval(s.x - s.g / L);
    if (!run.finite) return run.finish(RunStatus::Aborted);
    if (s_n.f > s.f - armijo_c1 * gg / L) {
      L *= 2.0;
      continue;
    }
    s = std::move(s_n);
    run.record(++n, StepKind::Serious, L, 0.0, 0.0, s);
    res.x_out = s.x;
    if (s.grad_norm_B() <= grad_tol) return run.finish(RunStatus::GradTol);
  }
  return run.finish(RunStatus::Budget);
}

struct LbfgsConfig {
  int memory = 10;
  double armijo_c1 = 1e-4;
  double armijo_shrink = 0.5;
  long budget = 1000;
  double grad_tol = 0.0;
  double curvature_tol = 1e-12;
};

// L-BFGS direction from the two-loop recursion, Armijo backtracking,
// curvature-filtered pair storage.
inline BaselineResult run_lbfgs_bl(
    const Oracle& oracle, const Vec& x0, const LbfgsConfig& cfg,
    std::optional<OracleSample> seed = std::nullopt, long call_offset = 0) {
  BaselineResult res;
  res.x_out = x0;
  detail::BaselineRun run{oracle, res};
  run.call_offset = call_offset;

  OracleSample s = seed ? std::move(*seed) : run.eval(x0);
  if (seed && s.f < res.f_best) {
    res.f_best = s.f;
    res.x_best = s.x;
  }
  if (!run.finite) return run.finish(RunStatus::Aborted);
  run.record(0, StepKind::Serious, 0.0, 0.0, 0.0, s);
  if (s.grad_norm_B() <= cfg.grad_tol) return run.finish(RunStatus::GradTol);

  std::deque<CurvaturePair> pairs;
  bool reset_used = false;
  long n = 0;
  while (run.calls < cfg.budget) {
    const GeometryHandle geom = build_geometry(
        {pairs.begin(), pairs.end()}, cfg.memory, cfg.curvature_tol);
    Vec p = -geom.apply_B(s.g);
    double gp = s.g.dot(p);
    if (!(gp < 0.0)) {  // not a descent direction; fall back to -g
      p = -s.g;
      gp = -s.grad_norm_B_sq();
    }

    double alpha = 1.0;
    std::optional<OracleSample> accepted;
    while (run.calls < cfg.budget) {
      OracleSample trial = run.eval(s.x + alpha * p);
      if (!run.finite) return run.finish(RunStatus::Aborted);
      if (trial.f <= s.f + cfg.armijo_c1 * alpha * gp) {
        accepted = std::move(trial);
        break;
      }
      alpha *= cfg.armijo_shrink;
      if (alpha < 1e-18) break;
    }
    if (!accepted) {
      if (!reset_used && !pairs.empty()) {
        pairs.clear();  // discard stale curvature and retry from -g
        reset_used = true;
        continue;
      }
      return run.finish(RunStatus::Budget);
    }
    reset_used = false;

    CurvaturePair pair{accepted->x - s.x, accepted->raw_grad() - s.raw_grad()};
    if (pair.s.dot(pair.y) >
        cfg.curvature_tol * pair.s.norm() * pair.y.norm()) {
      pairs.push_back(std::move(pair));
      if (static_cast<int>(pairs.size()) > cfg.memory) pairs.pop_front();
    }
    s = std::move(*accepted);
    run.record(++n, StepKind::Serious, 0.0, 0.0, 0.0, s);
    res.x_out = s.x;
    if (s.grad_norm_B() <= cfg.grad_tol) return run.finish(RunStatus::GradTol);
  }
  return run.finish(RunStatus::Budget);
}

}  // namespace aspgm
