#pragma once

// BSPGM, the backtracking-free subgame perfect loop.  One oracle call per
// iteration; the smoothness test never discards an iterate.  When the test
// fails the step is a "null step": its oracle data stays in memory, the
// certificate is voided (tau = 0, z = x0, Delta = 0) and L at least doubles.
//
// Stopping: |g|_B <= grad_tol, iteration budget, or the external stop hook.
// On grad_tol / budget stops the last serious step is re-taken in place with
// the final-step branch (no extra oracle call).  When the stop hook fires,
// the next serious step is taken with the final-step branch and returned,
// waiting through at most 3 null steps.

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "aspgm/subproblem.hpp"

namespace aspgm {

enum class StepKind { Serious, Null, Final };
enum class RunStatus { GradTol, Budget, StopHook, UnboundedOptimal, Aborted };

struct TraceRecord {
  long iter = 0;
  StepKind kind = StepKind::Serious;
  double L = 0.0;
  double tau = 0.0;
  double Delta = 0.0;
  double f = 0.0;
  double gnorm_B = 0.0;
  long oracle_calls = 0;
  double wall_time = 0.0;
  int epoch = 0;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  RunStatus status = RunStatus::Budget;
  long total_oracle_calls = 0;
};

// L_n / tau_n, the computable part of the convergence certificate.
inline double certificate_bound(const TraceRecord& r) {
  if (r.kind == StepKind::Null || r.tau <= 0.0)
    return std::numeric_limits<double>::infinity();
  return r.L / r.tau;
}

// Per-iteration observability for the stop hook (restart logic, mu updates)
// and for tests.  References are valid only during the callback.
struct IterationView {
  long iter = 0;
  bool serious = false;
  bool final_branch = false;
  const OracleSample& sample_m;
  const OracleSample& sample_n;
  const SubproblemData& data;
  const SubproblemSolution& sol;
  const Vec& z_prime;
  double tau_step = 0.0;    // OBL update result before the null test
  const Vec& z_step;
  double Delta_step = 0.0;
  double L_n = 0.0;
  double tau_n = 0.0;       // certificate values actually stored
  double Delta_n = 0.0;
  const Vec& x0;
  double f_x0 = 0.0;
};

struct BspgmConfig {
  int k = 5;                // subgame memory size, >= 1
  double L0 = 1.0;
  long max_iters = 1000;    // iterations after the x0 evaluation
  double grad_tol = 0.0;
  std::function<bool(const IterationView&)> stop_hook;  // restart predicate
  int keep_recent = 0;      // ring of (x, raw gradient) pairs kept for the
                            // preconditioner rebuild; 0 disables
  long call_offset = 0;     // added to the oracle counts in the trace
  int epoch = 0;            // stamped into trace records
};

struct RecentPair {
  Vec x;
  Vec g_raw;
};

struct BspgmResult {
  Vec x_out;
  RunTrace trace;
  SubgameMemory memory;
  Certificate final_cert;     // certificate of the final(-branch) step
  Vec final_x;                // the point it refers to
  bool final_is_final_branch = false;
  bool final_evaluated = false;  // true when final_x was passed to the oracle
  double f_final = std::numeric_limits<double>::quiet_NaN();
  std::deque<RecentPair> recent;
  Vec x_best;                 // evaluated point with the smallest f
  double f_best = std::numeric_limits<double>::infinity();
  long oracle_calls = 0;      // calls made by this run
};

inline BspgmResult run_bspgm(
    const Oracle& oracle, const GeometryHandle& geom, const Vec& x0,
    const BspgmConfig& cfg,
    std::optional<OracleSample> seed_sample = std::nullopt) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(clock::now() - t_start).count();
  };

  BspgmResult res{.x_out = x0, .memory = SubgameMemory(cfg.k, x0)};
  long calls = 0;
  bool oracle_finite = true;

  const auto eval = [&](const Vec& x) {
    Vec g(x.size());
    const double f = oracle(x, g);
    ++calls;
    if (!std::isfinite(f) || !g.allFinite()) oracle_finite = false;
    OracleSample s = make_sample(geom, x, f, std::move(g), calls);
    if (oracle_finite && s.f < res.f_best) {
      res.f_best = s.f;
      res.x_best = s.x;
    }
    return s;
  };
  const auto push_recent = [&](const OracleSample& s) {
    if (cfg.keep_recent <= 0) return;
    res.recent.push_back({s.x, s.raw_grad()});
    if (static_cast<int>(res.recent.size()) > cfg.keep_recent)
      res.recent.pop_front();
  };
  const auto record = [&](long iter, StepKind kind, double L, double tau,
                          double Delta, const OracleSample& s) {
    res.trace.records.push_back({iter, kind, L, tau, Delta, s.f,
                                 s.grad_norm_B(), cfg.call_offset + calls,
                                 elapsed(), cfg.epoch});
  };

  // base case: tau_0 = 1, z_1 = x0 - g_0 / L_0
  OracleSample s0 = seed_sample ? std::move(*seed_sample) : eval(x0);
  if (seed_sample) {
    if (s0.f < res.f_best) {
      res.f_best = s0.f;
      res.x_best = s0.x;
    }
  }
  if (!std::isfinite(s0.f) || !s0.g.allFinite()) oracle_finite = false;
  double L = cfg.L0;
  record(0, StepKind::Serious, L, 1.0, 0.0, s0);
  res.final_cert = Certificate{1.0, x0 - s0.g / L, L, 0.0};
  res.final_x = x0;
  const double f_x0 = s0.f;

  // state for the in-place final-step re-take
  struct LastSerious {
    bool valid = false;
    double tau_prime = 0.0, Delta_prime = 0.0, delta_n = 0.0, L = 0.0;
    Vec z_prime, x_m, g_m;
  } last;

  const auto retake_final = [&] {
    if (!last.valid) return;  // keep the base certificate
    const double tau_f = obl_tau(last.tau_prime, true);
    res.final_x = (last.tau_prime / tau_f) * (last.x_m - last.g_m / last.L) +
                  ((tau_f - last.tau_prime) / tau_f) * last.z_prime;
    // z_{N+1} would need the gradient at final_x, which is not evaluated;
    // the stored z is the aggregation point z'.
    res.final_cert = Certificate{tau_f, last.z_prime, last.L,
                                 last.Delta_prime + last.delta_n};
    res.final_is_final_branch = true;
    res.final_evaluated = false;
    res.x_out = res.final_x;
  };

  const auto finish = [&](RunStatus st) {
    res.trace.status = st;
    res.trace.total_oracle_calls = cfg.call_offset + calls;
    res.oracle_calls = calls;
    return res;
  };

  if (!oracle_finite) return finish(RunStatus::Aborted);

  res.memory.push(geom, s0, 1.0, x0 - s0.g / L, L, 0.0);
  push_recent(s0);
  if (s0.grad_norm_B() <= cfg.grad_tol) {
    res.x_out = x0;
    res.final_x = x0;
    res.final_evaluated = true;
    res.f_final = s0.f;
    return finish(RunStatus::GradTol);
  }

  bool pending_final = false;
  int final_wait = 0;

  for (long n = 1; n <= cfg.max_iters; ++n) {
    SubproblemData data = assemble(res.memory, L);
    const int m = data.m;
    const Vec x_m = res.memory.entry(m).sample.x;
    const Vec g_m = res.memory.entry(m).sample.g;

    auto ray = detect_unbounded(data);
    SubproblemSolution sol;
    bool effectively_unbounded = ray.has_value();
    if (!effectively_unbounded) {
      sol = solve(data);
      // A certificate weight jumping a factor ~1e6 in one step means the
      // subproblem is unbounded at double precision: the certified gap is
      // below roundoff and continuing only corrupts the z combinations.
      effectively_unbounded =
          sol.status == SubproblemSolution::Status::Unbounded ||
          sol.tau_prime >= 0.999e6 * std::max(1.0, data.tau[data.s]);
    }
    if (effectively_unbounded) {
      // Lemma: x_m - g_m / L_n minimizes f
      const Vec xn = x_m - g_m / L;
      OracleSample sn = eval(xn);
      if (!oracle_finite) return finish(RunStatus::Aborted);
      record(n, StepKind::Final, L,
             std::numeric_limits<double>::infinity(), 0.0, sn);
      res.x_out = xn;
      res.final_x = xn;
      res.final_cert =
          Certificate{std::numeric_limits<double>::infinity(), x0, L, 0.0};
      res.final_evaluated = true;
      res.f_final = sn.f;
      return finish(RunStatus::UnboundedOptimal);
    }

    Vec z_prime = x0;
    for (int i = 0; i < data.k_eff; ++i) {
      if (sol.rho[i] != 0.0)
        z_prime += sol.rho[i] * (data.Lvec[i] / L) *
                   (res.memory.entry(i).z - x0);
      if (sol.gamma[i] != 0.0)
        z_prime -= (sol.gamma[i] / L) * res.memory.entry(i).sample.g;
    }

    const bool use_final = pending_final;
    const double tau_step = obl_tau(sol.tau_prime, use_final);
    const Vec x_n = (sol.tau_prime / tau_step) * (x_m - g_m / L) +
                    ((tau_step - sol.tau_prime) / tau_step) * z_prime;
    OracleSample sample_n = eval(x_n);
    if (!oracle_finite) {
      record(n, StepKind::Null, L, 0.0, 0.0, sample_n);
      return finish(RunStatus::Aborted);
    }

    // the smoothness test needs the raw gradient at x_m
    OracleSample sample_m = res.memory.entry(m).sample;
    if (!sample_m.has_raw()) sample_m.g_raw = geom.apply_B_inv(sample_m.g);
    const double L_loc = local_L(geom, sample_m, sample_n);
    // relative slack so that exactly-L-smooth boundaries do not flip on
    // roundoff
    const bool serious = !(L_loc > L * (1.0 + 1e-12));

    const Vec z_step =
        certificate_z_next(z_prime, tau_step, sol.tau_prime, L, sample_n.g);
    const double Delta_step = sol.delta_prime + data.delta_n;

    double tau_n, Delta_n;
    Vec z_next;
    double L_next;
    if (serious) {
      tau_n = tau_step;
      Delta_n = Delta_step;
      z_next = z_step;
      L_next = L;
    } else {
      tau_n = 0.0;
      Delta_n = 0.0;
      z_next = x0;
      L_next = std::max(L_loc, 2.0 * L);
    }

    res.memory.push(geom, sample_n, tau_n, z_next, L, Delta_n);
    push_recent(sample_n);
    record(n, serious ? (use_final ? StepKind::Final : StepKind::Serious)
                      : StepKind::Null,
           L, tau_n, Delta_n, sample_n);

    if (serious) {
      last = {true, sol.tau_prime, sol.delta_prime, data.delta_n, L,
              z_prime, x_m, g_m};
    }

    bool hook_fired = false;
    if (cfg.stop_hook) {
      IterationView view{n,       serious, use_final, sample_m, sample_n,
                         data,    sol,     z_prime,   tau_step, z_step,
                         Delta_step, L,    tau_n,     Delta_n,  x0,
                         f_x0};
      hook_fired = cfg.stop_hook(view);
    }

    const bool grad_met = sample_n.grad_norm_B() <= cfg.grad_tol;
    if (pending_final) {
      if (serious) {
        res.x_out = x_n;
        res.final_x = x_n;
        res.final_cert = Certificate{tau_n, z_next, L, Delta_n};
        res.final_is_final_branch = true;
        res.final_evaluated = true;
        res.f_final = sample_n.f;
        return finish(grad_met ? RunStatus::GradTol : RunStatus::StopHook);
      }
      if (++final_wait > 3) {
        retake_final();
        return finish(RunStatus::StopHook);
      }
    } else {
      if (grad_met) {
        retake_final();
        return finish(RunStatus::GradTol);
      }
      if (hook_fired) {
        pending_final = true;
        final_wait = 0;
      }
    }

    L = L_next;
  }

  retake_final();
  return finish(RunStatus::Budget);
}

}  // namespace aspgm
