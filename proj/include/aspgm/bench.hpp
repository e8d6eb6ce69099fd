#pragma once

// Benchmark harness: suite definition, deterministic execution, first
// crossing of accuracy thresholds, CSV/JSON emission, and performance
// profile aggregation.
//
// Relative gap = (f(x_n) - f*) / (f(x0) - f*).  Oracle counting is uniform
// across methods: every (f, grad f) evaluation counts, including rejected
// candidates and linesearch trials.  f* comes from reference_optimum,
// computed once per instance (optionally cached on disk) and excluded from
// all wall-time measurements.  Timing is off by default so that identical
// seeds give byte-identical output; enable it with SuiteConfig::timing.

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aspgm/problems.hpp"

namespace aspgm {

struct BenchRecord {
  std::string problem_id;
  std::string algorithm_id;
  std::uint64_t seed = 0;
  int d = 0;
  double target_acc = 0.0;
  double oracle_calls = std::numeric_limits<double>::infinity();
  double wall_time_s = 0.0;
  double final_gap = 0.0;
  std::string status;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SuiteConfig {
  std::vector<Family> families;
  std::vector<int> dims;
  std::vector<double> kappas;
  std::vector<SpectrumSpec::Kind> spectra;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> algorithms;
  std::vector<double> thresholds;
  long budget = 15000;
  bool timing = false;
  int jobs = 1;
  std::string fstar_cache_dir;
  long fstar_budget = 60000;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline Family parse_family(const std::string& s, int lineno) {
  if (s == "ls") return Family::LS;
  if (s == "logistic") return Family::Logistic;
  if (s == "logsumexp") return Family::LogSumExp;
  if (s == "possquared") return Family::PosSquared;
  if (s == "fournorm") return Family::FourNorm;
  if (s == "cubicreg") return Family::CubicReg;
  throw ConfigError("line " + std::to_string(lineno) + ": unknown family '" +
                    s + "'");
}

}  // namespace detail

// Flat key-value + list format, one declaration per line:
//   families = ls, logistic
//   dims = 200, 400
//   kappas = 1e2, 1e4
//   spectra = uniform, bimodal
//   seeds = 1, 2
//   algorithms = aspgm-5-5, bspgm-7, obl
//   thresholds = 1e-4, 1e-7, 1e-10
//   budget = 15000
inline SuiteConfig parse_suite_config(std::istream& in) {
  SuiteConfig cfg;
  std::string line;
  int lineno = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const auto vals = detail::split_list(t.substr(eq + 1));
    if (vals.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": field '" + key +
                        "' has no values");
    const auto as_double = [&](const std::string& v) {
      try {
        std::size_t pos;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
      } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(lineno) + ": field '" +
                          key + "': bad number '" + v + "'");
      }
    };
    any = true;
    if (key == "families") {
      cfg.families.clear();
      for (const auto& v : vals)
        cfg.families.push_back(detail::parse_family(v, lineno));
    } else if (key == "dims") {
      cfg.dims.clear();
      for (const auto& v : vals)
        cfg.dims.push_back(static_cast<int>(as_double(v)));
    } else if (key == "kappas") {
      cfg.kappas.clear();
      for (const auto& v : vals) cfg.kappas.push_back(as_double(v));
    } else if (key == "spectra") {
      cfg.spectra.clear();
      for (const auto& v : vals) {
        if (v == "uniform")
          cfg.spectra.push_back(SpectrumSpec::Kind::Uniform);
        else if (v == "bimodal")
          cfg.spectra.push_back(SpectrumSpec::Kind::Bimodal);
        else
          throw ConfigError("line " + std::to_string(lineno) +
                            ": unknown spectrum '" + v + "'");
      }
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& v : vals)
        cfg.seeds.push_back(static_cast<std::uint64_t>(as_double(v)));
    } else if (key == "algorithms") {
      cfg.algorithms = vals;
    } else if (key == "thresholds") {
      cfg.thresholds.clear();
      for (const auto& v : vals) cfg.thresholds.push_back(as_double(v));
    } else if (key == "budget") {
      cfg.budget = static_cast<long>(as_double(vals[0]));
    } else {
      throw ConfigError("line " + std::to_string(lineno) +
                        ": unknown field '" + key + "'");
    }
  }
  if (!any) throw ConfigError("empty suite config");
  return cfg;
}

inline SuiteConfig load_suite_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open suite config " + path);
  return parse_suite_config(in);
}

// Desk-scale default mirroring the synthetic protocol: 6 families,
// d in {200, 400}, kappa in {1e2, 1e4}, both spectra, 2 seeds.
inline SuiteConfig default_suite() {
  SuiteConfig cfg;
  cfg.families = {Family::LS,         Family::Logistic, Family::LogSumExp,
                  Family::PosSquared, Family::FourNorm, Family::CubicReg};
  cfg.dims = {200, 400};
  cfg.kappas = {1e2, 1e4};
  cfg.spectra = {SpectrumSpec::Kind::Uniform, SpectrumSpec::Kind::Bimodal};
  cfg.seeds = {1, 2};
  cfg.algorithms = {"aspgm-5-5", "bspgm-7", "obl"};
  cfg.thresholds = {1e-4, 1e-7, 1e-10};
  return cfg;
}

// Algorithm ids: aspgm-<k>-<t>, bspgm-<k>, obl, ogm, gd, lbfgs-bl.
struct AlgSpec {
  enum class Kind { Aspgm, Bspgm, Obl, Ogm, Gd, LbfgsBl } kind;
  int k = 5, t = 5;
};

inline AlgSpec parse_algorithm_id(const std::string& id) {
  const auto bad = [&] {
    return ConfigError("unknown algorithm id '" + id + "'");
  };
  const auto num = [&](const std::string& s) {
    if (s.empty()) throw bad();
    for (char ch : s)
      if (!std::isdigit(static_cast<unsigned char>(ch))) throw bad();
    return std::stoi(s);
  };
  if (id == "obl") return {AlgSpec::Kind::Obl};
  if (id == "ogm") return {AlgSpec::Kind::Ogm};
  if (id == "gd") return {AlgSpec::Kind::Gd};
  if (id == "lbfgs-bl") return {AlgSpec::Kind::LbfgsBl};
  if (id.rfind("aspgm-", 0) == 0) {
    const std::string rest = id.substr(6);
    const auto dash = rest.find('-');
    if (dash == std::string::npos) throw bad();
    AlgSpec a{AlgSpec::Kind::Aspgm};
    a.k = num(rest.substr(0, dash));
    a.t = num(rest.substr(dash + 1));
    return a;
  }
  if (id.rfind("bspgm-", 0) == 0) {
    AlgSpec a{AlgSpec::Kind::Bspgm};
    a.k = num(id.substr(6));
    return a;
  }
  throw bad();
}

namespace detail {

// probe seeding shared by the adaptive methods: L0 = local_L(x0, x0 + 1e-4 xi)
struct Seeded {
  OracleSample s0;
  double L0 = 1.0;
  long calls = 0;
};

inline Seeded probe_L0(const Oracle& oracle, const Vec& x0,
                       std::uint64_t seed) {
  Seeded out;
  Vec g0(x0.size());
  const double f0 = oracle(x0, g0);
  out.calls = 1;
  GeometryHandle id;
  out.s0 = make_sample(id, x0, f0, std::move(g0), 1);
  Rng rng(seed);
  out.L0 = estimate_epoch_L0(oracle, id, out.s0, rng, out.calls);
  return out;
}

struct CellOutcome {
  std::vector<TraceRecord> records;
  double f0 = 0.0;
  RunStatus status = RunStatus::Budget;
};

inline CellOutcome run_algorithm(const ProblemInstance& p,
                                 const AlgSpec& alg, long budget,
                                 std::uint64_t seed, double grad_tol = 0.0) {
  CellOutcome out;
  switch (alg.kind) {
    case AlgSpec::Kind::Aspgm: {
      AspgmConfig cfg;
      cfg.k = alg.k;
      cfg.t = alg.t;
      cfg.budget = budget;
      cfg.grad_tol = grad_tol;
      cfg.rng_seed = seed;
      AspgmResult r = run_aspgm(p.oracle, p.x0, cfg);
      out.records = std::move(r.trace.records);
      out.status = r.trace.status;
      break;
    }
    case AlgSpec::Kind::Bspgm: {
      Seeded sd = probe_L0(p.oracle, p.x0, seed);
      BspgmConfig cfg;
      cfg.k = alg.k;
      cfg.L0 = sd.L0;
      cfg.max_iters = budget - sd.calls;
      cfg.grad_tol = grad_tol;
      cfg.call_offset = sd.calls;
      BspgmResult r =
          run_bspgm(p.oracle, GeometryHandle(), p.x0, cfg, std::move(sd.s0));
      out.records = std::move(r.trace.records);
      out.status = r.trace.status;
      break;
    }
    case AlgSpec::Kind::Obl: {
      Seeded sd = probe_L0(p.oracle, p.x0, seed);
      BaselineResult r = run_obl(p.oracle, p.x0, sd.L0, budget - sd.calls,
                                 grad_tol, std::move(sd.s0), sd.calls);
      out.records = std::move(r.trace.records);
      out.status = r.trace.status;
      break;
    }
    case AlgSpec::Kind::Ogm: {
      const double L = smoothness_bound(p);
      BaselineResult r = run_ogm(p.oracle, p.x0, L, budget - 1, grad_tol);
      out.records = std::move(r.trace.records);
      out.status = r.trace.status;
      break;
    }
    case AlgSpec::Kind::Gd: {
      Seeded sd = probe_L0(p.oracle, p.x0, seed);
      BaselineResult r = run_gd(p.oracle, p.x0, sd.L0, budget - sd.calls,
                                grad_tol, 1e-4, std::move(sd.s0), sd.calls);
      out.records = std::move(r.trace.records);
      out.status = r.trace.status;
      break;
    }
    case AlgSpec::Kind::LbfgsBl: {
      LbfgsConfig cfg;
      cfg.budget = budget - 1;
      cfg.grad_tol = grad_tol;
      Seeded sd = probe_L0(p.oracle, p.x0, seed);
      cfg.budget = budget - sd.calls;
      BaselineResult r =
          run_lbfgs_bl(p.oracle, p.x0, cfg, std::move(sd.s0), sd.calls);
      out.records = std::move(r.trace.records);
      out.status = r.trace.status;
      break;
    }
  }
  if (!out.records.empty()) out.f0 = out.records.front().f;
  return out;
}

}  // namespace detail

inline std::string fstar_quality_name(ReferenceOptimum::Quality q) {
  return q == ReferenceOptimum::Quality::ClosedForm ? "closed-form"
                                                    : "numerical";
}

// Disk cache for reference optima, keyed by problem id.
inline ReferenceOptimum cached_reference_optimum(const ProblemInstance& p,
                                                 const std::string& cache_dir,
                                                 long effort_budget) {
  namespace fs = std::filesystem;
  if (!cache_dir.empty()) {
    const fs::path file = fs::path(cache_dir) / (p.id + ".json");
    std::ifstream in(file);
    if (in) {
      try {
        nlohmann::json j;
        in >> j;
        ReferenceOptimum r;
        r.fstar = j.at("fstar").get<double>();
        r.quality = j.at("quality").get<std::string>() == "closed-form"
                        ? ReferenceOptimum::Quality::ClosedForm
                        : ReferenceOptimum::Quality::Numerical;
        return r;
      } catch (const std::exception&) {
        // unreadable cache entry: recompute below
      }
    }
  }
  const ReferenceOptimum r = reference_optimum(p, effort_budget);
  if (!cache_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cache_dir, ec);
    nlohmann::ordered_json j;
    j["fstar"] = r.fstar;
    j["quality"] = fstar_quality_name(r.quality);
    std::ofstream out(std::filesystem::path(cache_dir) / (p.id + ".json"));
    out << j.dump(2) << "\n";
  }
  return r;
}

// Runs the full (problem x algorithm x seed) grid.  One record per accuracy
// threshold; oracle_calls is the count at the first record whose running
// best gap crossed the threshold (inf if never).
inline std::vector<BenchRecord> run_suite(const SuiteConfig& cfg) {
  if (cfg.families.empty() || cfg.dims.empty() || cfg.kappas.empty() ||
      cfg.spectra.empty() || cfg.seeds.empty() || cfg.algorithms.empty() ||
      cfg.thresholds.empty())
    throw ConfigError("suite config is missing a required field");
  for (const auto& a : cfg.algorithms) parse_algorithm_id(a);  // validate

  struct Problem {
    ProblemInstance inst;
    ReferenceOptimum ref;
    std::uint64_t seed;
  };
  std::vector<Problem> problems;
  for (Family fam : cfg.families)
    for (int d : cfg.dims)
      for (double kappa : cfg.kappas)
        for (SpectrumSpec::Kind kind : cfg.spectra)
          for (std::uint64_t seed : cfg.seeds)
            problems.push_back(
                {gen_synthetic(fam, d, SpectrumSpec{kind, kappa}, seed),
                 ReferenceOptimum{}, seed});

  // reference optima first, excluded from every wall-time measurement
  {
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < problems.size();
           i = next.fetch_add(1))
        problems[i].ref = cached_reference_optimum(
            problems[i].inst, cfg.fstar_cache_dir, cfg.fstar_budget);
    };
    const int jobs = std::max(1, cfg.jobs);
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }

  struct Cell {
    std::size_t problem;
    std::size_t alg;
  };
  std::vector<Cell> cells;
  for (std::size_t pi = 0; pi < problems.size(); ++pi)
    for (std::size_t ai = 0; ai < cfg.algorithms.size(); ++ai)
      cells.push_back({pi, ai});

  std::vector<std::vector<BenchRecord>> cell_records(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t ci = next.fetch_add(1); ci < cells.size();
         ci = next.fetch_add(1)) {
      const Cell& cell = cells[ci];
      const Problem& prob = problems[cell.problem];
      const std::string& alg_id = cfg.algorithms[cell.alg];
      const AlgSpec alg = parse_algorithm_id(alg_id);

      const auto t0 = std::chrono::steady_clock::now();
      const detail::CellOutcome run = detail::run_algorithm(
          prob.inst, alg, cfg.budget, prob.seed);
      const double total_time =
          cfg.timing ? std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count()
                     : 0.0;

      const double fstar = prob.ref.fstar;
      const double gap0 = run.f0 - fstar;
      const std::string flag =
          prob.ref.quality == ReferenceOptimum::Quality::Numerical
              ? ";fstar=numerical"
              : "";
      for (double acc : cfg.thresholds) {
        BenchRecord rec;
        rec.problem_id = prob.inst.id;
        rec.algorithm_id = alg_id;
        rec.seed = prob.seed;
        rec.d = prob.inst.dim;
        rec.target_acc = acc;
        double best = std::numeric_limits<double>::infinity();
        double best_gap = std::numeric_limits<double>::infinity();
        for (const TraceRecord& r : run.records) {
          best = std::min(best, r.f);
          best_gap = gap0 > 0 ? (best - fstar) / gap0
                              : (best <= fstar ? 0.0 : 1.0);
          if (best_gap <= acc) {
            rec.oracle_calls = static_cast<double>(r.oracle_calls);
            rec.wall_time_s = cfg.timing ? r.wall_time : 0.0;
            break;
          }
        }
        rec.final_gap = best_gap;
        if (std::isfinite(rec.oracle_calls)) {
          rec.status = "reached" + flag;
        } else {
          rec.status = "budget" + flag;
          rec.wall_time_s = total_time;
        }
        cell_records[ci].push_back(std::move(rec));
      }
    }
  };
  const int jobs = std::max(1, cfg.jobs);
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<BenchRecord> records;
  for (auto& cr : cell_records)
    for (auto& r : cr) records.push_back(std::move(r));
  return records;
}

namespace detail {
inline std::string fmt17(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}
}  // namespace detail

// Header is fixed:
// problem_id,algorithm_id,seed,d,target_acc,oracle_calls,wall_time_s,final_gap,status
inline void emit_csv(const std::vector<BenchRecord>& records,
                     std::ostream& out) {
  out << "problem_id,algorithm_id,seed,d,target_acc,oracle_calls,wall_time_s,"
         "final_gap,status\n";
  for (const BenchRecord& r : records) {
    out << r.problem_id << ',' << r.algorithm_id << ',' << r.seed << ','
        << r.d << ',' << detail::fmt17(r.target_acc) << ',';
    if (std::isfinite(r.oracle_calls))
      out << static_cast<long long>(r.oracle_calls);
    else
      out << "inf";
    out << ',' << detail::fmt17(r.wall_time_s) << ','
        << detail::fmt17(r.final_gap) << ',' << r.status << '\n';
  }
}

inline void emit_csv(const std::vector<BenchRecord>& records,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw std::runtime_error("cannot open " + path);
  emit_csv(records, out);
}

inline void emit_json(const std::vector<BenchRecord>& records,
                      const std::string& path) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const BenchRecord& r : records) {
    nlohmann::ordered_json j;
    j["problem_id"] = r.problem_id;
    j["algorithm_id"] = r.algorithm_id;
    j["seed"] = r.seed;
    j["d"] = r.d;
    j["target_acc"] = r.target_acc;
    if (std::isfinite(r.oracle_calls))
      j["oracle_calls"] = static_cast<long long>(r.oracle_calls);
    else
      j["oracle_calls"] = "inf";
    j["wall_time_s"] = r.wall_time_s;
    j["final_gap"] = r.final_gap;
    j["status"] = r.status;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << arr.dump(2) << "\n";
}

inline std::vector<BenchRecord> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": empty file");
  std::vector<BenchRecord> records;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 9)
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": expected 9 fields");
    BenchRecord r;
    r.problem_id = f[0];
    r.algorithm_id = f[1];
    r.seed = std::stoull(f[2]);
    r.d = std::stoi(f[3]);
    r.target_acc = std::stod(f[4]);
    r.oracle_calls = f[5] == "inf"
                         ? std::numeric_limits<double>::infinity()
                         : std::stod(f[5]);
    r.wall_time_s = std::stod(f[6]);
    r.final_gap = std::stod(f[7]);
    r.status = f[8];
    records.push_back(std::move(r));
  }
  return records;
}

struct ProfileTable {
  std::vector<double> theta;
  std::vector<std::string> algorithms;
  Mat fraction;  // theta.size() x algorithms.size()
};

// For each algorithm, the fraction of problems solved within a factor theta
// of the per-problem best oracle-call count, on the log grid
// theta = 10^{j/10}, j = 0..20.
inline ProfileTable performance_profile(const std::vector<BenchRecord>& records,
                                        double target_acc) {
  ProfileTable t;
  for (int j = 0; j <= 20; ++j) t.theta.push_back(std::pow(10.0, j / 10.0));

  std::vector<std::string> problems;
  std::map<std::string, std::size_t> problem_idx, alg_idx;
  for (const BenchRecord& r : records) {
    if (std::abs(r.target_acc - target_acc) >
        1e-9 * (std::abs(target_acc) + 1e-300))
      continue;
    const std::string key = r.problem_id + "#" + std::to_string(r.seed);
    if (problem_idx.emplace(key, problems.size()).second)
      problems.push_back(key);
    if (alg_idx.emplace(r.algorithm_id, t.algorithms.size()).second)
      t.algorithms.push_back(r.algorithm_id);
  }
  const std::size_t np = problems.size(), na = t.algorithms.size();
  Mat calls = Mat::Constant(np, na, std::numeric_limits<double>::infinity());
  for (const BenchRecord& r : records) {
    if (std::abs(r.target_acc - target_acc) >
        1e-9 * (std::abs(target_acc) + 1e-300))
      continue;
    const std::string key = r.problem_id + "#" + std::to_string(r.seed);
    calls(problem_idx[key], alg_idx[r.algorithm_id]) = r.oracle_calls;
  }
  t.fraction = Mat::Zero(t.theta.size(), na);
  if (np == 0) return t;
  for (std::size_t p = 0; p < np; ++p) {
    const double best = calls.row(p).minCoeff();
    if (!std::isfinite(best)) continue;
    for (std::size_t a = 0; a < na; ++a)
      for (std::size_t j = 0; j < t.theta.size(); ++j)
        if (calls(p, a) <= t.theta[j] * best) t.fraction(j, a) += 1.0;
  }
  t.fraction /= static_cast<double>(np);
  return t;
}

inline void emit_profile_csv(const ProfileTable& t, std::ostream& out) {
  out << "theta";
  for (const auto& a : t.algorithms) out << ',' << a;
  out << '\n';
  for (std::size_t j = 0; j < t.theta.size(); ++j) {
    out << detail::fmt17(t.theta[j]);
    for (std::size_t a = 0; a < t.algorithms.size(); ++a)
      out << ',' << detail::fmt17(t.fraction(j, a));
    out << '\n';
  }
}

inline void emit_profile_csv(const ProfileTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  emit_profile_csv(t, out);
}

}  // namespace aspgm
