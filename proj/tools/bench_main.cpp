// Benchmark CLI.
//
//   bench run     --suite cfg --out results.csv [--format csv|json]
//                 [--jobs N] [--seed S] [--timing] [--fstar-cache DIR]
//   bench profile --in results.csv --acc 1e-7 --out profile.csv
//   bench single  --family ls --d 400 --kappa 1e4 --spectrum bimodal
//                 --alg aspgm-5-5 --acc 1e-10 [--seed S] [--budget N]

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "aspgm/bench.hpp"

using namespace aspgm;

int main(int argc, char** argv) {
  CLI::App app{"ASPGM benchmark harness"};
  app.require_subcommand(1);

  // --- run ---------------------------------------------------------------
  auto* run = app.add_subcommand("run", "run a benchmark suite");
  std::string suite_path, out_path, format = "csv", cache_dir;
  int jobs = 1;
  std::int64_t seed_override = -1;
  bool timing = false;
  run->add_option("--suite", suite_path,
                  "suite config file (omit for the default suite)");
  run->add_option("--out", out_path, "output path")->required();
  run->add_option("--format", format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  run->add_option("--jobs", jobs, "parallel cells");
  run->add_option("--seed", seed_override, "replace the config's seed list");
  run->add_flag("--timing", timing,
                "measure wall time (off by default so reruns are "
                "byte-identical)");
  run->add_option("--fstar-cache", cache_dir,
                  "directory caching reference optima");

  // --- profile -----------------------------------------------------------
  auto* profile = app.add_subcommand("profile", "performance profile");
  std::string in_path, prof_out;
  double acc = 1e-7;
  profile->add_option("--in", in_path, "results csv")->required();
  profile->add_option("--acc", acc, "target accuracy")->required();
  profile->add_option("--out", prof_out, "output csv")->required();

  // --- single ------------------------------------------------------------
  auto* single = app.add_subcommand("single", "run one cell");
  std::string family = "ls", spectrum = "uniform", alg = "aspgm-5-5";
  std::string single_out;
  int d = 400;
  double kappa = 1e4, single_acc = 1e-10;
  std::uint64_t single_seed = 1;
  long budget = 15000;
  single->add_option("--family", family,
                     "ls|logistic|logsumexp|possquared|fournorm|cubicreg|"
                     "hard-a|hard-b|hard-c");
  single->add_option("--d", d, "dimension");
  single->add_option("--kappa", kappa, "target condition number of A'A");
  single->add_option("--spectrum", spectrum, "uniform or bimodal")
      ->check(CLI::IsMember({"uniform", "bimodal"}));
  single->add_option("--alg", alg, "algorithm id");
  single->add_option("--acc", single_acc, "target accuracy");
  single->add_option("--seed", single_seed, "instance seed");
  single->add_option("--budget", budget, "oracle-call budget");
  single->add_option("--out", single_out, "output csv (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      SuiteConfig cfg =
          suite_path.empty() ? default_suite() : load_suite_config(suite_path);
      cfg.jobs = jobs;
      cfg.timing = timing;
      cfg.fstar_cache_dir = cache_dir;
      if (seed_override >= 0)
        cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
      const std::vector<BenchRecord> records = run_suite(cfg);
      if (format == "csv")
        emit_csv(records, out_path);
      else
        emit_json(records, out_path);
      std::cout << records.size() << " records written to " << out_path
                << "\n";
    } else if (*profile) {
      const ProfileTable t = performance_profile(read_csv(in_path), acc);
      emit_profile_csv(t, prof_out);
      std::cout << "profile over " << t.algorithms.size()
                << " algorithms written to " << prof_out << "\n";
    } else if (*single) {
      SuiteConfig cfg;
      cfg.dims = {d};
      cfg.kappas = {kappa};
      cfg.spectra = {spectrum == "uniform" ? SpectrumSpec::Kind::Uniform
                                           : SpectrumSpec::Kind::Bimodal};
      cfg.seeds = {single_seed};
      cfg.algorithms = {alg};
      cfg.thresholds = {single_acc};
      cfg.budget = budget;
      std::vector<BenchRecord> records;
      if (family.rfind("hard-", 0) == 0) {
        // hard instances bypass the synthetic grid
        const ProblemInstance inst = hard_instance(family.back(), d);
        const ReferenceOptimum ref = reference_optimum(inst);
        const AlgSpec spec = parse_algorithm_id(alg);
        const auto out = detail::run_algorithm(inst, spec, budget, single_seed);
        const double gap0 = out.f0 - ref.fstar;
        BenchRecord rec;
        rec.problem_id = inst.id;
        rec.algorithm_id = alg;
        rec.seed = single_seed;
        rec.d = d;
        rec.target_acc = single_acc;
        double best_gap = std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        for (const TraceRecord& r : out.records) {
          best = std::min(best, r.f);
          best_gap = gap0 > 0 ? (best - ref.fstar) / gap0 : 0.0;
          if (best_gap <= single_acc) {
            rec.oracle_calls = static_cast<double>(r.oracle_calls);
            break;
          }
        }
        rec.final_gap = best_gap;
        rec.status = std::isfinite(rec.oracle_calls) ? "reached" : "budget";
        records.push_back(rec);
      } else {
        cfg.families = {detail::parse_family(family, 0)};
        records = run_suite(cfg);
      }
      if (single_out.empty())
        emit_csv(records, std::cout);
      else
        emit_csv(records, single_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
