// confopt command-line driver: search / retrain / evaluate / report /
// benchsuite over an experiment directory tree and results ledger.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "confopt/analytics.hpp"
#include "confopt/benchsuite.hpp"
#include "confopt/experiment.hpp"
#include "confopt/profile.hpp"
#include "confopt/trainer.hpp"

namespace {

using namespace confopt;

constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kAbortedTrial = 2;

// Dataset specs: "synth:<n>,<classes>,<size>,<seed>" or a CIFAR-10 binary
// directory. `part` picks train or test for CIFAR; synth uses one corpus.
Dataset load_data(const std::string& spec, bool test_part) {
  if (spec.rfind("synth:", 0) == 0) {
    int vals[4];
    if (std::sscanf(spec.c_str() + 6, "%d,%d,%d,%d", &vals[0], &vals[1], &vals[2], &vals[3]) !=
        4) {
      throw std::invalid_argument("synth spec must be synth:<n>,<classes>,<size>,<seed>");
    }
    return synth_dataset(vals[0], vals[1], vals[2],
                         static_cast<uint64_t>(vals[3]) + (test_part ? 1 : 0));
  }
  Cifar10 c = load_cifar10(spec);
  return test_part ? std::move(c.test) : std::move(c.train);
}

BatchOptions search_batch_opts(const Dataset& data, const Split& split, bool is_synth) {
  BatchOptions opts;
  if (!is_synth) {
    opts.augment = true;
    opts.normalize = true;
    opts.stats = channel_stats(data, split.search_train);
  }
  return opts;
}

int run_search(const std::string& profile_path, const std::string& bench_id, int seed,
               const std::string& data_spec, const std::string& out_dir) {
  Profile prof = Profile::parse_file(profile_path);
  Benchmark bench = parse_benchmark(bench_id);
  Dataset data = load_data(data_spec, false);
  Split split = split_dataset(data.n, static_cast<uint64_t>(seed));
  bool synth = data_spec.rfind("synth:", 0) == 0;

  ExperimentDir root(out_dir);
  TrialPaths paths = root.trial(bench.id, prof.method, seed);
  TrialResult res = train_supernet(prof, bench.variant, make_operation_set(bench.opset), data,
                                   split, seed, paths, search_batch_opts(data, split, synth));
  if (res.aborted) {
    std::cerr << "trial aborted: " << res.abort_reason << "\n";
    return kAbortedTrial;
  }
  std::cout << "benchmark=" << bench.id << " method=" << prof.method << " seed=" << seed
            << " epochs=" << res.completed_epochs << " final_val_loss=" << res.final_val_loss
            << " genotype=" << paths.genotype << "\n";
  return kOk;
}

int run_retrain(const std::string& genotype_path, const std::string& bench_id,
                const std::string& hp_id, const std::string& data_spec,
                const std::string& out_dir, const std::string& method, int epochs,
                int batch_size) {
  Benchmark bench = parse_benchmark(bench_id);
  const HPConfig* hp = nullptr;
  for (const auto& h : hp_grid()) {
    if (h.id == hp_id) hp = &h;
  }
  if (!hp) throw std::invalid_argument("unknown hp id '" + hp_id + "' (expected HP1..HP9)");

  Genotype geno = Genotype::parse(read_file(genotype_path));
  Dataset train = load_data(data_spec, false);
  Dataset test = load_data(data_spec, true);
  Split split = split_dataset(train.n, 0);

  RetrainOverrides ov;
  if (epochs > 0) ov.epochs = epochs;
  if (batch_size > 0) ov.batch_size = batch_size;
  bool synth = data_spec.rfind("synth:", 0) == 0;
  if (synth) {
    ov.augment = false;
    ov.normalize = false;
  }
  EvalResult r = retrain(geno, bench, *hp, train, split, test, ov);
  r.method = method;

  LedgerRow row{r.benchmark, r.method, r.hp_id, r.retrain_seed,
                r.test_accuracy, r.epochs, r.wall_seconds, genotype_path};
  append_ledger(out_dir + "/results.tsv", row);
  std::cout << "benchmark=" << r.benchmark << " method=" << r.method << " hp=" << r.hp_id
            << " test_accuracy=" << r.test_accuracy << "\n";
  return kOk;
}

std::vector<EvalResult> ledger_results(const std::string& results_dir) {
  std::vector<EvalResult> out;
  for (const auto& row : read_ledger(results_dir + "/results.tsv")) {
    if (row.hp_id == "-") continue;  // search-only rows
    EvalResult r;
    r.benchmark = row.benchmark;
    r.method = row.method;
    r.hp_id = row.hp_id;
    r.retrain_seed = row.seed;
    r.test_accuracy = row.test_accuracy;
    r.epochs = row.epochs;
    r.wall_seconds = row.wall_seconds;
    out.push_back(std::move(r));
  }
  return out;
}

int run_evaluate(const std::string& results_dir) {
  Summary s = summarize(ledger_results(results_dir));
  std::printf("%-22s %-12s %8s %8s %8s %5s %s\n", "benchmark", "method", "mean", "std", "max",
              "n", "best_hp");
  for (const auto& r : s.rows) {
    std::printf("%-22s %-12s %8.3f %8.3f %8.3f %5d %s%s\n", r.benchmark.c_str(),
                r.method.c_str(), r.mean, r.stddev, r.max, r.count, r.best_hp.c_str(),
                r.missing_hps.empty() ? "" : " (partial)");
  }
  for (const auto& [hp, n] : s.best_hp_tally) {
    std::printf("best_hp_tally %s %d\n", hp.c_str(), n);
  }
  return kOk;
}

int run_report(const std::string& results_dir, const std::string& mode) {
  std::string hp_filter;
  if (mode.rfind("hp:", 0) == 0) {
    hp_filter = mode.substr(3);
  } else if (mode != "best" && mode != "mean") {
    throw std::invalid_argument("report mode must be best, mean or hp:<id>");
  }

  auto results = ledger_results(results_dir);
  std::map<std::string, std::map<std::string, std::vector<double>>> cells;  // method->bench->accs
  std::set<std::string> benches;
  for (const auto& r : results) {
    if (!hp_filter.empty() && r.hp_id != hp_filter) continue;
    cells[r.method][r.benchmark].push_back(r.test_accuracy);
    benches.insert(r.benchmark);
  }
  if (cells.empty()) throw std::invalid_argument("no matching results in the ledger");

  RankTable t;
  t.mode = hp_filter.empty() ? mode : "fixed_" + hp_filter;
  t.benchmarks.assign(benches.begin(), benches.end());
  for (const auto& [method, by_bench] : cells) {
    t.methods.push_back(method);
    std::vector<double> row;
    for (const auto& b : t.benchmarks) {
      auto it = by_bench.find(b);
      if (it == by_bench.end()) {
        row.push_back(std::nan(""));
        continue;
      }
      double v;
      if (mode == "mean") {
        v = 0;
        for (double a : it->second) v += a;
        v /= static_cast<double>(it->second.size());
      } else {
        v = *std::max_element(it->second.begin(), it->second.end());
      }
      row.push_back(v);
    }
    t.scores.push_back(std::move(row));
  }
  std::string report_dir = results_dir + "/report";
  write_report(report_dir, t);
  std::cout << "report written to " << report_dir << "\n";
  return kOk;
}

int run_benchsuite(const std::string& method, const std::string& data_spec,
                   const std::string& out_dir, bool dry_run, int epochs, int steps,
                   int retrain_epochs, int retrain_batch, int channel_override) {
  Profile prof = make_preset(method);
  if (epochs > 0) prof.epochs = epochs;
  if (steps > 0) prof.steps_per_epoch = steps;
  if (channel_override > 0) prof.channel_override = channel_override;

  if (dry_run) {
    for (const auto& bench : enumerate_benchmarks()) {
      for (int seed : prof.seeds) {
        std::cout << "search benchmark=" << bench.id << " method=" << prof.method
                  << " seed=" << seed << "\n";
      }
    }
    return kOk;
  }

  Dataset train = load_data(data_spec, false);
  Dataset test = load_data(data_spec, true);
  bool synth = data_spec.rfind("synth:", 0) == 0;
  ExperimentDir root(out_dir);

  int workers = std::max(1, env_threads());
  for (const auto& bench : enumerate_benchmarks()) {
    // seed trials are independent workers with disjoint output directories
    std::vector<TrialResult> trials(prof.seeds.size());
    for (size_t base = 0; base < prof.seeds.size(); base += static_cast<size_t>(workers)) {
      std::vector<std::thread> pool;
      for (size_t k = base; k < std::min(prof.seeds.size(), base + static_cast<size_t>(workers)); ++k) {
        pool.emplace_back([&, k] {
          int seed = prof.seeds[k];
          Split split = split_dataset(train.n, static_cast<uint64_t>(seed));
          TrialPaths paths = root.trial(bench.id, prof.method, seed);
          trials[k] = train_supernet(prof, bench.variant, make_operation_set(bench.opset),
                                     train, split, seed, paths,
                                     search_batch_opts(train, split, synth));
          trials[k].genotype_path = paths.genotype;
        });
      }
      for (auto& t : pool) t.join();
    }
    for (const auto& res : trials) {
      if (res.aborted) {
        std::cerr << "trial aborted (" << bench.id << " seed " << res.seed
                  << "): " << res.abort_reason << "\n";
        return kAbortedTrial;
      }
    }
    const TrialResult& best = select_architecture(trials, prof.val_criterion);
    Split split = split_dataset(train.n, static_cast<uint64_t>(best.seed));
    for (const auto& hp : hp_grid()) {
      RetrainOverrides ov;
      if (retrain_epochs > 0) ov.epochs = retrain_epochs;
      if (retrain_batch > 0) ov.batch_size = retrain_batch;
      if (channel_override > 0) ov.channel_override = channel_override;
      if (synth) {
        ov.augment = false;
        ov.normalize = false;
      }
      EvalResult r = retrain(best.genotype, bench, hp, train, split, test, ov);
      r.method = prof.method;
      append_ledger(out_dir + "/results.tsv",
                    LedgerRow{r.benchmark, r.method, r.hp_id, r.retrain_seed, r.test_accuracy,
                              r.epochs, r.wall_seconds, best.genotype_path});
      std::cout << "benchmark=" << bench.id << " hp=" << hp.id
                << " test_accuracy=" << r.test_accuracy << "\n";
    }
  }
  return kOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"confopt: one-shot architecture search and the nine-benchmark protocol"};
  app.require_subcommand(1);

  std::string profile_path, bench_id, data_spec = env_data_dir(), out_dir = "runs";
  std::string genotype_path, hp_id, results_dir, mode = "best", method;
  int seed = 0, epochs = 0, steps = 0, retrain_epochs = 0, retrain_batch = 0, channels = 0;
  bool dry_run = false;

  auto* search = app.add_subcommand("search", "run one supernet search trial");
  search->add_option("--profile", profile_path, "profile file")->required();
  search->add_option("--benchmark", bench_id, "benchmark id, e.g. deep_regular")->required();
  search->add_option("--seed", seed, "trial seed");
  search->add_option("--data", data_spec, "CIFAR-10 dir or synth:<n>,<classes>,<size>,<seed>");
  search->add_option("--out", out_dir, "experiment root")->required();

  auto* ret = app.add_subcommand("retrain", "retrain a genotype on one HP configuration");
  ret->add_option("--genotype", genotype_path, "genotype file")->required();
  ret->add_option("--benchmark", bench_id, "benchmark id")->required();
  ret->add_option("--hp", hp_id, "HP1..HP9")->required();
  ret->add_option("--data", data_spec, "dataset spec");
  ret->add_option("--out", out_dir, "results directory")->required();
  ret->add_option("--method", method, "method label for the ledger");
  ret->add_option("--epochs", retrain_epochs, "override retrain epochs");
  ret->add_option("--batch-size", retrain_batch, "override retrain batch size");

  auto* eval = app.add_subcommand("evaluate", "summarize the results ledger");
  eval->add_option("--results", results_dir, "directory holding results.tsv")->required();

  auto* rep = app.add_subcommand("report", "write the ranking report bundle");
  rep->add_option("--results", results_dir, "directory holding results.tsv")->required();
  rep->add_option("--mode", mode, "best | mean | hp:<id>");

  auto* suite = app.add_subcommand("benchsuite", "full protocol: 3 seeds -> select -> 9 HPs");
  suite->add_option("--method", method, "darts|drnas|fairdarts|gdas|oles|pcdarts|smoothdarts")
      ->required();
  suite->add_option("--data", data_spec, "dataset spec");
  suite->add_option("--out", out_dir, "experiment root");
  suite->add_flag("--dry-run", dry_run, "print the 27 search trials and exit");
  suite->add_option("--epochs", epochs, "override search epochs");
  suite->add_option("--steps-per-epoch", steps, "override steps per epoch");
  suite->add_option("--retrain-epochs", retrain_epochs, "override retrain epochs");
  suite->add_option("--retrain-batch-size", retrain_batch, "override retrain batch size");
  suite->add_option("--channels", channels, "channel override for desk-scale runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n\n" << app.help();
    return kValidationError;
  }

  try {
    if (search->parsed()) return run_search(profile_path, bench_id, seed, data_spec, out_dir);
    if (ret->parsed()) {
      return run_retrain(genotype_path, bench_id, hp_id, data_spec, out_dir,
                         method.empty() ? "manual" : method, retrain_epochs, retrain_batch);
    }
    if (eval->parsed()) return run_evaluate(results_dir);
    if (rep->parsed()) return run_report(results_dir, mode);
    return run_benchsuite(method, data_spec, out_dir, dry_run, epochs, steps, retrain_epochs,
                          retrain_batch, channels);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAbortedTrial;
  }
}

#ifndef CONFOPT_CLI_NO_MAIN
int main(int argc, char** argv) { return run_cli(argc, argv); }
#endif
