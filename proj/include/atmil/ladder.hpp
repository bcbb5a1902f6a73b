#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "atmil/dataset.hpp"
#include "atmil/metrics.hpp"
#include "atmil/train.hpp"

namespace atmil {

// Strategy x training-set-size grid with repeated seeds. Cells share one
// generated dataset (a larger train split nests the smaller ones) and
// nothing else, so they can run on worker threads; results do not depend on
// scheduling.

struct LadderConfig {
  std::vector<Strategy> strategies = {Strategy::none, Strategy::atmil};
  std::vector<int> train_sizes = {100, 150, 200, 300, 500};
  std::vector<uint64_t> seeds = {0, 1, 2};
  TrainConfig base;          // strategy field is overwritten per cell
  BagSpec bag_spec;
  uint64_t data_seed = 1;
  int val_bags = 20;
  int test_bags = 200;
  int jobs = 1;
  std::string out_dir;       // empty: no files
};

struct LadderRun {
  uint64_t seed = 0;
  double accuracy = 0.0;
  bool ok = false;
  std::string error;
  double seconds = 0.0;
};

struct LadderCell {
  Strategy strategy = Strategy::none;
  int train_size = 0;
  std::vector<LadderRun> runs;
  Aggregate accuracy;        // over successful runs
};

struct LadderResult {
  std::vector<LadderCell> cells;
  double wall_seconds = 0.0;
  double cpu_core_seconds = 0.0;  // sum of single-threaded run times
};

/// Published full-scale accuracies, kept in the report for context.
constexpr double kReferenceMilAtt100 = 0.805;
constexpr double kReferenceMilAtt500 = 0.981;
constexpr double kReferenceAtmil100 = 0.975;
constexpr double kReferenceAtmil500 = 0.989;

inline void write_ladder_report(const LadderResult& result, const LadderConfig& cfg,
                                std::ostream& csv, std::ostream& table) {
  csv << "strategy,train_bags,seed,accuracy,ok,error\n";
  for (const LadderCell& cell : result.cells)
    for (const LadderRun& run : cell.runs)
      csv << strategy_name(cell.strategy) << ',' << cell.train_size << ',' << run.seed << ','
          << detail::fmt_g17(run.accuracy) << ',' << (run.ok ? 1 : 0) << ',' << run.error << '\n';

  table << "bag-level accuracy, mean +/- sem over " << cfg.seeds.size() << " seeds\n";
  table << "strategy";
  for (int size : cfg.train_sizes) table << '\t' << size;
  table << '\n';
  for (Strategy s : cfg.strategies) {
    table << strategy_name(s);
    for (int size : cfg.train_sizes) {
      bool found = false;
      for (const LadderCell& cell : result.cells) {
        if (cell.strategy != s || cell.train_size != size) continue;
        found = true;
        if (cell.accuracy.n == 0) {
          table << "\tfailed";
        } else {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "\t%.3f +/- %.3f", cell.accuracy.mean,
                        cell.accuracy.sem);
          table << buf;
        }
      }
      if (!found) table << "\t-";
    }
    table << '\n';
  }
  table << "reference, full-scale original experiment: mil+att 100 bags " << kReferenceMilAtt100
        << ", 500 bags " << kReferenceMilAtt500 << "; atmil 100 bags " << kReferenceAtmil100
        << ", 500 bags " << kReferenceAtmil500 << "\n";
}

inline LadderResult run_experiment_ladder(const LadderConfig& cfg) {
  if (cfg.strategies.empty() || cfg.train_sizes.empty() || cfg.seeds.empty())
    throw ConfigError("ladder: empty strategy/size/seed axis");
  cfg.base.validate();

  int max_train = 0;
  for (int s : cfg.train_sizes) max_train = std::max(max_train, s);
  DatasetManifest manifest;
  manifest.seed = cfg.data_seed;
  manifest.spec = cfg.bag_spec;
  manifest.splits = {{"train", max_train}, {"val", cfg.val_bags}, {"test", cfg.test_bags}};
  std::vector<Bag> train_bags = generate_split(manifest, "train");
  std::vector<Bag> val_bags = generate_split(manifest, "val");
  std::vector<Bag> test_bags = generate_split(manifest, "test");

  LadderResult result;
  for (Strategy s : cfg.strategies)
    for (int size : cfg.train_sizes) {
      LadderCell cell;
      cell.strategy = s;
      cell.train_size = size;
      cell.runs.resize(cfg.seeds.size());
      for (size_t i = 0; i < cfg.seeds.size(); ++i) cell.runs[i].seed = cfg.seeds[i];
      result.cells.push_back(std::move(cell));
    }

  struct Task {
    size_t cell = 0;
    size_t run = 0;
  };
  std::vector<Task> tasks;
  for (size_t c = 0; c < result.cells.size(); ++c)
    for (size_t r = 0; r < result.cells[c].runs.size(); ++r) tasks.push_back({c, r});

  auto wall_start = std::chrono::steady_clock::now();
  std::atomic<size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    while (true) {
      size_t t = next.fetch_add(1);
      if (t >= tasks.size()) break;
      LadderCell& cell = result.cells[tasks[t].cell];
      LadderRun& run = cell.runs[tasks[t].run];
      auto t0 = std::chrono::steady_clock::now();
      try {
        TrainConfig tc = cfg.base;
        tc.strategy.strategy = cell.strategy;
        tc.seed = run.seed;
        tc.out_dir.clear();  // grid runs keep logs in memory
        std::vector<Bag> subset(train_bags.begin(), train_bags.begin() + cell.train_size);
        TrainResult tr = train(tc, subset, val_bags);
        run.accuracy = evaluate(tr.params, tc.encoder, test_bags).metrics.accuracy;
        run.ok = true;
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
      }
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::lock_guard<std::mutex> lock(mu);
      result.cpu_core_seconds += run.seconds;
    }
  };

  int jobs = std::max(1, cfg.jobs);
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (std::thread& th : pool) th.join();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  for (LadderCell& cell : result.cells) {
    std::vector<double> ok_accs;
    for (const LadderRun& run : cell.runs)
      if (run.ok) ok_accs.push_back(run.accuracy);
    if (!ok_accs.empty()) cell.accuracy = aggregate(ok_accs);
  }

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "ladder.csv", std::ios::trunc);
    std::ofstream table(fs::path(cfg.out_dir) / "ladder_table.txt", std::ios::trunc);
    if (!csv || !table) throw FormatError(cfg.out_dir + ": cannot open ladder outputs");
    write_ladder_report(result, cfg, csv, table);
  }
  return result;
}

}  // namespace atmil
