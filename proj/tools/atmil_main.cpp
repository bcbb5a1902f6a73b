// Command-line front end: dataset generation, training, evaluation,
// attention export, gradient checking and the experiment grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "atmil/atmil.hpp"
#include "atmil/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<int> train_bags;
  std::string out_dir;
};

atmil::RunConfig resolve_config(const CommonFlags& flags) {
  atmil::RunConfig rc;
  if (!flags.config_path.empty()) rc = atmil::load_config(flags.config_path);
  if (flags.seed) rc.train.seed = *flags.seed;
  if (flags.strategy) rc.train.strategy.strategy = atmil::parse_strategy(*flags.strategy);
  if (flags.train_bags) rc.train_bags = *flags.train_bags;
  return rc;
}

atmil::DatasetManifest manifest_from(const atmil::RunConfig& rc) {
  atmil::DatasetManifest m;
  m.seed = rc.data_seed;
  m.spec = rc.bag_spec;
  m.splits = {{"train", rc.train_bags}, {"val", rc.val_bags}, {"test", rc.test_bags}};
  return m;
}

std::vector<atmil::Bag> load_split(const std::string& data_dir, const std::string& split) {
  atmil::DatasetManifest m = atmil::read_manifest((fs::path(data_dir) / "manifest.txt").string());
  (void)m.split(split);  // unknown split names fail here
  return atmil::read_bags((fs::path(data_dir) / (split + ".bags")).string());
}

/// Bags either come from a generated dataset directory or, when none is
/// given, straight from the generator at the configured sizes.
std::vector<atmil::Bag> obtain_split(const atmil::RunConfig& rc, const std::string& data_dir,
                                     const std::string& split) {
  if (!data_dir.empty()) return load_split(data_dir, split);
  return atmil::generate_split(manifest_from(rc), split);
}

json metrics_to_json(const atmil::Metrics& m) {
  json per_class = json::array();
  for (size_t c = 0; c < m.per_class.size(); ++c) {
    const atmil::ClassMetrics& pc = m.per_class[c];
    per_class.push_back({{"class", c},
                         {"sensitivity", pc.sensitivity},
                         {"specificity", pc.specificity},
                         {"precision", pc.precision},
                         {"f1", pc.f1},
                         {"flagged", pc.flagged}});
  }
  return {{"accuracy", m.accuracy},
          {"macro_sensitivity", m.macro_sensitivity},
          {"macro_specificity", m.macro_specificity},
          {"macro_f1", m.macro_f1},
          {"per_class", per_class}};
}

void write_confusion_csv(const atmil::ConfusionMatrix& cm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw atmil::FormatError(path + ": cannot open for writing");
  out << "actual\\predicted";
  for (int p = 0; p < cm.classes; ++p) out << ",pred_" << p;
  out << "\n";
  for (int a = 0; a < cm.classes; ++a) {
    out << "actual_" << a;
    for (int p = 0; p < cm.classes; ++p) out << ',' << cm.at(a, p);
    out << "\n";
  }
}

int cmd_gen_data(const CommonFlags& flags) {
  atmil::RunConfig rc = resolve_config(flags);
  atmil::DatasetManifest manifest = manifest_from(rc);
  fs::create_directories(flags.out_dir);
  atmil::write_manifest(manifest, (fs::path(flags.out_dir) / "manifest.txt").string());
  for (const atmil::SplitSpec& split : manifest.splits) {
    std::vector<atmil::Bag> bags = atmil::generate_split(manifest, split.name);
    atmil::write_bags(bags, (fs::path(flags.out_dir) / (split.name + ".bags")).string());
    std::printf("wrote %s: %zu bags of %d instances\n", split.name.c_str(), bags.size(),
                manifest.spec.bag_size);
  }
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& data_dir) {
  atmil::RunConfig rc = resolve_config(flags);
  rc.train.out_dir = flags.out_dir;
  std::vector<atmil::Bag> train_bags = obtain_split(rc, data_dir, "train");
  if (static_cast<int>(train_bags.size()) > rc.train_bags)
    train_bags.resize(static_cast<size_t>(rc.train_bags));
  std::vector<atmil::Bag> val_bags = obtain_split(rc, data_dir, "val");

  std::printf("training: strategy=%s bags=%zu epochs=%d seed=%llu\n",
              atmil::strategy_name(rc.train.strategy.strategy), train_bags.size(),
              rc.train.epochs, static_cast<unsigned long long>(rc.train.seed));
  atmil::TrainResult result = atmil::train(rc.train, train_bags, val_bags);
  std::printf("best validation accuracy %.4f at epoch %d (checkpoint + logs in %s)\n",
              result.best_val_accuracy, result.best_epoch, flags.out_dir.c_str());
  if (result.aborted_steps > 0)
    std::printf("aborted steps due to numeric errors: %ld\n", result.aborted_steps);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& split, const std::string& out_dir) {
  atmil::Checkpoint ckpt = atmil::load_checkpoint(checkpoint_path);
  std::vector<atmil::Bag> bags = load_split(data_dir, split);
  atmil::EvalResult r = atmil::evaluate(ckpt.params, ckpt.encoder, bags);

  fs::create_directories(out_dir);
  std::ofstream mj(fs::path(out_dir) / "metrics.json", std::ios::trunc);
  mj << metrics_to_json(r.metrics).dump(2) << "\n";
  write_confusion_csv(r.confusion, (fs::path(out_dir) / "confusion.csv").string());
  std::printf("accuracy %.4f  macro sens %.4f  macro spec %.4f  macro f1 %.4f\n",
              r.metrics.accuracy, r.metrics.macro_sensitivity, r.metrics.macro_specificity,
              r.metrics.macro_f1);
  return 0;
}

int cmd_attn_export(const std::string& checkpoint_path, const std::string& data_dir,
                    const std::string& split, const std::string& out_path) {
  atmil::Checkpoint ckpt = atmil::load_checkpoint(checkpoint_path);
  std::vector<atmil::Bag> bags = load_split(data_dir, split);
  if (fs::path(out_path).has_parent_path())
    fs::create_directories(fs::path(out_path).parent_path());
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw atmil::FormatError(out_path + ": cannot open for writing");
  atmil::export_attention(ckpt.params, ckpt.encoder, bags, out);
  std::printf("wrote attention weights for %zu bags to %s\n", bags.size(), out_path.c_str());
  return 0;
}

int cmd_gradcheck(double tolerance, int instances, int samples) {
  atmil::GradCheckSuiteResult suite = atmil::run_gradcheck_suite(tolerance, instances, samples);
  for (const atmil::OpCheckResult& op : suite.ops)
    std::printf("%-22s %-4s worst rel err %.3g over %d instances\n", op.op.c_str(),
                op.pass ? "ok" : "FAIL", op.worst_rel_err, op.instances);
  std::printf("%-22s %-4s worst rel err %.3g (%zu parameters)\n", "bag network",
              suite.network.pass ? "ok" : "FAIL", suite.network.worst_rel_err,
              suite.network.entries.size());
  std::printf("gradcheck %s in %.1fs (tolerance %g)\n", suite.pass ? "passed" : "FAILED",
              suite.seconds, tolerance);
  return suite.pass ? 0 : 1;
}

int cmd_ladder(const CommonFlags& flags, int jobs_flag) {
  atmil::RunConfig rc = resolve_config(flags);
  atmil::LadderConfig lc;
  lc.strategies = rc.ladder_strategies;
  lc.train_sizes = rc.ladder_sizes;
  lc.seeds = rc.ladder_seeds;
  lc.base = rc.train;
  lc.bag_spec = rc.bag_spec;
  lc.data_seed = rc.data_seed;
  lc.val_bags = rc.val_bags;
  lc.test_bags = rc.test_bags;
  lc.jobs = jobs_flag > 0 ? jobs_flag : rc.jobs;
  lc.out_dir = flags.out_dir;

  atmil::LadderResult result = atmil::run_experiment_ladder(lc);
  std::ostringstream csv;
  atmil::write_ladder_report(result, lc, csv, std::cout);
  std::printf("ladder finished: %.1fs wall, %.1fs single-thread work (reports in %s)\n",
              result.wall_seconds, result.cpu_core_seconds, flags.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-MIL with adaptive auxiliary-task weighting"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string data_dir, checkpoint_path, split = "test", attn_out;
  double tolerance = 1e-4;
  int gc_instances = 20, gc_samples = 20, jobs = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "config file (key = value lines)");
    cmd->add_option("--seed", flags.seed, "training seed");
    cmd->add_option("--strategy", flags.strategy,
                    "none|uniform|wl|gradnorm|adaloss|cossim|olaux|atmil");
    cmd->add_option("--train-bags", flags.train_bags, "training bag count");
    cmd->add_option("--out-dir", flags.out_dir, "output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset (manifest + bag archives)");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model, write checkpoint and CSV logs");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory from gen-data (default: generate)");

  CLI::App* eval =
      app.add_subcommand("eval", "evaluate a checkpoint: metrics JSON + confusion CSV");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "split name (default test)");
  eval->add_option("--out-dir", flags.out_dir, "output directory")->required();

  CLI::App* attn = app.add_subcommand("attn-export", "write per-instance attention weights CSV");
  attn->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  attn->add_option("--data", data_dir, "dataset directory")->required();
  attn->add_option("--split", split, "split name (default test)");
  attn->add_option("--out", attn_out, "output CSV path")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--tolerance", tolerance, "relative error bound (default 1e-4)");
  gradcheck->add_option("--instances", gc_instances, "random instances per op (default 20)");
  gradcheck->add_option("--samples", gc_samples, "sampled elements per network parameter");

  CLI::App* ladder = app.add_subcommand("ladder", "strategy x train-size grid, seeds aggregated");
  add_common(ladder);
  ladder->add_option("--jobs", jobs, "parallel training runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(flags);
    if (train->parsed()) return cmd_train(flags, data_dir);
    if (eval->parsed()) return cmd_eval(checkpoint_path, data_dir, split, flags.out_dir);
    if (attn->parsed()) return cmd_attn_export(checkpoint_path, data_dir, split, attn_out);
    if (gradcheck->parsed()) return cmd_gradcheck(tolerance, gc_instances, gc_samples);
    if (ladder->parsed()) return cmd_ladder(flags, jobs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
