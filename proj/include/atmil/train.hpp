#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "atmil/adam.hpp"
#include "atmil/bag.hpp"
#include "atmil/checkpoint.hpp"
#include "atmil/errors.hpp"
#include "atmil/metrics.hpp"
#include "atmil/model.hpp"
#include "atmil/weighting.hpp"

namespace atmil {

// The training harness: one bag per optimizer step, two backward passes per
// bag (main then aux) to obtain separable task gradients on the shared
// partition, strategy combination, unweighted head gradients, Adam update.
// Everything is a deterministic function of (seed, config, dataset).

struct TrainConfig {
  double lr = 0.0005;
  int lr_decay_after = 100;    // divide the rate strictly after this epoch
  double lr_decay_factor = 10.0;
  int epochs = 200;
  StrategyConfig strategy;
  uint64_t seed = 0;
  EncoderConfig encoder;
  AdamConfig adam;
  int checkpoint_every = 0;    // also write checkpoint_epoch<k>.txt every k epochs
  std::string out_dir;         // empty: no files written

  void validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (lr_decay_after < 0) throw ConfigError("lr_decay_after must be non-negative");
    if (lr_decay_factor <= 0.0) throw ConfigError("lr_decay_factor must be positive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    strategy.validate();
    encoder.validate();
  }
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss_main = 0.0;
  double mean_loss_aux = 0.0;
  double w_last = 0.0;
  double val_accuracy = 0.0;   // NaN when no validation split is given
  long aborted_steps = 0;
};

struct StepLog {
  long step = 0;
  double w_used = 0.0;
  double dot = 0.0;
  double norm_main = 0.0;
  double norm_aux = 0.0;
  double cosine = 0.0;
  double loss_main = 0.0;
  double loss_aux = 0.0;
};

struct TrainResult {
  ParamSet params;             // best-validation weights; final weights if no validation
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochLog> epoch_logs;
  std::vector<double> step_losses_main;  // full per-step trace
  long aborted_steps = 0;
};

/// Bag visit order for one epoch, shared with tests that re-drive training.
inline std::vector<int> epoch_bag_order(uint64_t seed, int epoch, int n_bags) {
  std::vector<int> order(static_cast<size_t>(n_bags));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, 0x0e90c11ULL), static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

struct EvalResult {
  Metrics metrics;
  ConfusionMatrix confusion{0};
};

inline EvalResult evaluate(const ParamSet& params, const EncoderConfig& encoder,
                           const std::vector<Bag>& bags) {
  if (bags.empty()) throw UsageError("evaluate: empty bag set");
  EvalResult r;
  r.confusion = ConfusionMatrix(encoder.main_classes);
  for (const Bag& bag : bags) {
    if (bag.bag_label < 0 || bag.bag_label >= encoder.main_classes)
      throw DataError("bag " + std::to_string(bag.id) + " label " +
                      std::to_string(bag.bag_label) + " outside the checkpoint's " +
                      std::to_string(encoder.main_classes) + " classes");
    BagOutput out = bag_output(bag, params, encoder);
    r.confusion.record(bag.bag_label, predict_label(out.main_logits));
  }
  r.metrics = compute_metrics(r.confusion);
  return r;
}

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr const char* kStepCsvHeader =
    "step,strategy,w_used,dot,norm_main,norm_aux,cosine,loss_main,loss_aux";
constexpr const char* kEpochCsvHeader =
    "epoch,lr,mean_loss_main,mean_loss_aux,w_last,val_accuracy,aborted_steps";

inline void write_step_row(std::ostream& out, const StepLog& s, Strategy strategy) {
  out << s.step << ',' << strategy_name(strategy) << ',' << fmt_g17(s.w_used) << ','
      << fmt_g17(s.dot) << ',' << fmt_g17(s.norm_main) << ',' << fmt_g17(s.norm_aux) << ','
      << fmt_g17(s.cosine) << ',' << fmt_g17(s.loss_main) << ',' << fmt_g17(s.loss_aux) << '\n';
}

inline void write_epoch_row(std::ostream& out, const EpochLog& e) {
  out << e.epoch << ',' << fmt_g17(e.lr) << ',' << fmt_g17(e.mean_loss_main) << ','
      << fmt_g17(e.mean_loss_aux) << ',' << fmt_g17(e.w_last) << ',' << fmt_g17(e.val_accuracy)
      << ',' << e.aborted_steps << '\n';
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const std::vector<Bag>& train_bags,
                         const std::vector<Bag>& val_bags) {
  cfg.validate();
  if (train_bags.empty()) throw UsageError("train: no training bags");
  for (const Bag& bag : train_bags) {
    bag.validate();
    if (bag.bag_label < 0 || bag.bag_label >= cfg.encoder.main_classes)
      throw DataError("bag " + std::to_string(bag.id) + " label outside configured classes");
    for (int lab : bag.aux_labels)
      if (lab < 0 || lab >= cfg.encoder.aux_classes)
        throw DataError("bag " + std::to_string(bag.id) + " aux label outside configured classes");
  }

  namespace fs = std::filesystem;
  std::ofstream step_csv, epoch_csv;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    step_csv.open(fs::path(cfg.out_dir) / "step_diagnostics.csv", std::ios::trunc);
    epoch_csv.open(fs::path(cfg.out_dir) / "train_log.csv", std::ios::trunc);
    if (!step_csv || !epoch_csv) throw FormatError(cfg.out_dir + ": cannot open log files");
    step_csv << detail::kStepCsvHeader << '\n';
    epoch_csv << detail::kEpochCsvHeader << '\n';
  }

  ParamSet params = init_params(cfg.encoder, cfg.seed);
  AdamState adam = AdamState::init(params, cfg.adam);
  TaskWeightState wstate = TaskWeightState::init(cfg.strategy);
  auto shared_layout = make_layout(params, Partition::shared);
  auto main_layout = make_layout(params, Partition::main_head);
  auto aux_layout = make_layout(params, Partition::aux_head);

  TrainResult result;
  result.params = params;
  result.best_val_accuracy = -1.0;
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay_after, cfg.lr_decay_factor);
    double sum_main = 0.0, sum_aux = 0.0;
    long epoch_aborted = 0;
    long counted = 0;
    double w_last = wstate.w;

    for (int idx : epoch_bag_order(cfg.seed, epoch, static_cast<int>(train_bags.size()))) {
      const Bag& bag = train_bags[static_cast<size_t>(idx)];
      ++step;
      try {
        BagGraph run = bag_forward(bag, params, cfg.encoder);
        double loss_main = run.graph.value(run.main_loss).scalar_value();
        double loss_aux = run.graph.value(run.aux_loss).scalar_value();

        run.graph.backward(run.main_loss);
        GradVector g_main =
            flatten_grads(run.graph, run.bound, params, Partition::shared, shared_layout);
        GradVector g_main_head =
            flatten_grads(run.graph, run.bound, params, Partition::main_head, main_layout);
        run.graph.reset_grads();
        run.graph.backward(run.aux_loss);
        GradVector g_aux =
            flatten_grads(run.graph, run.bound, params, Partition::shared, shared_layout);
        GradVector g_aux_head =
            flatten_grads(run.graph, run.bound, params, Partition::aux_head, aux_layout);

        CombineInput cin;
        cin.g_main = &g_main;
        cin.g_aux = &g_aux;
        cin.loss_main = loss_main;
        cin.loss_aux = loss_aux;
        cin.epoch = epoch - 1;  // wl counts completed epochs
        CombineOutput comb = combine(cin, wstate, cfg.strategy);

        std::vector<Tensor> grads(static_cast<size_t>(params.count()));
        unflatten_grads(comb.g_combined, params, grads);
        unflatten_grads(g_main_head, params, grads);
        unflatten_grads(g_aux_head, params, grads);
        adam_step(params, grads, adam, lr);

        sum_main += loss_main;
        sum_aux += loss_aux;
        ++counted;
        w_last = comb.w_used;
        result.step_losses_main.push_back(loss_main);

        if (step_csv.is_open()) {
          StepLog s{step,        comb.w_used,      comb.diag.dot,  comb.diag.norm_main,
                    comb.diag.norm_aux, comb.diag.cosine, loss_main,      loss_aux};
          detail::write_step_row(step_csv, s, cfg.strategy.strategy);
        }
      } catch (const NumericError&) {
        // skip the bag, count it, keep training
        ++epoch_aborted;
        ++result.aborted_steps;
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.mean_loss_main = counted > 0 ? sum_main / counted : std::nan("");
    log.mean_loss_aux = counted > 0 ? sum_aux / counted : std::nan("");
    log.w_last = w_last;
    log.aborted_steps = epoch_aborted;
    log.val_accuracy = std::nan("");
    if (!val_bags.empty()) {
      log.val_accuracy = evaluate(params, cfg.encoder, val_bags).metrics.accuracy;
      if (log.val_accuracy >= result.best_val_accuracy) {  // ties prefer the later epoch
        result.best_val_accuracy = log.val_accuracy;
        result.best_epoch = epoch;
        result.params = params;
      }
    }
    result.epoch_logs.push_back(log);
    if (epoch_csv.is_open()) detail::write_epoch_row(epoch_csv, log);

    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save_checkpoint({cfg.encoder, params},
                      (fs::path(cfg.out_dir) / ("checkpoint_epoch" + std::to_string(epoch) +
                                                ".txt")).string());
  }

  if (val_bags.empty()) {
    result.params = params;
    result.best_epoch = cfg.epochs;
  }
  if (!cfg.out_dir.empty())
    save_checkpoint({cfg.encoder, result.params},
                    (fs::path(cfg.out_dir) / "checkpoint.txt").string());
  return result;
}

/// One row per (bag, instance): bag_id, labels, instance id, the sorted
/// union of meta keys, attention weight. Weights per bag must sum to 1
/// within 1e-6; that is checked here, not assumed.
inline void export_attention(const ParamSet& params, const EncoderConfig& encoder,
                             const std::vector<Bag>& bags, std::ostream& out) {
  std::set<std::string> keys;
  for (const Bag& bag : bags)
    for (const Instance& inst : bag.instances)
      for (const auto& [k, v] : inst.meta) keys.insert(k);

  out << "bag_id,true_label,pred_label,instance_id";
  for (const std::string& k : keys) out << ',' << k;
  out << ",attention_weight\n";

  for (const Bag& bag : bags) {
    BagOutput bo = bag_output(bag, params, encoder);
    double sum = std::accumulate(bo.attention.begin(), bo.attention.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-6)
      throw InternalError("attention weights of bag " + std::to_string(bag.id) +
                          " sum to " + detail::fmt_g17(sum));
    int pred = predict_label(bo.main_logits);
    for (size_t i = 0; i < bag.instances.size(); ++i) {
      out << bag.id << ',' << bag.bag_label << ',' << pred << ',' << i;
      for (const std::string& k : keys) {
        auto it = bag.instances[i].meta.find(k);
        out << ',' << (it == bag.instances[i].meta.end() ? "" : it->second);
      }
      out << ',' << detail::fmt_g17(bo.attention[i]) << '\n';
    }
  }
}

}  // namespace atmil
