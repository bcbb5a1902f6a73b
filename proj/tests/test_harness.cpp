#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "atmil/adam.hpp"
#include "atmil/checkpoint.hpp"
#include "atmil/config.hpp"
#include "atmil/train.hpp"

using namespace atmil;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.image_h = 12;
  cfg.image_w = 12;
  cfg.conv1_channels = 3;
  cfg.conv1_kernel = 3;
  cfg.conv2_channels = 4;
  cfg.conv2_kernel = 2;
  cfg.embedding_dim = 6;
  cfg.attention_hidden = 4;
  return cfg;
}

Bag synthetic_bag(const EncoderConfig& cfg, int n, int label, Rng& rng) {
  Bag bag;
  bag.bag_label = label;
  for (int i = 0; i < n; ++i) {
    Instance inst;
    inst.height = cfg.image_h;
    inst.width = cfg.image_w;
    inst.pixels.resize(static_cast<size_t>(cfg.image_h) * cfg.image_w);
    for (double& p : inst.pixels) p = rng.uniform();
    bag.instances.push_back(std::move(inst));
    bag.aux_labels.push_back(static_cast<int>(rng.uniform_int(0, cfg.aux_classes - 1)));
  }
  return bag;
}

std::vector<Bag> synthetic_dataset(const EncoderConfig& cfg, int bags, int instances,
                                   uint64_t seed) {
  Rng rng(seed);
  std::vector<Bag> out;
  for (int b = 0; b < bags; ++b) {
    out.push_back(synthetic_bag(cfg, instances, b % cfg.main_classes, rng));
    out.back().id = b;
  }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("adam_step") {
  SUBCASE("first step on a unit gradient matches the closed form") {
    ParamSet p;
    p.add("theta", Partition::shared, Tensor::scalar(0.0));
    AdamState state = AdamState::init(p);
    std::vector<Tensor> grads = {Tensor::scalar(1.0)};
    adam_step(p, grads, state, 0.0005);
    // m=0.1, v=0.001, m_hat=1, v_hat=1: delta = -0.0005 / (1 + 1e-8)
    CHECK(p.entry(0).value[0] == doctest::Approx(-0.0005 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(state.m[0][0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(state.v[0][0] == doctest::Approx(0.001).epsilon(1e-15));
  }

  SUBCASE("zero gradients leave parameters unchanged") {
    ParamSet p;
    p.add("theta", Partition::shared, Tensor({3}, {0.5, -0.25, 1.0}));
    AdamState state = AdamState::init(p);
    std::vector<Tensor> grads = {Tensor::zeros({3})};
    for (int i = 0; i < 5; ++i) adam_step(p, grads, state, 0.1);
    CHECK(p.entry(0).value.data == std::vector<double>{0.5, -0.25, 1.0});
  }

  SUBCASE("ten steps on a quadratic shrink |theta| and match a scalar oracle") {
    ParamSet p;
    p.add("theta", Partition::shared, Tensor::scalar(1.0));
    AdamState state = AdamState::init(p);

    // independent scalar replica of the update rule
    double theta = 1.0, m = 0.0, v = 0.0;
    double prev_abs = 1.0;
    for (int t = 1; t <= 10; ++t) {
      double g = p.entry(0).value[0];  // d/dtheta of 0.5*theta^2
      std::vector<Tensor> grads = {Tensor::scalar(g)};
      adam_step(p, grads, state, 0.05);

      double og = theta;
      m = 0.9 * m + 0.1 * og;
      v = 0.999 * v + 0.001 * og * og;
      double m_hat = m / (1.0 - std::pow(0.9, t));
      double v_hat = v / (1.0 - std::pow(0.999, t));
      theta -= 0.05 * m_hat / (std::sqrt(v_hat) + 1e-8);

      CHECK(p.entry(0).value[0] == doctest::Approx(theta).epsilon(1e-12));
      CHECK(std::abs(p.entry(0).value[0]) < prev_abs);
      prev_abs = std::abs(p.entry(0).value[0]);
    }
  }

  SUBCASE("non-finite gradients raise a numeric error") {
    ParamSet p;
    p.add("theta", Partition::shared, Tensor::scalar(0.0));
    AdamState state = AdamState::init(p);
    std::vector<Tensor> grads = {Tensor::scalar(0.0)};
    grads[0][0] = std::nan("");
    CHECK_THROWS_AS(adam_step(p, grads, state, 0.1), NumericError);
  }
}

TEST_CASE("lr_schedule") {
  CHECK(lr_schedule(1, 0.0005, 100, 10.0) == 0.0005);
  CHECK(lr_schedule(100, 0.0005, 100, 10.0) == 0.0005);  // decay strictly after 100
  CHECK(lr_schedule(101, 0.0005, 100, 10.0) == doctest::Approx(0.00005).epsilon(1e-15));
  CHECK(lr_schedule(200, 0.0005, 100, 10.0) == doctest::Approx(0.00005).epsilon(1e-15));
  CHECK_THROWS_AS((void)lr_schedule(0, 0.0005, 100, 10.0), UsageError);
}

TEST_CASE("checkpoint round-trip") {
  TempDir dir("atmil_ckpt_test");
  EncoderConfig cfg = tiny_config();
  ParamSet params = init_params(cfg, 77);
  std::string path = (dir.path / "model.txt").string();

  SUBCASE("parameters survive bit-for-bit") {
    save_checkpoint({cfg, params}, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.encoder.embedding_dim == cfg.embedding_dim);
    REQUIRE(back.params.count() == params.count());
    for (int i = 0; i < params.count(); ++i) {
      CHECK(back.params.entry(i).name == params.entry(i).name);
      CHECK(back.params.entry(i).partition == params.entry(i).partition);
      CHECK(back.params.entry(i).value.data == params.entry(i).value.data);
    }
  }

  SUBCASE("save, load, evaluate gives identical metrics") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 10, 4, 5);
    EvalResult before = evaluate(params, cfg, bags);
    save_checkpoint({cfg, params}, path);
    Checkpoint back = load_checkpoint(path);
    EvalResult after = evaluate(back.params, back.encoder, bags);
    CHECK(before.metrics.accuracy == after.metrics.accuracy);
    CHECK(before.metrics.macro_f1 == after.metrics.macro_f1);
    CHECK(before.confusion.counts == after.confusion.counts);
  }

  SUBCASE("corrupted files are format errors") {
    {
      std::ofstream out(path);
      out << "atmil-checkpoint 1\nencoder image_h 12\nbogus line\n";
    }
    CHECK_THROWS_AS((void)load_checkpoint(path), FormatError);
    {
      std::ofstream out(path);
      out << "something else\n";
    }
    CHECK_THROWS_AS((void)load_checkpoint(path), FormatError);
  }
}

TEST_CASE("training") {
  EncoderConfig cfg = tiny_config();

  SUBCASE("same seed and config give bit-identical loss sequences") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 6, 4, 11);
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 3;
    tc.lr = 0.001;
    tc.seed = 9;
    tc.strategy.strategy = Strategy::atmil;
    TrainResult a = train(tc, bags, {});
    TrainResult b = train(tc, bags, {});
    CHECK(a.step_losses_main == b.step_losses_main);
    for (int i = 0; i < a.params.count(); ++i)
      CHECK(a.params.entry(i).value.data == b.params.entry(i).value.data);
  }

  SUBCASE("strategy none reproduces a hand-driven main-only loop bit-identically") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 4, 3, 21);
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 2;
    tc.lr = 0.002;
    tc.seed = 3;
    tc.strategy.strategy = Strategy::none;
    TrainResult via_train = train(tc, bags, {});

    // manual loop: same order, main loss only, heads updated from their own
    // losses (aux head sees zero gradients here, so it never moves)
    ParamSet params = init_params(cfg, tc.seed);
    AdamState adam = AdamState::init(params);
    auto shared_layout = make_layout(params, Partition::shared);
    auto main_layout = make_layout(params, Partition::main_head);
    std::vector<double> manual_losses;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
      for (int idx : epoch_bag_order(tc.seed, epoch, static_cast<int>(bags.size()))) {
        BagGraph run = bag_forward(bags[static_cast<size_t>(idx)], params, cfg);
        manual_losses.push_back(run.graph.value(run.main_loss).scalar_value());
        run.graph.backward(run.main_loss);
        GradVector g_shared =
            flatten_grads(run.graph, run.bound, params, Partition::shared, shared_layout);
        GradVector g_head =
            flatten_grads(run.graph, run.bound, params, Partition::main_head, main_layout);
        std::vector<Tensor> grads(static_cast<size_t>(params.count()));
        unflatten_grads(g_shared, params, grads);
        unflatten_grads(g_head, params, grads);
        for (int i = 0; i < params.count(); ++i)
          if (params.entry(i).partition == Partition::aux_head)
            grads[static_cast<size_t>(i)] = Tensor::zeros(params.entry(i).value.shape);
        adam_step(params, grads, adam, lr_schedule(epoch, tc.lr, tc.lr_decay_after,
                                                   tc.lr_decay_factor));
      }
    }
    CHECK(via_train.step_losses_main == manual_losses);
    for (int i = 0; i < params.count(); ++i) {
      if (params.entry(i).partition == Partition::aux_head) continue;
      CAPTURE(params.entry(i).name);
      CHECK(via_train.params.entry(i).value.data == params.entry(i).value.data);
    }
  }

  SUBCASE("linearly separable toy bags reach full training accuracy inside 50 epochs") {
    // Positive bags contain one bright checkerboard instance over dim-noise
    // backgrounds. The checkerboard keeps local contrast inside every conv
    // window, so no initialization can relu-silence the marker.
    EncoderConfig toy = cfg;
    toy.conv1_channels = 4;
    toy.conv2_channels = 6;
    toy.embedding_dim = 8;
    std::vector<Bag> bags;
    Rng noise(99);
    for (int b = 0; b < 8; ++b) {
      Bag bag;
      bag.id = b;
      bag.bag_label = b % 2;
      for (int i = 0; i < 4; ++i) {
        Instance inst;
        inst.height = toy.image_h;
        inst.width = toy.image_w;
        inst.pixels.resize(static_cast<size_t>(toy.image_h) * toy.image_w);
        for (double& p : inst.pixels) p = noise.uniform(0.0, 0.2);
        bag.instances.push_back(std::move(inst));
        bag.aux_labels.push_back(0);
      }
      if (bag.bag_label == 1) {
        Instance& marker = bag.instances[static_cast<size_t>(b % 4)];
        for (int y = 0; y < toy.image_h; ++y)
          for (int x = 0; x < toy.image_w; ++x)
            marker.pixels[static_cast<size_t>(y) * toy.image_w + x] = (y + x) % 2 == 0 ? 1.0 : 0.0;
      }
      bags.push_back(std::move(bag));
    }
    TrainConfig tc;
    tc.encoder = toy;
    tc.epochs = 50;
    tc.lr = 0.003;
    tc.seed = 1;
    tc.strategy.strategy = Strategy::none;
    TrainResult r = train(tc, bags, {});
    CHECK(evaluate(r.params, toy, bags).metrics.accuracy == 1.0);
  }

  SUBCASE("aux loss decreases under uniform weighting on constant aux labels") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 6, 4, 33);
    for (Bag& bag : bags)
      for (int& lab : bag.aux_labels) lab = 1;  // constant class
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 8;
    tc.lr = 0.005;
    tc.seed = 4;

    tc.strategy.strategy = Strategy::none;
    TrainResult none_run = train(tc, bags, {});
    tc.strategy.strategy = Strategy::uniform;
    TrainResult uniform_run = train(tc, bags, {});

    CHECK(none_run.epoch_logs.size() == 8);
    CHECK(uniform_run.epoch_logs.size() == 8);
    CHECK(uniform_run.epoch_logs.back().mean_loss_aux <
          uniform_run.epoch_logs.front().mean_loss_aux);
  }

  SUBCASE("validation selects the best epoch and logs stay in range") {
    TempDir dir("atmil_train_logs");
    std::vector<Bag> bags = synthetic_dataset(cfg, 6, 4, 44);
    std::vector<Bag> val = synthetic_dataset(cfg, 4, 4, 45);
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 4;
    tc.lr = 0.002;
    tc.seed = 8;
    tc.strategy.strategy = Strategy::atmil;
    tc.out_dir = dir.path.string();
    TrainResult r = train(tc, bags, val);

    CHECK(r.best_epoch >= 1);
    CHECK(r.best_epoch <= 4);
    double best = -1.0;
    for (const EpochLog& log : r.epoch_logs) {
      CHECK(std::isfinite(log.mean_loss_main));
      CHECK(std::isfinite(log.mean_loss_aux));
      CHECK(log.w_last >= 0.0);
      CHECK(log.w_last <= tc.strategy.w_max);
      best = std::max(best, log.val_accuracy);
    }
    CHECK(r.best_val_accuracy == best);

    // the files exist with the documented headers and sane records
    std::ifstream steps(dir.path / "step_diagnostics.csv");
    std::string header;
    std::getline(steps, header);
    CHECK(header == "step,strategy,w_used,dot,norm_main,norm_aux,cosine,loss_main,loss_aux");
    int rows = 0;
    std::string line;
    while (std::getline(steps, line)) {
      ++rows;
      std::istringstream ls(line);
      std::string field;
      std::getline(ls, field, ',');  // step
      std::getline(ls, field, ',');  // strategy
      CHECK(field == "atmil");
      std::getline(ls, field, ',');  // w_used
      double w = std::stod(field);
      CHECK(w >= 0.0);
      CHECK(w <= tc.strategy.w_max);
    }
    CHECK(rows == 4 * 6);

    std::ifstream epochs(dir.path / "train_log.csv");
    std::getline(epochs, header);
    CHECK(header == "epoch,lr,mean_loss_main,mean_loss_aux,w_last,val_accuracy,aborted_steps");
    rows = 0;
    while (std::getline(epochs, line)) ++rows;
    CHECK(rows == 4);

    Checkpoint ckpt = load_checkpoint((dir.path / "checkpoint.txt").string());
    EvalResult from_file = evaluate(ckpt.params, ckpt.encoder, val);
    CHECK(from_file.metrics.accuracy == r.best_val_accuracy);
  }

  SUBCASE("empty test set is a usage error") {
    ParamSet params = init_params(cfg, 0);
    CHECK_THROWS_AS((void)evaluate(params, cfg, {}), UsageError);
  }

  SUBCASE("labels outside the configured classes are data errors") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 2, 3, 50);
    bags[0].bag_label = 7;
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 1;
    CHECK_THROWS_AS((void)train(tc, bags, {}), DataError);
    std::vector<Bag> eval_bags = synthetic_dataset(cfg, 2, 3, 51);
    eval_bags[1].bag_label = 5;
    CHECK_THROWS_AS((void)evaluate(init_params(cfg, 0), cfg, eval_bags), DataError);
  }

  SUBCASE("a non-finite bag is skipped and counted, training continues") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 4, 3, 52);
    for (double& p : bags[2].instances[0].pixels) p = std::nan("");
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 3;
    tc.lr = 0.001;
    TrainResult r = train(tc, bags, {});
    CHECK(r.aborted_steps == 3);  // once per epoch
    CHECK(r.step_losses_main.size() == 3 * 3);
    for (const EpochLog& log : r.epoch_logs) CHECK(log.aborted_steps == 1);
    for (double loss : r.step_losses_main) CHECK(std::isfinite(loss));
  }

  SUBCASE("checkpoint cadence writes per-epoch snapshots") {
    TempDir dir("atmil_ckpt_cadence");
    std::vector<Bag> bags = synthetic_dataset(cfg, 3, 3, 53);
    TrainConfig tc;
    tc.encoder = cfg;
    tc.epochs = 4;
    tc.checkpoint_every = 2;
    tc.out_dir = dir.path.string();
    train(tc, bags, {});
    CHECK(fs::exists(dir.path / "checkpoint_epoch2.txt"));
    CHECK(fs::exists(dir.path / "checkpoint_epoch4.txt"));
    CHECK(fs::exists(dir.path / "checkpoint.txt"));
    CHECK_FALSE(fs::exists(dir.path / "checkpoint_epoch3.txt"));
    (void)load_checkpoint((dir.path / "checkpoint_epoch2.txt").string());
  }
}

namespace {

// Generated digits are 28x28; ladder tests need a small encoder at that size.
EncoderConfig small_digit_config() {
  EncoderConfig cfg = EncoderConfig::desk_preset();
  cfg.conv1_channels = 3;
  cfg.conv2_channels = 4;
  cfg.embedding_dim = 8;
  cfg.attention_hidden = 4;
  return cfg;
}

}  // namespace

TEST_CASE("experiment ladder") {
  SUBCASE("a three-seed cell aggregates mean and sem like the scalar formula") {
    LadderConfig lc;
    lc.strategies = {Strategy::none};
    lc.train_sizes = {4};
    lc.seeds = {0, 1, 2};
    lc.base.encoder = small_digit_config();
    lc.base.epochs = 2;
    lc.base.lr = 0.002;
    lc.bag_spec.bag_size = 5;
    lc.bag_spec.positive_max = 2;
    lc.val_bags = 2;
    lc.test_bags = 6;
    lc.jobs = 2;
    LadderResult lr = run_experiment_ladder(lc);
    REQUIRE(lr.cells.size() == 1);
    const LadderCell& cell = lr.cells[0];
    REQUIRE(cell.runs.size() == 3);

    double mean = 0.0;
    for (const LadderRun& run : cell.runs) {
      CHECK(run.ok);
      mean += run.accuracy;
    }
    mean /= 3.0;
    double ss = 0.0;
    for (const LadderRun& run : cell.runs) ss += (run.accuracy - mean) * (run.accuracy - mean);
    double sem = std::sqrt(ss / 2.0) / std::sqrt(3.0);
    CHECK(cell.accuracy.n == 3);
    CHECK(cell.accuracy.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(cell.accuracy.sem == doctest::Approx(sem).epsilon(1e-12));
  }

  SUBCASE("a failing cell is recorded and the grid continues") {
    LadderConfig lc;
    lc.strategies = {Strategy::none};
    lc.train_sizes = {2, 4};
    lc.seeds = {0};
    lc.base.encoder = small_digit_config();
    lc.base.encoder.main_classes = 1;  // generated label 1 bags cannot fit: data error downstream
    lc.base.epochs = 1;
    lc.bag_spec.bag_size = 4;
    lc.bag_spec.positive_max = 2;
    lc.val_bags = 2;
    lc.test_bags = 4;
    LadderResult lr = run_experiment_ladder(lc);
    REQUIRE(lr.cells.size() == 2);
    for (const LadderCell& cell : lr.cells) {
      CHECK(cell.runs.size() == 1);
      CHECK_FALSE(cell.runs[0].ok);
      CHECK_FALSE(cell.runs[0].error.empty());
      CHECK(cell.accuracy.n == 0);
    }
  }
}

TEST_CASE("attention export") {
  EncoderConfig cfg = tiny_config();
  ParamSet params = init_params(cfg, 13);

  SUBCASE("single-instance bags get weight one") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 2, 1, 60);
    std::ostringstream out;
    export_attention(params, cfg, bags, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "bag_id,true_label,pred_label,instance_id,attention_weight");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(line.substr(line.rfind(',') + 1) == "1");
    }
    CHECK(rows == 2);
  }

  SUBCASE("exported weights equal the forward pass attention exactly") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 3, 5, 61);
    std::ostringstream out;
    export_attention(params, cfg, bags, out);

    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);  // header
    for (const Bag& bag : bags) {
      BagOutput bo = bag_output(bag, params, cfg);
      for (size_t i = 0; i < bag.instances.size(); ++i) {
        REQUIRE(std::getline(in, line));
        std::string last = line.substr(line.rfind(',') + 1);
        CHECK(std::stod(last) == bo.attention[i]);
      }
    }
  }

  SUBCASE("meta columns appear sorted in the header") {
    std::vector<Bag> bags = synthetic_dataset(cfg, 1, 2, 62);
    bags[0].instances[0].meta["class"] = "healthy";
    bags[0].instances[0].meta["components"] = "1";
    bags[0].instances[1].meta["class"] = "focal";
    std::ostringstream out;
    export_attention(params, cfg, bags, out);
    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "bag_id,true_label,pred_label,instance_id,class,components,attention_weight");
    std::string row;
    std::getline(in, row);
    CHECK(row.find(",healthy,1,") != std::string::npos);
    std::getline(in, row);
    CHECK(row.find(",focal,,") != std::string::npos);  // missing key stays empty
  }
}

TEST_CASE("config files") {
  SUBCASE("a full config parses") {
    std::istringstream in(
        "# run settings\n"
        "seed = 3\n"
        "epochs = 12\n"
        "lr = 0.001\n"
        "strategy = gradnorm\n"
        "beta = 0.02\n"
        "encoder_preset = desk\n"
        "bag_size = 50\n"
        "positive_max = 5\n"
        "train_bags = 40\n"
        "ladder_strategies = none, atmil\n"
        "ladder_sizes = 20,40\n"
        "jobs = 2\n");
    RunConfig rc = parse_config(in, "test");
    CHECK(rc.train.seed == 3);
    CHECK(rc.train.epochs == 12);
    CHECK(rc.train.lr == 0.001);
    CHECK(rc.train.strategy.strategy == Strategy::gradnorm);
    CHECK(rc.train.strategy.beta == 0.02);
    CHECK(rc.train.encoder.conv1_channels == EncoderConfig::desk_preset().conv1_channels);
    CHECK(rc.bag_spec.bag_size == 50);
    CHECK(rc.train_bags == 40);
    CHECK(rc.ladder_strategies == std::vector<Strategy>{Strategy::none, Strategy::atmil});
    CHECK(rc.ladder_sizes == std::vector<int>{20, 40});
    CHECK(rc.jobs == 2);
  }

  SUBCASE("unknown keys are rejected") {
    std::istringstream in("learning joy = 11\n");
    CHECK_THROWS_AS((void)parse_config(in, "test"), ConfigError);
    std::istringstream in2("epochz = 11\n");
    CHECK_THROWS_AS((void)parse_config(in2, "test"), ConfigError);
  }

  SUBCASE("malformed values are rejected with the key name") {
    std::istringstream in("epochs = banana\n");
    CHECK_THROWS_WITH_AS((void)parse_config(in, "test"), doctest::Contains("epochs"),
                         ConfigError);
  }

  SUBCASE("four_class scheme adjusts the encoder head") {
    std::istringstream in("scheme = four_class\n");
    RunConfig rc = parse_config(in, "test");
    CHECK(rc.train.encoder.main_classes == 4);
    CHECK(rc.bag_spec.scheme == LabelScheme::four_class);
  }
}
