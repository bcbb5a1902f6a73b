#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "atmil/gradcheck.hpp"
#include "atmil/model.hpp"
#include "atmil/rng.hpp"

namespace atmil {

// The finite-difference battery behind the `gradcheck` CLI command: every
// op kind on random inputs, then the full bag network on a random bag with
// the given encoder. Inputs keep |x| >= 0.05 so central differences stay
// clear of the relu and max-pool kinks.

struct OpCheckResult {
  std::string op;
  double worst_rel_err = 0.0;
  int instances = 0;
  bool pass = false;
};

struct GradCheckSuiteResult {
  std::vector<OpCheckResult> ops;
  GradCheckReport network;
  double tolerance = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

namespace detail {

inline Tensor gradcheck_tensor(Shape shape, Rng& rng, bool positive = false) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.data)
    x = positive ? rng.uniform(0.1, 2.0)
                 : (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return t;
}

struct OpCase {
  const char* name;
  ParamSet params;
  ModelClosure closure;
};

inline std::vector<OpCase> gradcheck_op_cases(Rng& rng) {
  std::vector<OpCase> cases;
  {
    OpCase c{"add", {}, {}};
    c.params.add("a", Partition::shared, gradcheck_tensor({3, 4}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({3, 4}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.graph.add(r.bound.nodes[0], r.bound.nodes[1])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"add_rowvec", {}, {}};
    c.params.add("a", Partition::shared, gradcheck_tensor({3, 4}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({4}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.graph.add_rowvec(r.bound.nodes[0], r.bound.nodes[1])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"mul", {}, {}};
    c.params.add("a", Partition::shared, gradcheck_tensor({2, 5}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({2, 5}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.graph.mul(r.bound.nodes[0], r.bound.nodes[1])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"scalar_mul", {}, {}};
    c.params.add("a", Partition::shared, gradcheck_tensor({4, 3}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.graph.scalar_mul(r.bound.nodes[0], 1.7)));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"matmul", {}, {}};
    c.params.add("a", Partition::shared, gradcheck_tensor({3, 4}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({4, 5}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.graph.matmul(r.bound.nodes[0], r.bound.nodes[1])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"transpose2d", {}, {}};
    c.params.add("a", Partition::shared, gradcheck_tensor({4, 3}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({4, 5}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(
          r.graph.tanh(r.graph.matmul(r.graph.transpose(r.bound.nodes[0]), r.bound.nodes[1])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"conv2d", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({2, 2, 7, 7}, rng));
    c.params.add("k", Partition::shared, gradcheck_tensor({3, 2, 3, 3}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({3}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(
          r.graph.tanh(r.graph.conv2d(r.bound.nodes[0], r.bound.nodes[1], r.bound.nodes[2])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"maxpool2x2", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({2, 2, 6, 6}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.graph.maxpool2x2(r.bound.nodes[0])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"relu", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({5, 5}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.relu(r.bound.nodes[0]));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"tanh", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({5, 4}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(r.bound.nodes[0]));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"log", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({4, 4}, rng, /*positive=*/true));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.log(r.bound.nodes[0]));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"softmax", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({3, 5}, rng));
    c.params.add("w", Partition::shared, gradcheck_tensor({3, 5}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.mul(r.graph.softmax(r.bound.nodes[0]), r.bound.nodes[1]));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"reshape", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({3, 4}, rng));
    c.params.add("b", Partition::shared, gradcheck_tensor({6, 2}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.mean(r.graph.tanh(
          r.graph.matmul(r.graph.reshape(r.bound.nodes[0], {2, 6}), r.bound.nodes[1])));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"sum", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({3, 3}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.tanh(r.graph.scalar_mul(r.graph.sum(r.bound.nodes[0]), 0.3));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"mean", {}, {}};
    c.params.add("x", Partition::shared, gradcheck_tensor({4, 5}, rng));
    c.closure = [](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.tanh(r.graph.mean(r.bound.nodes[0]));
      return r;
    };
    cases.push_back(std::move(c));
  }
  {
    OpCase c{"cross_entropy_logits", {}, {}};
    Tensor logits = gradcheck_tensor({4, 3}, rng);
    for (double& x : logits.data) x *= 3.0;
    c.params.add("x", Partition::shared, logits);
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 2)));
    c.closure = [labels](const ParamSet& ps) {
      GraphRun r;
      r.bound = BoundParams::bind(r.graph, ps);
      r.loss = r.graph.cross_entropy_logits(r.bound.nodes[0], labels);
      return r;
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace detail

inline GradCheckSuiteResult run_gradcheck_suite(double tolerance = 1e-4, int instances_per_op = 20,
                                                int64_t network_samples_per_param = 20,
                                                const EncoderConfig& encoder = EncoderConfig{},
                                                int network_instances = 8, uint64_t seed = 1) {
  auto t0 = std::chrono::steady_clock::now();
  GradCheckSuiteResult suite;
  suite.tolerance = tolerance;
  suite.pass = true;

  // one result per op kind, worst error across random instances
  std::vector<OpCheckResult> per_op;
  for (int instance = 0; instance < instances_per_op; ++instance) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(instance)));
    std::vector<detail::OpCase> cases = detail::gradcheck_op_cases(rng);
    if (per_op.empty()) {
      per_op.resize(cases.size());
      for (size_t i = 0; i < cases.size(); ++i) per_op[i].op = cases[i].name;
    }
    for (size_t i = 0; i < cases.size(); ++i) {
      GradCheckReport rep = finite_diff_check(cases[i].closure, std::move(cases[i].params),
                                              tolerance, 1e-5);
      per_op[i].worst_rel_err = std::max(per_op[i].worst_rel_err, rep.worst_rel_err);
      ++per_op[i].instances;
    }
  }
  for (OpCheckResult& op : per_op) {
    op.pass = op.worst_rel_err < tolerance;
    suite.pass = suite.pass && op.pass;
  }
  suite.ops = std::move(per_op);

  // full bag network
  encoder.validate();
  Rng rng(derive_seed(seed, 0xba6));
  Bag bag;
  for (int i = 0; i < network_instances; ++i) {
    Instance inst;
    inst.height = encoder.image_h;
    inst.width = encoder.image_w;
    inst.pixels.resize(static_cast<size_t>(encoder.image_h) * encoder.image_w);
    for (double& p : inst.pixels) p = rng.uniform();
    bag.instances.push_back(std::move(inst));
    bag.aux_labels.push_back(static_cast<int>(rng.uniform_int(0, encoder.aux_classes - 1)));
  }
  bag.bag_label = static_cast<int>(rng.uniform_int(0, encoder.main_classes - 1));

  ParamSet params = init_params(encoder, derive_seed(seed, 0xfeed));
  suite.network = finite_diff_check(
      [&bag, &encoder](const ParamSet& ps) {
        GraphRun run;
        BagGraph r = bag_forward(bag, ps, encoder);
        run.loss = r.graph.add(r.main_loss, r.aux_loss);
        run.graph = std::move(r.graph);
        run.bound = std::move(r.bound);
        return run;
      },
      std::move(params), tolerance, 1e-5, network_samples_per_param, derive_seed(seed, 0x5a3));
  suite.pass = suite.pass && suite.network.pass;
  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return suite;
}

}  // namespace atmil
