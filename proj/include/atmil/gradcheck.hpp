#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "atmil/graph.hpp"
#include "atmil/params.hpp"
#include "atmil/rng.hpp"

namespace atmil {

/// One forward build of a model: the graph, the parameter leaves, and the
/// scalar loss node. Closures handed to finite_diff_check must be
/// deterministic functions of the parameter values.
struct GraphRun {
  Graph graph;
  BoundParams bound;
  int loss = -1;
};

using ModelClosure = std::function<GraphRun(const ParamSet&)>;

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t checked = 0;
  int64_t skipped_kinks = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst_rel_err = 0.0;
  double tolerance = 0.0;
  int64_t checked = 0;
  int64_t skipped_kinks = 0;
  bool pass = false;
};

/// Central finite differences against the backward pass. Reports per
/// parameter; never throws on mismatch. When a parameter has more elements
/// than max_samples_per_param, a seeded subset is checked (full sweeps over
/// a few hundred thousand weights would need two forwards per element).
///
/// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator, so
/// near-zero gradient pairs do not turn rounding noise into failures.
///
/// Central differences are meaningless where the perturbation crosses a
/// relu or max-pool kink. Those sample points are detected by comparing the
/// two one-sided slopes and excluded from the error, but counted; a check
/// where most samples got skipped would not mean much, so pass additionally
/// requires that at least half the samples were smooth.
inline GradCheckReport finite_diff_check(const ModelClosure& model, ParamSet params,
                                         double tolerance, double step = 1e-5,
                                         int64_t max_samples_per_param = 0, uint64_t seed = 7) {
  GradCheckReport report;
  report.tolerance = tolerance;

  GraphRun base = model(params);
  double base_loss = base.graph.value(base.loss).scalar_value();
  base.graph.backward(base.loss);
  std::vector<Tensor> analytic;
  analytic.reserve(static_cast<size_t>(params.count()));
  for (int i = 0; i < params.count(); ++i)
    analytic.push_back(base.graph.grad(base.bound.nodes[static_cast<size_t>(i)]));

  Rng rng(seed);
  for (int i = 0; i < params.count(); ++i) {
    ParamEntry& e = params.entry(i);
    int64_t n = e.value.size();
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (max_samples_per_param > 0 && n > max_samples_per_param) {
      rng.shuffle(idx);
      idx.resize(static_cast<size_t>(max_samples_per_param));
    }

    GradCheckEntry entry;
    entry.param = e.name;
    for (int64_t j : idx) {
      double saved = e.value[j];
      e.value[j] = saved + step;
      double plus = [&] {
        GraphRun r = model(params);
        return r.graph.value(r.loss).scalar_value();
      }();
      e.value[j] = saved - step;
      double minus = [&] {
        GraphRun r = model(params);
        return r.graph.value(r.loss).scalar_value();
      }();
      e.value[j] = saved;

      // One-sided slopes agree to ~1e-7 relative on smooth points; a kink
      // inside the step window shifts them against each other by twice the
      // bias it would leave in the central difference. A point is only
      // usable when that disagreement is below the tolerance being checked.
      double slope_plus = (plus - base_loss) / step;
      double slope_minus = (base_loss - minus) / step;
      double bend = std::abs(slope_plus - slope_minus) /
                    std::max({std::abs(slope_plus), std::abs(slope_minus), 1e-3});
      if (bend > tolerance) {
        ++entry.skipped_kinks;
        continue;
      }

      double numeric = (plus - minus) / (2.0 * step);
      double ad = analytic[static_cast<size_t>(i)][j];
      double abs_err = std::abs(ad - numeric);
      double rel = abs_err / std::max({std::abs(ad), std::abs(numeric), 1e-3});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.checked;
    }
    report.worst_rel_err = std::max(report.worst_rel_err, entry.max_rel_err);
    report.checked += entry.checked;
    report.skipped_kinks += entry.skipped_kinks;
    report.entries.push_back(std::move(entry));
  }
  report.pass =
      report.worst_rel_err < tolerance && report.checked >= report.skipped_kinks;
  return report;
}

}  // namespace atmil
