#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "atmil/errors.hpp"

namespace atmil {

/// Integer count matrix, rows = actual class, columns = predicted class.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<size_t>(c) * c, 0) {}

  void record(int actual, int predicted) {
    if (actual < 0 || actual >= classes || predicted < 0 || predicted >= classes)
      throw DataError("confusion record (" + std::to_string(actual) + "," +
                      std::to_string(predicted) + ") outside " + std::to_string(classes) +
                      " classes");
    ++counts[static_cast<size_t>(actual) * classes + predicted];
  }

  int64_t at(int actual, int predicted) const {
    return counts[static_cast<size_t>(actual) * classes + predicted];
  }

  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
  }

  int64_t diagonal() const {
    int64_t t = 0;
    for (int c = 0; c < classes; ++c) t += at(c, c);
    return t;
  }
};

struct ClassMetrics {
  double sensitivity = 0.0;  // TP / (TP + FN)
  double specificity = 0.0;  // TN / (TN + FP)
  double precision = 0.0;    // TP / (TP + FP)
  double f1 = 0.0;
  bool flagged = false;      // some ratio had a zero denominator and was reported as 0
};

struct Metrics {
  double accuracy = 0.0;
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

/// Per-class rates with zero denominators reported as 0 and flagged; macro
/// values are unweighted means over classes.
inline Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.classes <= 0 || cm.total() == 0) throw UsageError("metrics over an empty confusion matrix");
  Metrics m;
  m.per_class.resize(static_cast<size_t>(cm.classes));
  int64_t total = cm.total();
  for (int c = 0; c < cm.classes; ++c) {
    int64_t tp = cm.at(c, c);
    int64_t fn = 0, fp = 0;
    for (int o = 0; o < cm.classes; ++o) {
      if (o == c) continue;
      fn += cm.at(c, o);
      fp += cm.at(o, c);
    }
    int64_t tn = total - tp - fn - fp;
    ClassMetrics& pc = m.per_class[static_cast<size_t>(c)];
    auto ratio = [&pc](int64_t num, int64_t den) {
      if (den == 0) {
        pc.flagged = true;
        return 0.0;
      }
      return static_cast<double>(num) / static_cast<double>(den);
    };
    pc.sensitivity = ratio(tp, tp + fn);
    pc.specificity = ratio(tn, tn + fp);
    pc.precision = ratio(tp, tp + fp);
    double pr = pc.precision + pc.sensitivity;
    if (pr == 0.0) {
      pc.flagged = true;
      pc.f1 = 0.0;
    } else {
      pc.f1 = 2.0 * pc.precision * pc.sensitivity / pr;
    }
    m.macro_sensitivity += pc.sensitivity;
    m.macro_specificity += pc.specificity;
    m.macro_f1 += pc.f1;
  }
  m.macro_sensitivity /= cm.classes;
  m.macro_specificity /= cm.classes;
  m.macro_f1 /= cm.classes;
  m.accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(total);
  return m;
}

/// Mean and standard error of the mean across repetitions (sample standard
/// deviation, n-1 denominator). A single value reports sem 0.
struct Aggregate {
  double mean = 0.0;
  double sem = 0.0;
  int n = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("aggregate of no values");
  Aggregate a;
  a.n = static_cast<int>(values.size());
  for (double v : values) a.mean += v;
  a.mean /= a.n;
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.sem = std::sqrt(ss / (a.n - 1)) / std::sqrt(static_cast<double>(a.n));
  }
  return a;
}

}  // namespace atmil
