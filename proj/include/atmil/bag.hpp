#pragma once

#include <map>
#include <string>
#include <vector>

#include "atmil/errors.hpp"

namespace atmil {

/// One grayscale image inside a bag, values in [0,1]. `meta` carries
/// free-form provenance tags (perturbation class, component count, ...)
/// that ride along into the attention export.
struct Instance {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  std::map<std::string, std::string> meta;
};

/// A set of instances under a single bag-level label, plus the
/// per-instance labels for the auxiliary task.
struct Bag {
  int id = 0;
  std::vector<Instance> instances;
  int bag_label = 0;
  std::vector<int> aux_labels;

  void validate() const {
    if (instances.empty()) throw UsageError("bag " + std::to_string(id) + " has no instances");
    if (aux_labels.size() != instances.size())
      throw DataError("bag " + std::to_string(id) + ": " + std::to_string(aux_labels.size()) +
                      " aux labels for " + std::to_string(instances.size()) + " instances");
  }
};

}  // namespace atmil
