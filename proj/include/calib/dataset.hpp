#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "calib/errors.hpp"

namespace calib {

// Evaluable P(y = 1 | x) on [-2, 2] for the 1-D synthetic task. "1" is the
// positive label (internal class 2, file label 1).
struct GroundTruthCurve {
  enum class Kind { Logistic, LinearRamp, Custom };

  Kind kind = Kind::Logistic;
  double scale = 2.0;  // Logistic: p = 1 / (1 + exp(-scale * x))
  std::vector<std::pair<double, double>> table;  // Custom: (x, p), sorted

  double p1(double x) const {
    switch (kind) {
      case Kind::Logistic:
        return 1.0 / (1.0 + std::exp(-scale * x));
      case Kind::LinearRamp:
        return std::clamp((x + 2.0) / 4.0, 0.0, 1.0);
      case Kind::Custom: {
        if (table.empty()) throw invalid_input("custom curve has no points");
        if (x <= table.front().first) return table.front().second;
        if (x >= table.back().first) return table.back().second;
        for (std::size_t i = 1; i < table.size(); ++i) {
          if (x <= table[i].first) {
            const auto& [x0, p0] = table[i - 1];
            const auto& [x1, p1v] = table[i];
            const double t = (x - x0) / (x1 - x0);
            return p0 + t * (p1v - p0);
          }
        }
        return table.back().second;
      }
    }
    return 0.5;
  }

  std::string describe() const {
    switch (kind) {
      case Kind::Logistic:
        return "logistic(scale=" + std::to_string(scale) + ")";
      case Kind::LinearRamp:
        return "linear-ramp[-2,2]";
      case Kind::Custom:
        return "custom-table(" + std::to_string(table.size()) + " points)";
    }
    return "?";
  }
};

// A labeled sample matrix. Labels are 1-based class indices; ground_truth is
// present iff the dataset was generated synthetically. `meta` carries the
// generation provenance written into the export sidecar.
struct Dataset {
  std::vector<std::vector<double>> inputs;  // n x d
  std::vector<int> labels;                  // 1-based, in {1..k}
  int k = 2;
  std::optional<GroundTruthCurve> ground_truth;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return inputs.size(); }
  int dim() const { return inputs.empty() ? 0 : static_cast<int>(inputs[0].size()); }
};

}  // namespace calib
