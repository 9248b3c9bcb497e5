#pragma once

#include <stdexcept>
#include <string>

namespace calib {

// Thrown when an argument violates a documented precondition.
struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bin statistics requested for a bin with no members.
struct empty_bin : std::logic_error {
  using std::logic_error::logic_error;
};

// A batch operation received zero samples.
struct empty_batch : std::logic_error {
  using std::logic_error::logic_error;
};

// A batch on which the requested quantity is undefined, e.g. the weighted
// pairwise calibration penalty when every prediction is correct (or none is).
struct degenerate_batch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace calib
