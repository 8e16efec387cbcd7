#pragma once

#include <stdexcept>
#include <string>

namespace mfglq {

// Bad configuration or arguments (CLI exit code 2).
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure: finite-escape, optimizer divergence, degenerate
// regression (CLI exit code 3).
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cache file cannot be read or replaced (CLI exit code 4). A merely stale or
// corrupt entry is recomputed instead of raising this.
class cache_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfglq
