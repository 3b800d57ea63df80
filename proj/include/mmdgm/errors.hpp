#pragma once

#include <stdexcept>
#include <string>

namespace mmdgm {

// Shape disagreement between operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: missing label, non-scalar loss, empty required set, ...
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Value outside its mathematical domain (e.g. Bernoulli target not in [0,1]).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file content (IDX, checkpoint, config).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf surfaced by an operation or a gradient. Training aborts on it.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mmdgm
