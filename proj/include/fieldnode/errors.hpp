#pragma once

#include <stdexcept>
#include <string>

namespace fieldnode {

// Invalid or unknown configuration (unknown env family, bad partition, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or vector dimensions disagree with what an operation expects.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation invoked in a state where it cannot proceed (empty queue, terminated env).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Retryable: the replay dataset cannot serve the request yet.
class NotReady : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss or latent became NaN/Inf. `what()` names the offending term.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint cannot be restored into the requested model.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace fieldnode
