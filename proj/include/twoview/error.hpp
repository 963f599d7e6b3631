#pragma once

#include <stdexcept>
#include <string>

namespace twoview {

// Invalid input data: malformed files, inconsistent shapes, missing prerequisites.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

// Raised from inside a training loop (non-finite loss, frozen-parameter drift).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twoview
