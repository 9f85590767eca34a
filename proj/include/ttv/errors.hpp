#pragma once

#include <stdexcept>
#include <string>

namespace ttv {

// Error taxonomy shared across the pipeline. Everything derives from
// std::runtime_error so callers can catch coarsely; the distinct types exist
// so tests and the CLI can tell failure classes apart.

// File unreadable / unwritable.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input readable but not in the expected format.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Well-formed input with semantically invalid content.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad call arguments or out-of-bounds configuration values.
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric failure (NaN loss, non-finite parameters) during training.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Regression design problems (rank deficiency, row mismatches).
struct DesignError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A pipeline stage failed; carries the stage name.
struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_name(stage) {}
  std::string stage_name;
};

}  // namespace ttv
