#pragma once

#include <stdexcept>
#include <string>

namespace cqsched {

// Error taxonomy shared by every module.  The CLI maps these onto process
// exit codes (invalid argument -> 2, missing data -> 3, anything else -> 1).

struct InvalidArgumentError : std::runtime_error {
  explicit InvalidArgumentError(const std::string& what) : std::runtime_error(what) {}
};

// A lookup needed data that the given logs / files do not contain.
struct MissingDataError : std::runtime_error {
  explicit MissingDataError(const std::string& what) : std::runtime_error(what) {}
};

// A caller violated a runtime protocol (e.g. submitting a query twice).
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Persisted bytes cannot be parsed back into the expected structure.
struct DataFormatError : std::runtime_error {
  explicit DataFormatError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shapes disagree (checkpoint load, operator arguments, ...).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cqsched
