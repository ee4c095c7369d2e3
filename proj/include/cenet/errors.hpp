#pragma once

#include <stdexcept>
#include <string>

namespace cenet {

/// File could not be read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed text input; `line` is 1-based, 0 when not applicable.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, int line_number = 0)
      : std::runtime_error(line_number > 0 ? "line " + std::to_string(line_number) + ": " + what : what),
        line(line_number) {}
  int line;
};

/// Well-formed input that violates a data invariant.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stored data failed a checksum or is truncated.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stored data was written by an incompatible format version.
struct IncompatibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cenet
