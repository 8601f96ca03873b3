#pragma once

#include <stdexcept>
#include <string>

namespace rlcal {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Point geometry too poor for a rigid fit (collinear or identical points).
/// Callers are expected to reject the offending segment.
struct DegenerateGeometry : Error {
  using Error::Error;
};

/// No data window passed the excitation thresholds.
struct EmptySelection : Error {
  using Error::Error;
};

/// Malformed input file; message carries file and line/column context.
struct ParseError : Error {
  using Error::Error;
};

}  // namespace rlcal
