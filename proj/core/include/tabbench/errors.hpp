#pragma once

#include <stdexcept>
#include <string>

namespace tabbench {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or rank violation in a tensor op.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values, domain violations (log of non-positive, etc).
struct ValueError : Error {
  using Error::Error;
};

// Malformed CSV, sidecar, schema or cache contents.
struct DataError : Error {
  using Error::Error;
};

// Fetch failed and no usable cache exists.
struct NetworkError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Training produced a non-finite loss; the trial is aborted.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace tabbench
