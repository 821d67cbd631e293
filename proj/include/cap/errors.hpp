#pragma once

#include <stdexcept>
#include <string>

namespace cap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (model config, run config, vocabulary size).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A weights container or data file could not be read or is malformed.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an interface contract: wrong shapes, wrong hook kind, stacked hooks.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied data: overlapping spans, unknown task, out-of-range segment ranges.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace cap
