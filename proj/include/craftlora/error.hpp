#pragma once

#include <stdexcept>
#include <string>

namespace craftlora {

enum class ErrorKind {
  // usage / configuration (exit 1)
  ConfigInvalid,
  MarkerMissing,
  MalformedMarkers,
  OutOfRange,
  ShapeMismatch,
  RoutingViolation,
  BadCutoff,
  EmptyBatch,
  EmptySet,
  // data / corruption (exit 2)
  IoError,
  CorruptCheckpoint,
  HostMismatch,
  GridIncomplete,
  ModelUntrained,
  // numerical failure (exit 3)
  DegenerateInput,
  NotOrthonormal,
  NonFinite,
};

const char* to_string(ErrorKind kind);

/// Exit code contract of the command-line tool: 1 usage/config, 2 data, 3 numerical.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace craftlora
