#include "craftlora/error.hpp"

namespace craftlora {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::MarkerMissing: return "MarkerMissing";
    case ErrorKind::MalformedMarkers: return "MalformedMarkers";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::RoutingViolation: return "RoutingViolation";
    case ErrorKind::BadCutoff: return "BadCutoff";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::HostMismatch: return "HostMismatch";
    case ErrorKind::GridIncomplete: return "GridIncomplete";
    case ErrorKind::ModelUntrained: return "ModelUntrained";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NotOrthonormal: return "NotOrthonormal";
    case ErrorKind::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IoError:
    case ErrorKind::CorruptCheckpoint:
    case ErrorKind::HostMismatch:
    case ErrorKind::GridIncomplete:
    case ErrorKind::ModelUntrained:
      return 2;
    case ErrorKind::DegenerateInput:
    case ErrorKind::NotOrthonormal:
    case ErrorKind::NonFinite:
      return 3;
    default:
      return 1;
  }
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

}  // namespace craftlora
