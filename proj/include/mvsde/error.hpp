#pragma once

#include <stdexcept>
#include <string>

namespace mvsde {

enum class ErrorKind {
  InvalidArgument,
  UnsupportedOrder,
  Unsupported,
  RequiresMollification,
  DegradedAccuracy,
  NoContraction,
  WrongDimension,
  TooLarge,
  Io,
  Inadmissible,
  SimulationFailure
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::UnsupportedOrder: return "unsupported-order";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::RequiresMollification: return "requires-mollification";
    case ErrorKind::DegradedAccuracy: return "degraded-accuracy";
    case ErrorKind::NoContraction: return "no-contraction";
    case ErrorKind::WrongDimension: return "wrong-dimension";
    case ErrorKind::TooLarge: return "too-large";
    case ErrorKind::Io: return "io";
    case ErrorKind::Inadmissible: return "inadmissible";
    case ErrorKind::SimulationFailure: return "simulation-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(ErrorKind::InvalidArgument, msg);
}

}  // namespace mvsde
