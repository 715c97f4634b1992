#pragma once

#include <stdexcept>
#include <string>

namespace owr {

/// Broad failure class; the CLI maps these onto exit codes.
enum class ErrorKind {
  kInvalidArgument,  // caller passed something the contract forbids
  kData,             // a dump or input file is malformed or inconsistent
  kIo,               // filesystem trouble
  kNumeric,          // divergence, singular matrices, degenerate populations
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace owr
