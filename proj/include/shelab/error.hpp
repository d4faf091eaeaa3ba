#pragma once

#include <stdexcept>
#include <string>

namespace shelab {

enum class ErrorCode {
  invalid_argument,  // precondition on an operation argument
  config,            // configuration schema or invariant violation
  numerical,         // non-finite values, failed factorization, bad fit
  io,
};

/// Exception type used across the library. The C API maps `code()` onto its
/// status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::invalid_argument, what);
}

}  // namespace shelab
