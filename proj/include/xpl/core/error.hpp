#pragma once

#include <stdexcept>
#include <string>

namespace xpl {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidState,
  kOracleSizeExceeded,
  kParseError,
  kCheckpointIncompatible,
  kCorruptCheckpoint,
  kIo,
};

const char* to_string(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above so
// the CLI can map it onto an exit status.
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

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace xpl
