#include "xpl/core/error.hpp"

namespace xpl {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidState: return "invalid-state";
    case ErrorCode::kOracleSizeExceeded: return "oracle-size-exceeded";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kCheckpointIncompatible: return "checkpoint-incompatible";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kIo: return "io-error";
  }
  return "unknown";
}

}  // namespace xpl
