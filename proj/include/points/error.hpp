#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace points {

enum class ErrorCode {
  kIo,
  kParse,
  kCountMismatch,
  kUnknownKind,
  kInvariant,
  kPrecondition,
  kBackend,
  kAuth,
  kEmptyResponse,
  kRefused,
  kOversized,
  kShapeMismatch,
  kNameMismatch,
  kConflict,
  kValidation,
  kNotFound,
  kUnknownStage,
};

std::string_view to_string(ErrorCode code);

// Every library failure surfaces as this type; `code()` lets callers (and the
// HTTP layer) branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace points
