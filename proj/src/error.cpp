#include "points/error.hpp"

namespace points {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kCountMismatch: return "count-mismatch";
    case ErrorCode::kUnknownKind: return "unknown-kind";
    case ErrorCode::kInvariant: return "invariant";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kBackend: return "backend";
    case ErrorCode::kAuth: return "auth";
    case ErrorCode::kEmptyResponse: return "empty-response";
    case ErrorCode::kRefused: return "refused";
    case ErrorCode::kOversized: return "oversized";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kNameMismatch: return "name-mismatch";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kUnknownStage: return "unknown-stage";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace points
