#include "dtameta/error.hpp"

namespace dtameta {

std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::schema: return "E_SCHEMA";
    case ErrorCode::value: return "E_VALUE";
    case ErrorCode::empty: return "E_EMPTY";
    case ErrorCode::arm: return "E_ARM";
    case ErrorCode::zero: return "E_ZERO";
    case ErrorCode::singular: return "E_SINGULAR";
    case ErrorCode::nofit: return "E_NOFIT";
    case ErrorCode::constraint: return "E_CONSTRAINT";
    case ErrorCode::degenerate: return "E_DEGENERATE";
    case ErrorCode::mode: return "E_MODE";
    case ErrorCode::small: return "E_SMALL";
    case ErrorCode::logzero: return "E_LOGZERO";
    case ErrorCode::options: return "E_OPTIONS";
  }
  return "E_UNKNOWN";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::schema:
    case ErrorCode::value:
    case ErrorCode::empty:
    case ErrorCode::arm:
    case ErrorCode::zero:
    case ErrorCode::small:
    case ErrorCode::options:
      return true;
    default:
      return false;
  }
}

}  // namespace dtameta
