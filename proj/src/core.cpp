#include "flownav/core.hpp"

namespace flownav {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SpecInfeasible: return "SpecInfeasible";
    case ErrorCode::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::AllWeightsZero: return "AllWeightsZero";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SingularInnovation: return "SingularInnovation";
  }
  return "Unknown";
}

}  // namespace flownav
