#include "srnr/error.hpp"

namespace srnr {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::InvalidSpec: return "invalid-spec";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::DegenerateIntensity: return "degenerate-intensity";
    case ErrorCode::DegenerateDesign: return "degenerate-design";
    case ErrorCode::UnsupportedFormat: return "unsupported-format";
    case ErrorCode::UnsupportedDatatype: return "unsupported-datatype";
    case ErrorCode::UnsupportedShape: return "unsupported-shape";
    case ErrorCode::Io: return "io";
    case ErrorCode::InvalidTape: return "invalid-tape";
    case ErrorCode::EmptyStream: return "empty-stream";
    case ErrorCode::TrainingDivergence: return "training-divergence";
  }
  return "unknown";
}

}  // namespace srnr
