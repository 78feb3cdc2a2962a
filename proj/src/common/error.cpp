#include "common/error.h"

namespace dscm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kGraphInvalid: return "graph-invalid";
    case ErrorCode::kUnknownVariable: return "unknown-variable";
    case ErrorCode::kUnsupportedIntervention: return "unsupported-intervention";
    case ErrorCode::kAbductionRange: return "abduction-range";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kUninitializedModel: return "uninitialized-model";
    case ErrorCode::kTrainingDivergence: return "training-divergence";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kEstimation: return "estimation";
    case ErrorCode::kRender: return "render";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace dscm
