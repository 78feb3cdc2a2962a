#pragma once

#include <stdexcept>
#include <string>

namespace dscm {

// Numeric values are mirrored by dscm_status in include/dscm/dscm.h.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kGraphInvalid = 2,
  kUnknownVariable = 3,
  kUnsupportedIntervention = 4,
  kAbductionRange = 5,
  kDomain = 6,
  kUninitializedModel = 7,
  kTrainingDivergence = 8,
  kIo = 9,
  kConfig = 10,
  kEstimation = 11,
  kRender = 12,
  kInternal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Carries the offending variable so callers (HTTP layer, CLI) can name it.
class VariableError : public Error {
 public:
  VariableError(ErrorCode code, std::string variable, const std::string& message)
      : Error(code, message), variable_(std::move(variable)) {}

  const std::string& variable() const noexcept { return variable_; }

 private:
  std::string variable_;
};

}  // namespace dscm
