/**
 * @file errors.hpp
 * @brief Error kinds raised by the estimation pipeline.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace odeaccel {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  StepSizeUnderflow,
  NonFiniteState,
  UnknownModel,
  SingularLocalDesign,
  SingularNormalMatrix,
  OptimizerDiverged,
  SingularJacobian,
  NonFiniteUpdate,
  AllBandwidthsFailed,
  SingularFisher,
  StudyAborted,
  ParseError
};

[[nodiscard]] inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::StepSizeUnderflow: return "step_size_underflow";
    case ErrorKind::NonFiniteState: return "non_finite_state";
    case ErrorKind::UnknownModel: return "unknown_model";
    case ErrorKind::SingularLocalDesign: return "singular_local_design";
    case ErrorKind::SingularNormalMatrix: return "singular_normal_matrix";
    case ErrorKind::OptimizerDiverged: return "optimizer_diverged";
    case ErrorKind::SingularJacobian: return "singular_jacobian";
    case ErrorKind::NonFiniteUpdate: return "non_finite_update";
    case ErrorKind::AllBandwidthsFailed: return "all_bandwidths_failed";
    case ErrorKind::SingularFisher: return "singular_fisher";
    case ErrorKind::StudyAborted: return "study_aborted";
    case ErrorKind::ParseError: return "parse_error";
  }
  return "unknown";
}

/// Exception carrying a machine-checkable kind next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace odeaccel
