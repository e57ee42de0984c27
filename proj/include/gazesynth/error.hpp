#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gazesynth {

enum class ErrorCode {
  InvalidArgument,
  NonPositiveDepth,
  NoConvergence,
  DegenerateViews,
  InsufficientPoints,
  DegenerateConfiguration,
  RayParallelToPlane,
  DepthOutOfBounds,
  CoincidentPoints,
  TargetAtEyeCenter,
  RotationLimitExceeded,
  DegenerateAggregate,
  OutOfBounds,
  InsufficientPairs,
  RankDeficient,
  ParseError,
  IoError,
};

/// Stable snake_case identifier, used on the wire and in CLI output.
std::string_view error_code_name(ErrorCode code) noexcept;

class GazeError : public std::runtime_error {
 public:
  GazeError(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class RotationLimitError : public GazeError {
 public:
  RotationLimitError(std::size_t eye_index, const std::string& message)
      : GazeError(ErrorCode::RotationLimitExceeded, message), eye_index_(eye_index) {}

  std::size_t eye_index() const noexcept { return eye_index_; }

 private:
  std::size_t eye_index_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw GazeError(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace gazesynth
