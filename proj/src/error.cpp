#include "gazesynth/error.hpp"

namespace gazesynth {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::NonPositiveDepth: return "non_positive_depth";
    case ErrorCode::NoConvergence: return "no_convergence";
    case ErrorCode::DegenerateViews: return "degenerate_views";
    case ErrorCode::InsufficientPoints: return "insufficient_points";
    case ErrorCode::DegenerateConfiguration: return "degenerate_configuration";
    case ErrorCode::RayParallelToPlane: return "ray_parallel_to_plane";
    case ErrorCode::DepthOutOfBounds: return "depth_out_of_bounds";
    case ErrorCode::CoincidentPoints: return "coincident_points";
    case ErrorCode::TargetAtEyeCenter: return "target_at_eye_center";
    case ErrorCode::RotationLimitExceeded: return "rotation_limit_exceeded";
    case ErrorCode::DegenerateAggregate: return "degenerate_aggregate";
    case ErrorCode::OutOfBounds: return "out_of_bounds";
    case ErrorCode::InsufficientPairs: return "insufficient_pairs";
    case ErrorCode::RankDeficient: return "rank_deficient";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::IoError: return "io_error";
  }
  return "unknown";
}

}  // namespace gazesynth
