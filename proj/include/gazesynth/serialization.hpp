#pragma once

// JSON and CSV formats for the engine types. Field layouts follow the file
// formats documented in the README.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gazesynth/calibration.hpp"
#include "gazesynth/camera_model.hpp"
#include "gazesynth/capture_scheduler.hpp"
#include "gazesynth/error.hpp"
#include "gazesynth/gaze_engine.hpp"
#include "gazesynth/pnp.hpp"

namespace gazesynth {

using Json = nlohmann::json;

// Throw ParseError with the offending key in the message.
Vec2 vec2_from_json(const Json& j, std::string_view what);
Vec3 vec3_from_json(const Json& j, std::string_view what);
Json vec_to_json(const Vec2& v);
Json vec_to_json(const Vec3& v);
Json quat_to_json(const Eigen::Quaterniond& q);  // [w, x, y, z]
Eigen::Quaterniond quat_from_json(const Json& j, std::string_view what);

/// Converts through nlohmann's ADL hooks and rethrows format problems as ParseError.
template <class T>
T parse_as(const Json& j, std::string_view what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string(what) + ": " + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with sorted keys and a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);
std::string dump_stable(const Json& j);

// ADL hooks. Pixels are [u, v].
void to_json(Json& j, const Pixel& p);
void from_json(const Json& j, Pixel& p);

struct IntrinsicsFile {
  CameraIntrinsics intrinsics;
  DistortionCoefficients distortion;
};
// {fx, fy, cx, cy, skew, width, height, dist: [k1, k2, p1, p2, k3]}
void to_json(Json& j, const IntrinsicsFile& f);
void from_json(const Json& j, IntrinsicsFile& f);

/// CSV with header X,Y,Z,u,v (column order taken from the header).
std::vector<Correspondence> read_correspondences_csv(const std::filesystem::path& path);
std::vector<Correspondence> parse_correspondences_csv(std::string_view text);

void to_json(Json& j, const Pose& p);
void from_json(const Json& j, Pose& p);
void to_json(Json& j, const HeadPose& p);
void from_json(const Json& j, HeadPose& p);

void to_json(Json& j, const DepthPolicy& p);
void from_json(const Json& j, DepthPolicy& p);

// {eyes: [{center, rest_forward, yaw_limit, pitch_limit}], weights, head_pose}
Json rig_to_json(const AvatarRig& rig);
AvatarRig rig_from_json(const Json& j);

void to_json(Json& j, const DisplaySpec& d);
void from_json(const Json& j, DisplaySpec& d);

/// Fixation, per-eye rotations with yaw/pitch, the recognized gaze and any limit violations.
Json fixation_to_json(const AvatarRig& rig, const FixationCommand& cmd,
                      const FixationResult& result);

// Scene: {correspondences: [{X,Y,Z,u,v}], target_pixel, eye_center, ideal_gaze|null, weights}
JointProblem joint_problem_from_json(const Json& j);
Json joint_result_to_json(const JointResult& r);

void to_json(Json& j, const PerceptionPair& p);
void from_json(const Json& j, PerceptionPair& p);

void to_json(Json& j, const CorrectionModel& m);
void from_json(const Json& j, CorrectionModel& m);
void to_json(Json& j, const CorrectionConfig& c);
void from_json(const Json& j, CorrectionConfig& c);
void to_json(Json& j, const CalibrationReport& r);

// {type: "identity" | "affine" | "radial" | "grid", ...parameters}
void to_json(Json& j, const DistortionField& f);
void from_json(const Json& j, DistortionField& f);

// {cycle: [["visible", ms], ...], field_rate_hz, display_refresh_hz}
void to_json(Json& j, const DriveConfig& d);
void from_json(const Json& j, DriveConfig& d);
void to_json(Json& j, const ExposureSchedule& s);
void to_json(Json& j, const InterferenceViolation& v);

}  // namespace gazesynth
