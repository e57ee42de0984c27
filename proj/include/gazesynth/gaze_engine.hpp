#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Geometry>

#include "gazesynth/camera_model.hpp"
#include "gazesynth/pnp.hpp"

namespace gazesynth {

/// Rig-to-world rigid transform.
struct HeadPose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// One eyeball. Rig frame convention: +X right, +Y down, +Z forward.
struct EyeModel {
  Vec3 center = Vec3::Zero();  // mm
  Vec3 rest_forward = Vec3::UnitZ();
  double yaw_limit = 0.7853981633974483;    // rad, symmetric half-angle
  double pitch_limit = 0.6108652381980153;  // rad

  void validate() const;
};

class AvatarRig {
 public:
  /// Weights are normalized to sum to one; empty weights mean uniform.
  AvatarRig(std::vector<EyeModel> eyes, std::vector<double> weights = {}, HeadPose head = {});

  /// Two eyes, 64 mm apart, facing +Z.
  static AvatarRig two_eye_default();
  /// n eyes evenly spaced on a circle of the given radius in the XY plane, facing +Z.
  static AvatarRig ring(std::size_t n, double radius);

  std::size_t size() const { return eyes_.size(); }
  const std::vector<EyeModel>& eyes() const { return eyes_; }
  const std::vector<double>& weights() const { return weights_; }
  const HeadPose& head() const { return head_; }

  Vec3 eye_center_world(std::size_t i) const { return head_.apply(eyes_[i].center); }
  Vec3 rest_forward_world(std::size_t i) const { return head_.rotation * eyes_[i].rest_forward; }
  /// Weighted centroid of the eye centers in the world frame; the colocated camera sits here.
  Vec3 gaze_anchor() const;
  /// Rig +Z in the world frame.
  Vec3 forward() const { return head_.rotation * Vec3::UnitZ(); }

  AvatarRig with_head(const HeadPose& head) const { return AvatarRig(eyes_, weights_, head); }

 private:
  std::vector<EyeModel> eyes_;
  std::vector<double> weights_;
  HeadPose head_;
};

struct FixationCommand {
  Vec3 direction = Vec3::UnitZ();  // unit, world frame
  double distance = 1000.0;        // mm
  Vec3 anchor = Vec3::Zero();

  Vec3 target() const { return anchor + distance * direction; }
};

struct EyeRotation {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();  // rig frame, shortest arc
  double torsion = 0.0;
  Vec3 forward = Vec3::UnitZ();  // rotated rest_forward, world frame
};

struct LimitViolation {
  std::size_t eye = 0;
  double requested_yaw = 0.0;
  double requested_pitch = 0.0;
  double yaw_limit = 0.0;
  double pitch_limit = 0.0;
};

enum class LimitMode { Strict, Clamp };

struct FixationResult {
  std::vector<EyeRotation> rotations;
  std::vector<LimitViolation> violations;
};

/// Rotates every eye so its forward axis passes through target. Strict mode
/// throws RotationLimitError; clamp mode saturates at the limits and reports.
FixationResult fixate(const AvatarRig& rig, const Vec3& target, LimitMode mode = LimitMode::Strict);

/// Yaw and pitch of a rig-frame direction relative to an eye's rest axis.
Vec2 eye_yaw_pitch(const EyeModel& eye, const Vec3& direction_rig);

/// normalize(sum_i w_i * forward_i).
Vec3 recognized_gaze(const AvatarRig& rig, const std::vector<EyeRotation>& rotations);

FixationCommand fixation_from_vector(const Vec3& direction, double distance, const Vec3& anchor);

struct DisplaySpec {
  double width_mm = 0.0;
  double height_mm = 0.0;
  double width_px = 0.0;
  double height_px = 0.0;

  void validate() const;
};

struct PlaneSize {
  double width = 0.0;   // mm
  double height = 0.0;  // mm
};

/// Physical size of the camera image shown at display pixel pitch:
/// W = (W_d / W_o) * W_i, H = (H_d / H_o) * H_i.
PlaneSize image_plane_size(const DisplaySpec& display, double camera_width_px,
                           double camera_height_px);

struct VirtualSceneConfig {
  double plane_distance_f = 0.0;  // mm
  PlaneSize image_plane;
  CameraIntrinsics virtual_camera;
  DistortionCoefficients distortion;
  DisplaySpec display;
  AvatarRig avatar = AvatarRig::two_eye_default();
  Vec3 anchor = Vec3::Zero();
  Vec3 virtual_camera_center = Vec3::Zero();
  /// Camera-to-world rotation of the virtual camera (looks back at the avatar).
  Eigen::Quaterniond virtual_camera_orientation = Eigen::Quaterniond::Identity();
};

VirtualSceneConfig build_scene(const AvatarRig& rig, const DisplaySpec& display,
                               const CameraIntrinsics& intr, const DistortionCoefficients& dist,
                               double plane_distance_f);

/// Image plane corners in the colocated camera frame (anchor origin, rig axes),
/// ordered top-left, top-right, bottom-right, bottom-left.
std::array<Vec3, 4> image_plane_corners(const VirtualSceneConfig& scene);

/// World-frame point on the image plane where a camera pixel is displayed.
Vec3 plane_point(const VirtualSceneConfig& scene, const Pixel& pixel);

FixationCommand pixel_to_fixation(const VirtualSceneConfig& scene, const Pixel& pixel,
                                  const DepthPolicy& policy = FixedDepth{});

}  // namespace gazesynth
