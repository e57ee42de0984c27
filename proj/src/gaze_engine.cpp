#include "gazesynth/gaze_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gazesynth/error.hpp"
#include "gazesynth/geometry.hpp"

namespace gazesynth {

namespace {

constexpr double kLimitSlack = 1e-12;

struct EyeFrame {
  Vec3 forward;
  Vec3 lateral;
  Vec3 vertical;
};

EyeFrame eye_frame(const EyeModel& eye) {
  EyeFrame f;
  f.forward = eye.rest_forward;
  Vec3 ref = Vec3::UnitY();
  if (std::abs(ref.dot(f.forward)) > 1.0 - 1e-9) ref = -Vec3::UnitZ();
  f.lateral = ref.cross(f.forward).normalized();
  f.vertical = f.forward.cross(f.lateral);
  return f;
}

}  // namespace

void EyeModel::validate() const {
  require(center.allFinite(), ErrorCode::InvalidArgument, "eye center must be finite");
  require(std::abs(rest_forward.norm() - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
          "eye rest_forward must be a unit vector");
  const double half_pi = std::numbers::pi / 2.0;
  require(yaw_limit > 0.0 && yaw_limit <= half_pi && pitch_limit > 0.0 && pitch_limit <= half_pi,
          ErrorCode::InvalidArgument, "eye rotation limits must lie in (0, pi/2]");
}

AvatarRig::AvatarRig(std::vector<EyeModel> eyes, std::vector<double> weights, HeadPose head)
    : eyes_(std::move(eyes)), weights_(std::move(weights)), head_(head) {
  require(!eyes_.empty(), ErrorCode::InvalidArgument, "rig needs at least one eye");
  for (auto& e : eyes_) {
    e.rest_forward.normalize();
    e.validate();
  }
  if (weights_.empty()) weights_.assign(eyes_.size(), 1.0);
  require(weights_.size() == eyes_.size(), ErrorCode::InvalidArgument,
          "rig needs one weight per eye");
  double sum = 0.0;
  for (double w : weights_) {
    require(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidArgument,
            "eye weights must be nonnegative");
    sum += w;
  }
  require(sum > 0.0, ErrorCode::InvalidArgument, "eye weights must not all be zero");
  for (double& w : weights_) w /= sum;
  const double qn = head_.rotation.norm();
  require(std::isfinite(qn) && qn > 0.0 && head_.translation.allFinite(),
          ErrorCode::InvalidArgument, "invalid head pose");
  head_.rotation.normalize();
}

AvatarRig AvatarRig::two_eye_default() {
  EyeModel left, right;
  left.center = Vec3(-32.0, 0.0, 0.0);
  right.center = Vec3(32.0, 0.0, 0.0);
  return AvatarRig({left, right});
}

AvatarRig AvatarRig::ring(std::size_t n, double radius) {
  std::vector<EyeModel> eyes(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    eyes[i].center = Vec3(radius * std::cos(a), radius * std::sin(a), 0.0);
  }
  return AvatarRig(std::move(eyes));
}

Vec3 AvatarRig::gaze_anchor() const {
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < eyes_.size(); ++i) c += weights_[i] * eyes_[i].center;
  return head_.apply(c);
}

Vec2 eye_yaw_pitch(const EyeModel& eye, const Vec3& d) {
  const EyeFrame f = eye_frame(eye);
  const double fw = d.dot(f.forward);
  const double lat = d.dot(f.lateral);
  const double vert = d.dot(f.vertical);
  return {std::atan2(lat, fw), std::atan2(vert, std::hypot(fw, lat))};
}

FixationResult fixate(const AvatarRig& rig, const Vec3& target, LimitMode mode) {
  require(target.allFinite(), ErrorCode::InvalidArgument, "fixation target must be finite");
  FixationResult out;
  out.rotations.reserve(rig.size());
  const Eigen::Quaterniond head_inv = rig.head().rotation.conjugate();
  // Coincidence is checked up front so it wins over any limit error.
  for (std::size_t i = 0; i < rig.size(); ++i) {
    if (!((target - rig.eye_center_world(i)).norm() > 1e-12)) {
      fail(ErrorCode::TargetAtEyeCenter, "target coincides with eye " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const EyeModel& eye = rig.eyes()[i];
    const Vec3 to_target = target - rig.eye_center_world(i);
    const double dist = to_target.norm();
    Vec3 dir_rig = head_inv * (to_target / dist);

    const Vec2 yp = eye_yaw_pitch(eye, dir_rig);
    const bool exceeds = std::abs(yp.x()) > eye.yaw_limit + kLimitSlack ||
                         std::abs(yp.y()) > eye.pitch_limit + kLimitSlack;
    if (exceeds) {
      if (mode == LimitMode::Strict) {
        std::ostringstream os;
        os << "eye " << i << " needs yaw " << yp.x() << " rad, pitch " << yp.y()
           << " rad, beyond limits (" << eye.yaw_limit << ", " << eye.pitch_limit << ")";
        throw RotationLimitError(i, os.str());
      }
      out.violations.push_back({i, yp.x(), yp.y(), eye.yaw_limit, eye.pitch_limit});
      const double yaw = std::clamp(yp.x(), -eye.yaw_limit, eye.yaw_limit);
      const double pitch = std::clamp(yp.y(), -eye.pitch_limit, eye.pitch_limit);
      const EyeFrame f = eye_frame(eye);
      dir_rig = std::cos(pitch) * (std::sin(yaw) * f.lateral + std::cos(yaw) * f.forward) +
                std::sin(pitch) * f.vertical;
    }

    EyeRotation rot;
    rot.rotation = Eigen::Quaterniond::FromTwoVectors(eye.rest_forward, dir_rig).normalized();
    rot.forward = (rig.head().rotation * (rot.rotation * eye.rest_forward)).normalized();
    out.rotations.push_back(rot);
  }
  return out;
}

Vec3 recognized_gaze(const AvatarRig& rig, const std::vector<EyeRotation>& rotations) {
  require(rotations.size() == rig.size(), ErrorCode::InvalidArgument,
          "need one rotation per eye");
  Vec3 sum = Vec3::Zero();
  for (std::size_t i = 0; i < rig.size(); ++i) sum += rig.weights()[i] * rotations[i].forward;
  const double n = sum.norm();
  if (!(n > 1e-12)) fail(ErrorCode::DegenerateAggregate, "weighted eye directions cancel out");
  return sum / n;
}

FixationCommand fixation_from_vector(const Vec3& direction, double distance, const Vec3& anchor) {
  require(std::abs(direction.norm() - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
          "fixation direction must be a unit vector");
  require(distance > 0.0 && std::isfinite(distance), ErrorCode::InvalidArgument,
          "fixation distance must be positive");
  require(anchor.allFinite(), ErrorCode::InvalidArgument, "anchor must be finite");
  return {direction, distance, anchor};
}

void DisplaySpec::validate() const {
  require(width_mm > 0.0 && height_mm > 0.0 && width_px > 0.0 && height_px > 0.0 &&
              std::isfinite(width_mm) && std::isfinite(height_mm) && std::isfinite(width_px) &&
              std::isfinite(height_px),
          ErrorCode::InvalidArgument, "display size and resolution must be positive");
}

PlaneSize image_plane_size(const DisplaySpec& display, double camera_width_px,
                           double camera_height_px) {
  display.validate();
  require(camera_width_px > 0.0 && camera_height_px > 0.0 && std::isfinite(camera_width_px) &&
              std::isfinite(camera_height_px),
          ErrorCode::InvalidArgument, "camera resolution must be positive");
  return {display.width_mm / display.width_px * camera_width_px,
          display.height_mm / display.height_px * camera_height_px};
}

VirtualSceneConfig build_scene(const AvatarRig& rig, const DisplaySpec& display,
                               const CameraIntrinsics& intr, const DistortionCoefficients& dist,
                               double plane_distance_f) {
  intr.validate();
  dist.validate();
  require(plane_distance_f > 0.0 && std::isfinite(plane_distance_f), ErrorCode::InvalidArgument,
          "plane distance must be positive");
  VirtualSceneConfig s;
  s.plane_distance_f = plane_distance_f;
  s.image_plane = image_plane_size(display, intr.width, intr.height);
  s.virtual_camera = intr;
  s.distortion = dist;
  s.display = display;
  s.avatar = rig;
  s.anchor = rig.gaze_anchor();
  s.virtual_camera_center = s.anchor + plane_distance_f * rig.forward();
  s.virtual_camera_orientation =
      (rig.head().rotation * Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitY())))
          .normalized();
  return s;
}

std::array<Vec3, 4> image_plane_corners(const VirtualSceneConfig& s) {
  const double hw = 0.5 * s.image_plane.width;
  const double hh = 0.5 * s.image_plane.height;
  const double f = s.plane_distance_f;
  return {Vec3(-hw, -hh, f), Vec3(hw, -hh, f), Vec3(hw, hh, f), Vec3(-hw, hh, f)};
}

Vec3 plane_point(const VirtualSceneConfig& s, const Pixel& pixel) {
  const double x = (pixel.u / s.virtual_camera.width - 0.5) * s.image_plane.width;
  const double y = (pixel.v / s.virtual_camera.height - 0.5) * s.image_plane.height;
  return s.anchor + s.avatar.head().rotation * Vec3(x, y, s.plane_distance_f);
}

FixationCommand pixel_to_fixation(const VirtualSceneConfig& s, const Pixel& pixel,
                                  const DepthPolicy& policy) {
  if (!s.virtual_camera.contains(pixel)) {
    std::ostringstream os;
    os << "pixel (" << pixel.u << ", " << pixel.v << ") outside the camera image";
    fail(ErrorCode::OutOfBounds, os.str());
  }
  const Vec3 dir = s.avatar.head().rotation * cast_ray(pixel, s.virtual_camera, s.distortion).direction;
  const double d = resolve_depth(Ray{s.anchor, dir}, policy);
  return {dir, d, s.anchor};
}

}  // namespace gazesynth
