#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Geometry>

#include "gazesynth/camera_model.hpp"

namespace gazesynth {

/// World-to-camera rigid transform: X_cam = rotation * X_world + translation.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 transform(const Vec3& world) const { return rotation * world + translation; }
  Vec3 camera_center() const { return -(rotation.conjugate() * translation); }
  /// Ray in the world frame through a camera-frame direction.
  Ray world_ray(const Vec3& camera_direction) const {
    return {camera_center(), rotation.conjugate() * camera_direction};
  }
};

struct FixedDepth {
  double depth = 1000.0;  // mm
};

/// Plane {X : normal . X = offset} in the world frame.
struct PlaneIntersection {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
};

struct DepthPrior {
  double depth = 1000.0;
  double min_depth = 0.0;
  double max_depth = 1e9;
};

using DepthPolicy = std::variant<FixedDepth, PlaneIntersection, DepthPrior>;

/// Depth along a world-frame ray chosen by the policy. Throws
/// RayParallelToPlane or DepthOutOfBounds.
double resolve_depth(const Ray& ray, const DepthPolicy& policy);

struct ObjectPointEstimate {
  Vec3 point = Vec3::Zero();
  double depth = 0.0;
  Pixel source_pixel;
};

struct JointObjectiveWeights {
  double pnp = 1.0;
  double reproj = 1.0;
  double gaze = 1.0;

  void validate() const;
};

struct PnpResult {
  Pose pose;
  double residual_rms = 0.0;  // px
  int iterations = 0;
  /// Sum of squared pixel errors after each accepted refinement step.
  std::vector<double> cost_history;
};

PnpResult solve_pnp(std::span<const Correspondence> correspondences, const CameraIntrinsics& intr,
                    const DistortionCoefficients& dist);

/// Root mean square of per-point Euclidean pixel errors.
double reprojection_error(const Pose& pose, std::span<const Correspondence> correspondences,
                          const CameraIntrinsics& intr, const DistortionCoefficients& dist);

ObjectPointEstimate estimate_object_point(const Pixel& pixel, const Pose& pose,
                                          const CameraIntrinsics& intr,
                                          const DistortionCoefficients& dist,
                                          const DepthPolicy& policy = FixedDepth{});

/// Unit vector from C toward the object. Independent of |X_obj - C|.
Vec3 gaze_vector_colocated(const Vec3& object_point, const Vec3& camera_center);

/// Squared angle (rad^2) between normalize(object_point - eye_center) and the ideal direction.
double gaze_energy(const Vec3& object_point, const Vec3& eye_center, const Vec3& ideal_gaze);

struct JointProblem {
  std::vector<Correspondence> correspondences;
  Pixel target_pixel;
  Vec3 eye_center = Vec3::Zero();
  std::optional<Vec3> ideal_gaze;
  JointObjectiveWeights weights;
  /// Used for the object depth whenever the gaze term is inactive.
  DepthPolicy fallback_depth = FixedDepth{};
};

struct JointResult {
  Pose pose;
  ObjectPointEstimate object;
  double objective_value = 0.0;
  double e_pnp = 0.0;     // px^2
  double e_reproj = 0.0;  // px^2
  double e_gaze = 0.0;    // rad^2
  int iterations = 0;
  std::vector<double> objective_history;
};

/// Minimizes w_pnp*E_PnP + w_reproj*E_reproj + w_gaze*E_gaze over the pose
/// and the depth of the object along the ray through target_pixel.
JointResult joint_optimize(const JointProblem& problem, const CameraIntrinsics& intr,
                           const DistortionCoefficients& dist);

/// The three energy terms for a given pose and object depth.
struct JointEnergies {
  double e_pnp = 0.0;
  double e_reproj = 0.0;
  double e_gaze = 0.0;
};
JointEnergies joint_energies(const JointProblem& problem, const Pose& pose, double depth,
                             const CameraIntrinsics& intr, const DistortionCoefficients& dist);

}  // namespace gazesynth
