#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace gazesynth {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

struct Pixel {
  double u = 0.0;
  double v = 0.0;

  Vec2 vec() const { return {u, v}; }
  static Pixel from(const Vec2& p) { return {p.x(), p.y()}; }
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument if any invariant is broken.
  void validate() const;
  bool contains(const Pixel& p) const {
    return p.u >= 0.0 && p.v >= 0.0 && p.u <= width && p.v <= height;
  }
  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// Brown-Conrady radial-tangential model. Serialized order is k1, k2, p1, p2, k3.
struct DistortionCoefficients {
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const { return k1 == 0.0 && k2 == 0.0 && k3 == 0.0 && p1 == 0.0 && p2 == 0.0; }
  void validate() const;
  friend bool operator==(const DistortionCoefficients&, const DistortionCoefficients&) = default;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 point_at(double s) const { return origin + s * direction; }
};

/// A known 3D point (mm) and where it was observed in the image.
struct Correspondence {
  Vec3 world = Vec3::Zero();
  Pixel image;
};

// Distortion acting on normalized image coordinates (x/z, y/z).
Vec2 distort_normalized(const Vec2& xy, const DistortionCoefficients& dist);
Eigen::Matrix2d distort_normalized_jacobian(const Vec2& xy, const DistortionCoefficients& dist);

/// Inverts distort_normalized. Damped fixed-point iteration (cap 50, tol 1e-8)
/// followed by Newton polishing; throws NoConvergence when the residual stays
/// above 1e-12 in normalized units.
Vec2 undistort_normalized(const Vec2& distorted, const DistortionCoefficients& dist);

Vec2 pixel_to_distorted_normalized(const Pixel& p, const CameraIntrinsics& intr);
Pixel distorted_normalized_to_pixel(const Vec2& xy, const CameraIntrinsics& intr);

Pixel project(const Vec3& point_camera, const CameraIntrinsics& intr,
              const DistortionCoefficients& dist);

/// Parameter order of d_intrinsics: fx, fy, cx, cy, skew, k1, k2, p1, p2, k3.
struct ProjectionJacobian {
  Pixel pixel;
  Eigen::Matrix<double, 2, 3> d_point;
  Eigen::Matrix<double, 2, 10> d_intrinsics;
};

ProjectionJacobian project_with_jacobian(const Vec3& point_camera, const CameraIntrinsics& intr,
                                         const DistortionCoefficients& dist);

/// Maps a distorted pixel to where an ideal pinhole camera would have seen it.
Pixel undistort(const Pixel& pixel, const CameraIntrinsics& intr, const DistortionCoefficients& dist);

/// Ray through the pixel in the camera frame; origin is the optical center.
Ray cast_ray(const Pixel& pixel, const CameraIntrinsics& intr, const DistortionCoefficients& dist);

/// Full horizontal and vertical field of view in radians, ignoring distortion.
Vec2 field_of_view(const CameraIntrinsics& intr);

struct IntrinsicsFit {
  CameraIntrinsics intrinsics;
  DistortionCoefficients distortion;
  double residual_rms = 0.0;  // px, per-point Euclidean
  int iterations = 0;
};

struct IntrinsicsFitOptions {
  bool estimate_skew = false;
  bool estimate_distortion = true;
  bool estimate_k3 = false;
};

/// Planar-target calibration. Every view must have Z == 0 in target
/// coordinates. Closed-form homography initialization, then joint
/// Levenberg-Marquardt refinement of intrinsics, distortion and view poses.
IntrinsicsFit fit_intrinsics(std::span<const std::vector<Correspondence>> views, int width,
                             int height, const IntrinsicsFitOptions& options = {});

}  // namespace gazesynth
