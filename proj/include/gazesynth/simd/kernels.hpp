#pragma once

// Batched inner loops with a scalar reference and an AVX2 variant. The AVX2
// code performs the same IEEE operations in the same order as the scalar code
// (no FMA contraction), so both backends produce bit-identical output.

#include <cstddef>
#include <span>
#include <string_view>

#include <Eigen/Geometry>

namespace gazesynth {
struct CameraIntrinsics;
struct DistortionCoefficients;
}  // namespace gazesynth

namespace gazesynth::simd {

enum class Backend { Scalar, Avx2 };

std::string_view backend_name(Backend b) noexcept;

/// True when the CPU supports AVX2 and the library was built with the AVX2 path.
bool avx2_available() noexcept;

/// Backend used by the dispatching overloads. Chosen once from CPU features;
/// GAZESYNTH_SIMD=scalar forces the reference path.
Backend active_backend() noexcept;

/// Overrides the active backend. Requests for an unavailable backend fall back to Scalar.
void set_active_backend(Backend b) noexcept;

struct KernelCamera {
  double fx, fy, cx, cy, skew;
  double k1, k2, k3, p1, p2;

  static KernelCamera from(const CameraIntrinsics& intr, const DistortionCoefficients& dist);
};

/// Row-major rotation matrix and translation.
struct RigidTransform {
  double r[9];
  double t[3];

  static RigidTransform identity();
  static RigidTransform from(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);
};

/// Transforms points by xf and projects them through the distorted pinhole.
/// Points with non-positive camera depth produce NaN outputs and are counted
/// in the return value.
std::size_t transform_project(std::span<const double> x, std::span<const double> y,
                              std::span<const double> z, const RigidTransform& xf,
                              const KernelCamera& cam, std::span<double> u, std::span<double> v);
std::size_t transform_project(Backend backend, std::span<const double> x,
                              std::span<const double> y, std::span<const double> z,
                              const RigidTransform& xf, const KernelCamera& cam,
                              std::span<double> u, std::span<double> v);

/// Bivariate polynomial in normalized coordinates
///   a = (u - center_u) * scale, b = (v - center_v) * scale,
/// out_u = sum_k coef_u[k] * a^exp_u[k] * b^exp_v[k] (and likewise out_v).
/// Exponents are limited to 0..3.
struct PolynomialBasis {
  std::span<const int> exp_u;
  std::span<const int> exp_v;
  std::span<const double> coef_u;
  std::span<const double> coef_v;
  double center_u = 0.0;
  double center_v = 0.0;
  double scale = 1.0;
};

void evaluate_polynomial(const PolynomialBasis& basis, std::span<const double> u,
                         std::span<const double> v, std::span<double> out_u,
                         std::span<double> out_v);
void evaluate_polynomial(Backend backend, const PolynomialBasis& basis, std::span<const double> u,
                         std::span<const double> v, std::span<double> out_u,
                         std::span<double> out_v);

namespace detail {
std::size_t transform_project_scalar(std::size_t n, const double* x, const double* y,
                                     const double* z, const RigidTransform& xf,
                                     const KernelCamera& cam, double* u, double* v);
void evaluate_polynomial_scalar(std::size_t n, const PolynomialBasis& basis, const double* u,
                                const double* v, double* out_u, double* out_v);
#if defined(GAZESYNTH_HAVE_AVX2)
std::size_t transform_project_avx2(std::size_t n, const double* x, const double* y,
                                   const double* z, const RigidTransform& xf,
                                   const KernelCamera& cam, double* u, double* v);
void evaluate_polynomial_avx2(std::size_t n, const PolynomialBasis& basis, const double* u,
                              const double* v, double* out_u, double* out_v);
#endif
}  // namespace detail

}  // namespace gazesynth::simd
