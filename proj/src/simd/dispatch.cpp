#include <atomic>
#include <cstdlib>
#include <cstring>

#include "gazesynth/camera_model.hpp"
#include "gazesynth/error.hpp"
#include "gazesynth/simd/kernels.hpp"

namespace gazesynth::simd {

namespace {

Backend detect_backend() noexcept {
  if (const char* env = std::getenv("GAZESYNTH_SIMD"); env && std::strcmp(env, "scalar") == 0) {
    return Backend::Scalar;
  }
  return avx2_available() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect_backend()};
  return slot;
}

void check_sizes(std::size_t n, std::initializer_list<std::size_t> sizes) {
  for (std::size_t s : sizes) {
    require(s == n, ErrorCode::InvalidArgument, "kernel input spans differ in length");
  }
}

}  // namespace

std::string_view backend_name(Backend b) noexcept {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_available() noexcept {
#if defined(GAZESYNTH_HAVE_AVX2)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Backend active_backend() noexcept { return backend_slot().load(std::memory_order_relaxed); }

void set_active_backend(Backend b) noexcept {
  if (b == Backend::Avx2 && !avx2_available()) b = Backend::Scalar;
  backend_slot().store(b, std::memory_order_relaxed);
}

KernelCamera KernelCamera::from(const CameraIntrinsics& intr, const DistortionCoefficients& dist) {
  return {intr.fx, intr.fy, intr.cx, intr.cy, intr.skew,
          dist.k1, dist.k2, dist.k3, dist.p1, dist.p2};
}

RigidTransform RigidTransform::identity() {
  return {{1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}};
}

RigidTransform RigidTransform::from(const Eigen::Quaterniond& q, const Eigen::Vector3d& t) {
  const Eigen::Matrix3d R = q.normalized().toRotationMatrix();
  RigidTransform xf;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) xf.r[3 * r + c] = R(r, c);
    xf.t[r] = t(r);
  }
  return xf;
}

std::size_t transform_project(Backend backend, std::span<const double> x,
                              std::span<const double> y, std::span<const double> z,
                              const RigidTransform& xf, const KernelCamera& cam,
                              std::span<double> u, std::span<double> v) {
  const std::size_t n = x.size();
  check_sizes(n, {y.size(), z.size(), u.size(), v.size()});
#if defined(GAZESYNTH_HAVE_AVX2)
  if (backend == Backend::Avx2 && avx2_available()) {
    return detail::transform_project_avx2(n, x.data(), y.data(), z.data(), xf, cam, u.data(),
                                          v.data());
  }
#else
  (void)backend;
#endif
  return detail::transform_project_scalar(n, x.data(), y.data(), z.data(), xf, cam, u.data(),
                                          v.data());
}

std::size_t transform_project(std::span<const double> x, std::span<const double> y,
                              std::span<const double> z, const RigidTransform& xf,
                              const KernelCamera& cam, std::span<double> u, std::span<double> v) {
  return transform_project(active_backend(), x, y, z, xf, cam, u, v);
}

void evaluate_polynomial(Backend backend, const PolynomialBasis& basis, std::span<const double> u,
                         std::span<const double> v, std::span<double> out_u,
                         std::span<double> out_v) {
  const std::size_t n = u.size();
  check_sizes(n, {v.size(), out_u.size(), out_v.size()});
  const std::size_t terms = basis.exp_u.size();
  require(basis.exp_v.size() == terms && basis.coef_u.size() == terms &&
              basis.coef_v.size() == terms,
          ErrorCode::InvalidArgument, "polynomial basis arrays differ in length");
  for (std::size_t k = 0; k < terms; ++k) {
    require(basis.exp_u[k] >= 0 && basis.exp_u[k] <= 3 && basis.exp_v[k] >= 0 &&
                basis.exp_v[k] <= 3,
            ErrorCode::InvalidArgument, "polynomial exponents must lie in 0..3");
  }
#if defined(GAZESYNTH_HAVE_AVX2)
  if (backend == Backend::Avx2 && avx2_available()) {
    detail::evaluate_polynomial_avx2(n, basis, u.data(), v.data(), out_u.data(), out_v.data());
    return;
  }
#else
  (void)backend;
#endif
  detail::evaluate_polynomial_scalar(n, basis, u.data(), v.data(), out_u.data(), out_v.data());
}

void evaluate_polynomial(const PolynomialBasis& basis, std::span<const double> u,
                         std::span<const double> v, std::span<double> out_u,
                         std::span<double> out_v) {
  evaluate_polynomial(active_backend(), basis, u, v, out_u, out_v);
}

}  // namespace gazesynth::simd
