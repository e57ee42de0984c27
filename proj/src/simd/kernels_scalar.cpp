#include <cmath>
#include <limits>

#include "gazesynth/simd/kernels.hpp"
#include "kernel_ops.hpp"

namespace gazesynth::simd::detail {

std::size_t transform_project_scalar(std::size_t n, const double* x, const double* y,
                                     const double* z, const RigidTransform& xf,
                                     const KernelCamera& cam, double* u, double* v) {
  std::size_t behind = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!project_one(x[i], y[i], z[i], xf, cam, u[i], v[i])) ++behind;
  }
  return behind;
}

void evaluate_polynomial_scalar(std::size_t n, const PolynomialBasis& basis, const double* u,
                                const double* v, double* out_u, double* out_v) {
  for (std::size_t i = 0; i < n; ++i) {
    polynomial_one(basis, u[i], v[i], out_u[i], out_v[i]);
  }
}

}  // namespace gazesynth::simd::detail
