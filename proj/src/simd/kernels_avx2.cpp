#if defined(GAZESYNTH_HAVE_AVX2)

#include <immintrin.h>

#include <limits>

#include "gazesynth/simd/kernels.hpp"
#include "kernel_ops.hpp"

namespace gazesynth::simd::detail {

std::size_t transform_project_avx2(std::size_t n, const double* x, const double* y,
                                   const double* z, const RigidTransform& xf,
                                   const KernelCamera& c, double* u, double* v) {
  const __m256d r0 = _mm256_set1_pd(xf.r[0]), r1 = _mm256_set1_pd(xf.r[1]),
                r2c = _mm256_set1_pd(xf.r[2]), r3 = _mm256_set1_pd(xf.r[3]),
                r4 = _mm256_set1_pd(xf.r[4]), r5 = _mm256_set1_pd(xf.r[5]),
                r6 = _mm256_set1_pd(xf.r[6]), r7 = _mm256_set1_pd(xf.r[7]),
                r8 = _mm256_set1_pd(xf.r[8]);
  const __m256d t0 = _mm256_set1_pd(xf.t[0]), t1 = _mm256_set1_pd(xf.t[1]),
                t2 = _mm256_set1_pd(xf.t[2]);
  const __m256d fx = _mm256_set1_pd(c.fx), fy = _mm256_set1_pd(c.fy), cx = _mm256_set1_pd(c.cx),
                cy = _mm256_set1_pd(c.cy), skew = _mm256_set1_pd(c.skew);
  const __m256d k1 = _mm256_set1_pd(c.k1), k2 = _mm256_set1_pd(c.k2), k3 = _mm256_set1_pd(c.k3);
  const __m256d p1 = _mm256_set1_pd(c.p1), p2 = _mm256_set1_pd(c.p2);
  const __m256d two_p1 = _mm256_set1_pd(c.p1 + c.p1), two_p2 = _mm256_set1_pd(c.p2 + c.p2);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d nan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());

  std::size_t behind = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d X = _mm256_loadu_pd(x + i);
    const __m256d Y = _mm256_loadu_pd(y + i);
    const __m256d Z = _mm256_loadu_pd(z + i);

    __m256d xc = _mm256_mul_pd(r0, X);
    xc = _mm256_add_pd(xc, _mm256_mul_pd(r1, Y));
    xc = _mm256_add_pd(xc, _mm256_mul_pd(r2c, Z));
    xc = _mm256_add_pd(xc, t0);
    __m256d yc = _mm256_mul_pd(r3, X);
    yc = _mm256_add_pd(yc, _mm256_mul_pd(r4, Y));
    yc = _mm256_add_pd(yc, _mm256_mul_pd(r5, Z));
    yc = _mm256_add_pd(yc, t1);
    __m256d zc = _mm256_mul_pd(r6, X);
    zc = _mm256_add_pd(zc, _mm256_mul_pd(r7, Y));
    zc = _mm256_add_pd(zc, _mm256_mul_pd(r8, Z));
    zc = _mm256_add_pd(zc, t2);

    const __m256d front = _mm256_cmp_pd(zc, zero, _CMP_GT_OQ);
    behind += 4 - static_cast<std::size_t>(__builtin_popcount(_mm256_movemask_pd(front)));

    const __m256d xn = _mm256_div_pd(xc, zc);
    const __m256d yn = _mm256_div_pd(yc, zc);
    const __m256d sx = _mm256_mul_pd(xn, xn);
    const __m256d sy = _mm256_mul_pd(yn, yn);
    const __m256d rr = _mm256_add_pd(sx, sy);
    __m256d rad = _mm256_mul_pd(k3, rr);
    rad = _mm256_add_pd(k2, rad);
    rad = _mm256_mul_pd(rad, rr);
    rad = _mm256_add_pd(k1, rad);
    rad = _mm256_mul_pd(rad, rr);
    rad = _mm256_add_pd(one, rad);
    const __m256d xy = _mm256_mul_pd(xn, yn);

    __m256d xd = _mm256_mul_pd(xn, rad);
    xd = _mm256_add_pd(xd, _mm256_mul_pd(two_p1, xy));
    xd = _mm256_add_pd(xd, _mm256_mul_pd(p2, _mm256_add_pd(rr, _mm256_add_pd(sx, sx))));
    __m256d yd = _mm256_mul_pd(yn, rad);
    yd = _mm256_add_pd(yd, _mm256_mul_pd(p1, _mm256_add_pd(rr, _mm256_add_pd(sy, sy))));
    yd = _mm256_add_pd(yd, _mm256_mul_pd(two_p2, xy));

    __m256d uu = _mm256_mul_pd(fx, xd);
    uu = _mm256_add_pd(uu, _mm256_mul_pd(skew, yd));
    uu = _mm256_add_pd(uu, cx);
    const __m256d vv = _mm256_add_pd(_mm256_mul_pd(fy, yd), cy);

    _mm256_storeu_pd(u + i, _mm256_blendv_pd(nan, uu, front));
    _mm256_storeu_pd(v + i, _mm256_blendv_pd(nan, vv, front));
  }
  for (; i < n; ++i) {
    if (!project_one(x[i], y[i], z[i], xf, c, u[i], v[i])) ++behind;
  }
  return behind;
}

void evaluate_polynomial_avx2(std::size_t n, const PolynomialBasis& basis, const double* u,
                              const double* v, double* out_u, double* out_v) {
  const __m256d cu = _mm256_set1_pd(basis.center_u);
  const __m256d cv = _mm256_set1_pd(basis.center_v);
  const __m256d s = _mm256_set1_pd(basis.scale);
  const __m256d one = _mm256_set1_pd(1.0);
  const std::size_t terms = basis.exp_u.size();

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d a = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(u + i), cu), s);
    const __m256d b = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(v + i), cv), s);
    const __m256d a2 = _mm256_mul_pd(a, a);
    const __m256d b2 = _mm256_mul_pd(b, b);
    const __m256d apow[4] = {one, a, a2, _mm256_mul_pd(a2, a)};
    const __m256d bpow[4] = {one, b, b2, _mm256_mul_pd(b2, b)};
    __m256d acc_u = _mm256_setzero_pd();
    __m256d acc_v = _mm256_setzero_pd();
    for (std::size_t k = 0; k < terms; ++k) {
      const __m256d m = _mm256_mul_pd(apow[basis.exp_u[k]], bpow[basis.exp_v[k]]);
      acc_u = _mm256_add_pd(acc_u, _mm256_mul_pd(_mm256_set1_pd(basis.coef_u[k]), m));
      acc_v = _mm256_add_pd(acc_v, _mm256_mul_pd(_mm256_set1_pd(basis.coef_v[k]), m));
    }
    _mm256_storeu_pd(out_u + i, acc_u);
    _mm256_storeu_pd(out_v + i, acc_v);
  }
  for (; i < n; ++i) polynomial_one(basis, u[i], v[i], out_u[i], out_v[i]);
}

}  // namespace gazesynth::simd::detail

#endif  // GAZESYNTH_HAVE_AVX2
