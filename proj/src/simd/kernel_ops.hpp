#pragma once

// Per-element reference operations. The AVX2 kernels mirror these statement
// by statement; keep the two in sync.

#include <limits>

#include "gazesynth/simd/kernels.hpp"

namespace gazesynth::simd::detail {

inline bool project_one(double x, double y, double z, const RigidTransform& xf,
                        const KernelCamera& c, double& u, double& v) {
  double xc = xf.r[0] * x;
  xc = xc + xf.r[1] * y;
  xc = xc + xf.r[2] * z;
  xc = xc + xf.t[0];
  double yc = xf.r[3] * x;
  yc = yc + xf.r[4] * y;
  yc = yc + xf.r[5] * z;
  yc = yc + xf.t[1];
  double zc = xf.r[6] * x;
  zc = zc + xf.r[7] * y;
  zc = zc + xf.r[8] * z;
  zc = zc + xf.t[2];
  if (!(zc > 0.0)) {
    u = v = std::numeric_limits<double>::quiet_NaN();
    return false;
  }
  const double xn = xc / zc;
  const double yn = yc / zc;
  const double sx = xn * xn;
  const double sy = yn * yn;
  const double r2 = sx + sy;
  double rad = c.k3 * r2;
  rad = c.k2 + rad;
  rad = rad * r2;
  rad = c.k1 + rad;
  rad = rad * r2;
  rad = 1.0 + rad;
  const double xy = xn * yn;
  const double two_p1 = c.p1 + c.p1;
  const double two_p2 = c.p2 + c.p2;

  double xd = xn * rad;
  xd = xd + two_p1 * xy;
  xd = xd + c.p2 * (r2 + (sx + sx));
  double yd = yn * rad;
  yd = yd + c.p1 * (r2 + (sy + sy));
  yd = yd + two_p2 * xy;

  double uu = c.fx * xd;
  uu = uu + c.skew * yd;
  u = uu + c.cx;
  v = c.fy * yd + c.cy;
  return true;
}

inline void polynomial_one(const PolynomialBasis& basis, double u, double v, double& out_u,
                           double& out_v) {
  const double a = (u - basis.center_u) * basis.scale;
  const double b = (v - basis.center_v) * basis.scale;
  const double a2 = a * a;
  const double b2 = b * b;
  const double apow[4] = {1.0, a, a2, a2 * a};
  const double bpow[4] = {1.0, b, b2, b2 * b};
  double acc_u = 0.0;
  double acc_v = 0.0;
  for (std::size_t k = 0; k < basis.exp_u.size(); ++k) {
    const double m = apow[basis.exp_u[k]] * bpow[basis.exp_v[k]];
    acc_u = acc_u + basis.coef_u[k] * m;
    acc_v = acc_v + basis.coef_v[k] * m;
  }
  out_u = acc_u;
  out_v = acc_v;
}

}  // namespace gazesynth::simd::detail
