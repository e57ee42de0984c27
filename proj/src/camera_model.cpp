#include "gazesynth/camera_model.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gazesynth/error.hpp"
#include "gazesynth/geometry.hpp"
#include "gazesynth/levenberg_marquardt.hpp"

namespace gazesynth {

namespace {

constexpr int kUndistortMaxIter = 50;
constexpr double kUndistortTol = 1e-8;
constexpr int kNewtonMaxIter = 10;
constexpr double kUndistortResidualTol = 1e-12;

}  // namespace

void CameraIntrinsics::validate() const {
  const bool finite = std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) &&
                      std::isfinite(cy) && std::isfinite(skew);
  if (!finite || !(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0 || cx < 0.0 ||
      cy < 0.0 || cx > width || cy > height) {
    std::ostringstream os;
    os << "invalid intrinsics fx=" << fx << " fy=" << fy << " cx=" << cx << " cy=" << cy
       << " resolution=" << width << "x" << height;
    fail(ErrorCode::InvalidArgument, os.str());
  }
}

void DistortionCoefficients::validate() const {
  require(std::isfinite(k1) && std::isfinite(k2) && std::isfinite(k3) && std::isfinite(p1) &&
              std::isfinite(p2),
          ErrorCode::InvalidArgument, "distortion coefficients must be finite");
}

Vec2 distort_normalized(const Vec2& xy, const DistortionCoefficients& d) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
  const double xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
  return {xd, yd};
}

Eigen::Matrix2d distort_normalized_jacobian(const Vec2& xy, const DistortionCoefficients& d) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
  const double dradial = d.k1 + r2 * (2.0 * d.k2 + 3.0 * d.k3 * r2);
  Eigen::Matrix2d J;
  J(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * d.p1 * y + 6.0 * d.p2 * x;
  J(0, 1) = 2.0 * x * y * dradial + 2.0 * d.p1 * x + 2.0 * d.p2 * y;
  J(1, 0) = J(0, 1);
  J(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * d.p1 * y + 2.0 * d.p2 * x;
  return J;
}

Vec2 undistort_normalized(const Vec2& distorted, const DistortionCoefficients& d) {
  if (d.is_zero()) return distorted;
  if (!distorted.allFinite()) fail(ErrorCode::InvalidArgument, "undistort: non-finite input");

  auto residual = [&](const Vec2& p) { return (distort_normalized(p, d) - distorted).norm(); };

  Vec2 p = distorted;
  double res = residual(p);
  double damping = 1.0;
  for (int it = 0; it < kUndistortMaxIter && res > 0.0; ++it) {
    const double x = p.x();
    const double y = p.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3));
    const Vec2 tangential(2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
                          d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y);
    if (std::abs(radial) < 1e-12) break;
    const Vec2 target = (distorted - tangential) / radial;
    Vec2 candidate = p + damping * (target - p);
    double cand_res = residual(candidate);
    while (cand_res > res && damping > 1.0 / 64.0) {
      damping *= 0.5;
      candidate = p + damping * (target - p);
      cand_res = residual(candidate);
    }
    const double step = (candidate - p).norm();
    p = candidate;
    res = cand_res;
    if (step < kUndistortTol) break;
  }

  // Newton polishing drives the residual to machine precision; the
  // fixed-point stage alone only guarantees a small step.
  for (int it = 0; it < kNewtonMaxIter && res > 1e-16; ++it) {
    const Eigen::Matrix2d J = distort_normalized_jacobian(p, d);
    if (std::abs(J.determinant()) < 1e-14) break;
    const Vec2 candidate = p - J.inverse() * (distort_normalized(p, d) - distorted);
    const double cand_res = residual(candidate);
    if (!(cand_res < res)) break;
    p = candidate;
    res = cand_res;
  }

  if (!(res <= kUndistortResidualTol * std::max(1.0, distorted.norm()))) {
    std::ostringstream os;
    os << "undistortion did not converge (residual " << res << ")";
    fail(ErrorCode::NoConvergence, os.str());
  }
  return p;
}

Vec2 pixel_to_distorted_normalized(const Pixel& p, const CameraIntrinsics& intr) {
  const double yd = (p.v - intr.cy) / intr.fy;
  const double xd = (p.u - intr.cx - intr.skew * yd) / intr.fx;
  return {xd, yd};
}

Pixel distorted_normalized_to_pixel(const Vec2& xy, const CameraIntrinsics& intr) {
  return {intr.fx * xy.x() + intr.skew * xy.y() + intr.cx, intr.fy * xy.y() + intr.cy};
}

Pixel project(const Vec3& point, const CameraIntrinsics& intr, const DistortionCoefficients& dist) {
  if (!(point.z() > 0.0)) {
    std::ostringstream os;
    os << "cannot project point with depth " << point.z();
    fail(ErrorCode::NonPositiveDepth, os.str());
  }
  const Vec2 xy(point.x() / point.z(), point.y() / point.z());
  return distorted_normalized_to_pixel(distort_normalized(xy, dist), intr);
}

ProjectionJacobian project_with_jacobian(const Vec3& point, const CameraIntrinsics& intr,
                                         const DistortionCoefficients& d) {
  if (!(point.z() > 0.0)) fail(ErrorCode::NonPositiveDepth, "cannot project point behind camera");
  const double iz = 1.0 / point.z();
  const double x = point.x() * iz;
  const double y = point.y() * iz;
  const Vec2 xy(x, y);
  const Vec2 dxy = distort_normalized(xy, d);

  ProjectionJacobian out;
  out.pixel = distorted_normalized_to_pixel(dxy, intr);

  Eigen::Matrix2d K2;
  K2 << intr.fx, intr.skew, 0.0, intr.fy;
  Eigen::Matrix<double, 2, 3> dnorm;
  dnorm << iz, 0.0, -x * iz, 0.0, iz, -y * iz;
  out.d_point = K2 * distort_normalized_jacobian(xy, d) * dnorm;

  const double r2 = x * x + y * y;
  const double r4 = r2 * r2;
  const double r6 = r4 * r2;
  // Rows: d(xd), d(yd) with respect to k1, k2, p1, p2, k3.
  Eigen::Matrix<double, 2, 5> ddist;
  ddist << x * r2, x * r4, 2.0 * x * y, r2 + 2.0 * x * x, x * r6,
           y * r2, y * r4, r2 + 2.0 * y * y, 2.0 * x * y, y * r6;
  out.d_intrinsics.setZero();
  out.d_intrinsics(0, 0) = dxy.x();
  out.d_intrinsics(1, 1) = dxy.y();
  out.d_intrinsics(0, 2) = 1.0;
  out.d_intrinsics(1, 3) = 1.0;
  out.d_intrinsics(0, 4) = dxy.y();
  out.d_intrinsics.block<2, 5>(0, 5) = K2 * ddist;
  return out;
}

Pixel undistort(const Pixel& pixel, const CameraIntrinsics& intr, const DistortionCoefficients& dist) {
  if (!std::isfinite(pixel.u) || !std::isfinite(pixel.v)) {
    fail(ErrorCode::InvalidArgument, "undistort: non-finite pixel");
  }
  if (dist.is_zero()) return pixel;
  const Vec2 xy = undistort_normalized(pixel_to_distorted_normalized(pixel, intr), dist);
  return distorted_normalized_to_pixel(xy, intr);
}

Ray cast_ray(const Pixel& pixel, const CameraIntrinsics& intr, const DistortionCoefficients& dist) {
  if (!std::isfinite(pixel.u) || !std::isfinite(pixel.v)) {
    fail(ErrorCode::InvalidArgument, "cast_ray: non-finite pixel");
  }
  const Vec2 xy = undistort_normalized(pixel_to_distorted_normalized(pixel, intr), dist);
  Ray ray;
  ray.direction = Vec3(xy.x(), xy.y(), 1.0).normalized();
  return ray;
}

Vec2 field_of_view(const CameraIntrinsics& intr) {
  const double h = std::atan2(intr.cx, intr.fx) + std::atan2(intr.width - intr.cx, intr.fx);
  const double v = std::atan2(intr.cy, intr.fy) + std::atan2(intr.height - intr.cy, intr.fy);
  return {h, v};
}

// ---------------------------------------------------------------------------
// Planar-target calibration

namespace {

struct ViewPose {
  Eigen::Quaterniond rotation;
  Vec3 translation;
};

// Normalized DLT homography mapping target (X, Y) to pixels.
Eigen::Matrix3d planar_homography(const std::vector<Correspondence>& view) {
  const auto n = static_cast<Eigen::Index>(view.size());
  Vec2 src_mean = Vec2::Zero(), dst_mean = Vec2::Zero();
  for (const auto& c : view) {
    src_mean += c.world.head<2>();
    dst_mean += c.image.vec();
  }
  src_mean /= static_cast<double>(n);
  dst_mean /= static_cast<double>(n);
  double src_scale = 0.0, dst_scale = 0.0;
  for (const auto& c : view) {
    src_scale += (c.world.head<2>() - src_mean).norm();
    dst_scale += (c.image.vec() - dst_mean).norm();
  }
  src_scale = std::sqrt(2.0) * static_cast<double>(n) / src_scale;
  dst_scale = std::sqrt(2.0) * static_cast<double>(n) / dst_scale;

  Eigen::MatrixXd A(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = view[static_cast<std::size_t>(i)];
    const Vec2 s = (c.world.head<2>() - src_mean) * src_scale;
    const Vec2 d = (c.image.vec() - dst_mean) * dst_scale;
    A.row(2 * i) << s.x(), s.y(), 1.0, 0.0, 0.0, 0.0, -d.x() * s.x(), -d.x() * s.y(), -d.x();
    A.row(2 * i + 1) << 0.0, 0.0, 0.0, s.x(), s.y(), 1.0, -d.y() * s.x(), -d.y() * s.y(), -d.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  Eigen::Matrix3d Ts, Td_inv;
  Ts << src_scale, 0.0, -src_scale * src_mean.x(), 0.0, src_scale, -src_scale * src_mean.y(), 0.0,
      0.0, 1.0;
  Td_inv << 1.0 / dst_scale, 0.0, dst_mean.x(), 0.0, 1.0 / dst_scale, dst_mean.y(), 0.0, 0.0, 1.0;
  return Td_inv * Hn * Ts;
}

Eigen::Matrix<double, 1, 6> zhang_row(const Eigen::Matrix3d& H, int i, int j) {
  const Vec3 hi = H.col(i);
  const Vec3 hj = H.col(j);
  Eigen::Matrix<double, 1, 6> v;
  v << hi(0) * hj(0), hi(0) * hj(1) + hi(1) * hj(0), hi(1) * hj(1), hi(2) * hj(0) + hi(0) * hj(2),
      hi(2) * hj(1) + hi(1) * hj(2), hi(2) * hj(2);
  return v;
}

bool points_collinear(const std::vector<Correspondence>& view) {
  Vec2 mean = Vec2::Zero();
  for (const auto& c : view) mean += c.world.head<2>();
  mean /= static_cast<double>(view.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& c : view) {
    const Vec2 d = c.world.head<2>() - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  return es.eigenvalues()(0) <= 1e-12 * std::max(es.eigenvalues()(1), 1e-300);
}

class IntrinsicsProblem {
 public:
  IntrinsicsProblem(std::span<const std::vector<Correspondence>> views, std::vector<int> active)
      : views_(views), active_(std::move(active)) {
    for (const auto& v : views_) residual_count_ += 2 * static_cast<Eigen::Index>(v.size());
  }

  Eigen::Index intrinsic_count() const { return static_cast<Eigen::Index>(active_.size()); }

  // Layout: active intrinsics, then per view (rotation vector, translation).
  Eigen::VectorXd pack(const std::array<double, 10>& intr, const std::vector<ViewPose>& poses) const {
    Eigen::VectorXd x(intrinsic_count() + 6 * static_cast<Eigen::Index>(poses.size()));
    for (std::size_t i = 0; i < active_.size(); ++i) {
      x(static_cast<Eigen::Index>(i)) = intr[static_cast<std::size_t>(active_[i])];
    }
    for (std::size_t v = 0; v < poses.size(); ++v) {
      const Eigen::Index o = intrinsic_count() + 6 * static_cast<Eigen::Index>(v);
      x.segment<3>(o) = so3_log(poses[v].rotation);
      x.segment<3>(o + 3) = poses[v].translation;
    }
    return x;
  }

  void unpack(const Eigen::VectorXd& x, std::array<double, 10>& intr) const {
    for (std::size_t i = 0; i < active_.size(); ++i) {
      intr[static_cast<std::size_t>(active_[i])] = x(static_cast<Eigen::Index>(i));
    }
  }

  static void to_camera(const std::array<double, 10>& p, CameraIntrinsics& intr,
                        DistortionCoefficients& dist) {
    intr.fx = p[0];
    intr.fy = p[1];
    intr.cx = p[2];
    intr.cy = p[3];
    intr.skew = p[4];
    dist.k1 = p[5];
    dist.k2 = p[6];
    dist.p1 = p[7];
    dist.p2 = p[8];
    dist.k3 = p[9];
  }

  bool evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    std::array<double, 10> p = base_;
    unpack(x, p);
    CameraIntrinsics intr;
    DistortionCoefficients dist;
    to_camera(p, intr, dist);
    if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) return false;

    r.resize(residual_count_);
    if (J) J->setZero(residual_count_, x.size());
    Eigen::Index row = 0;
    for (std::size_t v = 0; v < views_.size(); ++v) {
      const Eigen::Index o = intrinsic_count() + 6 * static_cast<Eigen::Index>(v);
      const Eigen::Matrix3d R = so3_exp(x.segment<3>(o)).toRotationMatrix();
      const Vec3 t = x.segment<3>(o + 3);
      for (const auto& c : views_[v]) {
        const Vec3 Xr = R * c.world;
        const Vec3 Xc = Xr + t;
        if (!(Xc.z() > 0.0)) return false;
        const ProjectionJacobian pj = project_with_jacobian(Xc, intr, dist);
        r(row) = pj.pixel.u - c.image.u;
        r(row + 1) = pj.pixel.v - c.image.v;
        if (J) {
          for (std::size_t i = 0; i < active_.size(); ++i) {
            J->block<2, 1>(row, static_cast<Eigen::Index>(i)) =
                pj.d_intrinsics.col(active_[i]);
          }
          J->block<2, 3>(row, o) = -pj.d_point * skew_matrix(Xr);
          J->block<2, 3>(row, o + 3) = pj.d_point;
        }
        row += 2;
      }
    }
    return r.allFinite();
  }

  Eigen::VectorXd plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) const {
    Eigen::VectorXd out = x + delta;
    for (std::size_t v = 0; v < views_.size(); ++v) {
      const Eigen::Index o = intrinsic_count() + 6 * static_cast<Eigen::Index>(v);
      out.segment<3>(o) = so3_log(so3_exp(delta.segment<3>(o)) * so3_exp(x.segment<3>(o)));
    }
    return out;
  }

  void set_base(const std::array<double, 10>& base) { base_ = base; }

 private:
  std::span<const std::vector<Correspondence>> views_;
  std::vector<int> active_;
  std::array<double, 10> base_{};
  Eigen::Index residual_count_ = 0;
};

}  // namespace

IntrinsicsFit fit_intrinsics(std::span<const std::vector<Correspondence>> views, int width,
                             int height, const IntrinsicsFitOptions& options) {
  require(width > 0 && height > 0, ErrorCode::InvalidArgument, "resolution must be positive");
  if (views.size() < 3) {
    fail(ErrorCode::InsufficientPoints,
         "intrinsics fit needs at least 3 views, got " + std::to_string(views.size()));
  }
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& view = views[i];
    if (view.size() < 4) {
      fail(ErrorCode::InsufficientPoints,
           "view " + std::to_string(i) + " has fewer than 4 correspondences");
    }
    for (const auto& c : view) {
      require(c.world.allFinite() && std::isfinite(c.image.u) && std::isfinite(c.image.v),
              ErrorCode::InvalidArgument, "non-finite correspondence");
      require(std::abs(c.world.z()) <= 1e-9, ErrorCode::InvalidArgument,
              "planar target points must have Z = 0");
    }
    if (points_collinear(view)) {
      fail(ErrorCode::InsufficientPoints, "view " + std::to_string(i) + " points are collinear");
    }
  }

  // Closed-form initialization in a conditioned pixel frame.
  const double s = 2.0 / (width + height);
  Eigen::Matrix3d T;
  T << s, 0.0, -s * 0.5 * width, 0.0, s, -s * 0.5 * height, 0.0, 0.0, 1.0;
  std::vector<Eigen::Matrix3d> homographies;
  Eigen::MatrixXd V(2 * static_cast<Eigen::Index>(views.size()), 6);
  for (std::size_t i = 0; i < views.size(); ++i) {
    Eigen::Matrix3d H = T * planar_homography(views[i]);
    H /= H.norm();
    homographies.push_back(H);
    V.row(2 * static_cast<Eigen::Index>(i)) = zhang_row(H, 0, 1);
    V.row(2 * static_cast<Eigen::Index>(i) + 1) = zhang_row(H, 0, 0) - zhang_row(H, 1, 1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(V, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(4) <= 1e-9 * sv(0)) {
    fail(ErrorCode::DegenerateViews, "views do not constrain the intrinsics (similar orientations)");
  }
  Eigen::Matrix<double, 6, 1> b = svd.matrixV().col(5);
  if (b(0) < 0.0) b = -b;
  const double B11 = b(0), B12 = b(1), B22 = b(2), B13 = b(3), B23 = b(4), B33 = b(5);
  const double den = B11 * B22 - B12 * B12;
  if (!(den > 0.0) || !(B11 > 0.0)) fail(ErrorCode::DegenerateViews, "closed-form solution invalid");
  const double v0 = (B12 * B13 - B11 * B23) / den;
  const double lambda = B33 - (B13 * B13 + v0 * (B12 * B13 - B11 * B23)) / B11;
  if (!(lambda / B11 > 0.0)) fail(ErrorCode::DegenerateViews, "closed-form solution invalid");
  const double alpha = std::sqrt(lambda / B11);
  const double beta = std::sqrt(lambda * B11 / den);
  const double gamma = -B12 * alpha * alpha * beta / lambda;
  const double u0 = gamma * v0 / beta - B13 * alpha * alpha / lambda;

  Eigen::Matrix3d Kn;
  Kn << alpha, options.estimate_skew ? gamma : 0.0, u0, 0.0, beta, v0, 0.0, 0.0, 1.0;
  const Eigen::Matrix3d K = T.inverse() * Kn;
  const Eigen::Matrix3d Kn_inv = Kn.inverse();

  std::vector<ViewPose> poses;
  for (const auto& H : homographies) {
    Vec3 r1 = Kn_inv * H.col(0);
    Vec3 r2 = Kn_inv * H.col(1);
    Vec3 t = Kn_inv * H.col(2);
    double scale = 1.0 / r1.norm();
    if (t.z() * scale < 0.0) scale = -scale;
    r1 *= scale;
    r2 *= scale;
    t *= scale;
    Eigen::Matrix3d R;
    R.col(0) = r1;
    R.col(1) = r2;
    R.col(2) = r1.cross(r2);
    Eigen::JacobiSVD<Eigen::Matrix3d> rs(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    R = rs.matrixU() * rs.matrixV().transpose();
    if (R.determinant() < 0.0) R = -R;
    poses.push_back({Eigen::Quaterniond(R).normalized(), t});
  }

  std::array<double, 10> params{K(0, 0), K(1, 1), K(0, 2), K(1, 2), K(0, 1), 0, 0, 0, 0, 0};
  std::vector<int> active{0, 1, 2, 3};
  if (options.estimate_skew) active.push_back(4);
  if (options.estimate_distortion) {
    active.insert(active.end(), {5, 6, 7, 8});
    if (options.estimate_k3) active.push_back(9);
  }
  IntrinsicsProblem problem(views, active);
  problem.set_base(params);
  Eigen::VectorXd x = problem.pack(params, poses);
  LmOptions lm;
  lm.max_iterations = 200;
  const LmSummary summary = levenberg_marquardt(problem, x, lm);
  if (!std::isfinite(summary.final_cost)) {
    fail(ErrorCode::NoConvergence, "intrinsics refinement diverged");
  }
  problem.unpack(x, params);

  IntrinsicsFit fit;
  fit.intrinsics.width = width;
  fit.intrinsics.height = height;
  IntrinsicsProblem::to_camera(params, fit.intrinsics, fit.distortion);
  std::size_t n_points = 0;
  for (const auto& v : views) n_points += v.size();
  fit.residual_rms = std::sqrt(summary.final_cost / static_cast<double>(n_points));
  fit.iterations = summary.iterations;
  return fit;
}

}  // namespace gazesynth
