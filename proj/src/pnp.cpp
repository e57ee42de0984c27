#include "gazesynth/pnp.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gazesynth/error.hpp"
#include "gazesynth/geometry.hpp"
#include "gazesynth/levenberg_marquardt.hpp"
#include "gazesynth/simd/kernels.hpp"

namespace gazesynth {

namespace {

constexpr std::size_t kMinCorrespondences = 6;

Pose pose_from_params(const Eigen::VectorXd& x) {
  Pose p;
  p.rotation = so3_exp(x.segment<3>(0));
  p.translation = x.segment<3>(3);
  return p;
}

Eigen::VectorXd params_from_pose(const Pose& pose, Eigen::Index extra = 0) {
  Eigen::VectorXd x(6 + extra);
  x.segment<3>(0) = so3_log(pose.rotation);
  x.segment<3>(3) = pose.translation;
  return x;
}

Eigen::VectorXd compose_pose_delta(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) {
  Eigen::VectorXd out = x + delta;
  out.segment<3>(0) = so3_log(so3_exp(delta.segment<3>(0)) * so3_exp(x.segment<3>(0)));
  return out;
}

void validate_correspondences(std::span<const Correspondence> corr) {
  for (const auto& c : corr) {
    require(c.world.allFinite() && std::isfinite(c.image.u) && std::isfinite(c.image.v),
            ErrorCode::InvalidArgument, "non-finite correspondence");
  }
}

// Pose from a homography between plane coordinates and normalized image points.
Pose planar_initialization(std::span<const Correspondence> corr, std::span<const Vec2> normalized,
                           const Vec3& mean, const Eigen::Matrix3d& basis) {
  const auto n = static_cast<Eigen::Index>(corr.size());
  std::vector<Vec2> plane(corr.size());
  double scale = 0.0;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Vec3 q = basis.transpose() * (corr[i].world - mean);
    plane[i] = q.head<2>();
    scale += plane[i].norm();
  }
  scale = static_cast<double>(n) / scale;

  Eigen::MatrixXd A(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 s = plane[static_cast<std::size_t>(i)] * scale;
    const Vec2 d = normalized[static_cast<std::size_t>(i)];
    A.row(2 * i) << s.x(), s.y(), 1.0, 0.0, 0.0, 0.0, -d.x() * s.x(), -d.x() * s.y(), -d.x();
    A.row(2 * i + 1) << 0.0, 0.0, 0.0, s.x(), s.y(), 1.0, -d.y() * s.x(), -d.y() * s.y(), -d.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d H;
  H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  S(0, 0) = S(1, 1) = scale;
  H = H * S;

  double lambda = 2.0 / (H.col(0).norm() + H.col(1).norm());
  if (H(2, 2) * lambda < 0.0) lambda = -lambda;
  Eigen::Matrix3d R;
  R.col(0) = H.col(0) * lambda;
  R.col(1) = H.col(1) * lambda;
  R.col(2) = R.col(0).cross(R.col(1));
  Eigen::JacobiSVD<Eigen::Matrix3d> rs(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  R = rs.matrixU() * rs.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Eigen::Matrix3d U = rs.matrixU();
    U.col(2) *= -1.0;
    R = U * rs.matrixV().transpose();
  }
  const Vec3 t_plane = H.col(2) * lambda;

  Pose pose;
  const Eigen::Matrix3d R_world = R * basis.transpose();
  pose.rotation = Eigen::Quaterniond(R_world).normalized();
  pose.translation = t_plane - R_world * mean;
  return pose;
}

Pose dlt_initialization(std::span<const Correspondence> corr, std::span<const Vec2> normalized,
                        const Vec3& mean, double scale) {
  const auto n = static_cast<Eigen::Index>(corr.size());
  Eigen::MatrixXd A(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 X = (corr[static_cast<std::size_t>(i)].world - mean) / scale;
    const Vec2 d = normalized[static_cast<std::size_t>(i)];
    Eigen::Matrix<double, 1, 4> Xh(X.x(), X.y(), X.z(), 1.0);
    A.row(2 * i) << Xh, Eigen::Matrix<double, 1, 4>::Zero(), -d.x() * Xh;
    A.row(2 * i + 1) << Eigen::Matrix<double, 1, 4>::Zero(), Xh, -d.y() * Xh;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> P;
  P << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);
  Eigen::Matrix3d M = P.leftCols<3>();
  Vec3 p4 = P.col(3);
  if (M.determinant() < 0.0) {
    M = -M;
    p4 = -p4;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> ms(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d R = ms.matrixU() * ms.matrixV().transpose();
  const double lambda = ms.singularValues().mean();
  const Vec3 t_norm = p4 / lambda;

  Pose pose;
  pose.rotation = Eigen::Quaterniond(R).normalized();
  pose.translation = scale * t_norm - R * mean;
  return pose;
}

class PnpProblem {
 public:
  PnpProblem(std::span<const Correspondence> corr, const CameraIntrinsics& intr,
             const DistortionCoefficients& dist)
      : corr_(corr), intr_(intr), dist_(dist) {}

  bool evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const Pose pose = pose_from_params(x);
    const Eigen::Matrix3d R = pose.rotation.toRotationMatrix();
    const auto n = static_cast<Eigen::Index>(corr_.size());
    r.resize(2 * n);
    if (J) J->resize(2 * n, 6);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& c = corr_[static_cast<std::size_t>(i)];
      const Vec3 Xr = R * c.world;
      const Vec3 Xc = Xr + pose.translation;
      if (!(Xc.z() > 0.0)) return false;
      const ProjectionJacobian pj = project_with_jacobian(Xc, intr_, dist_);
      r(2 * i) = pj.pixel.u - c.image.u;
      r(2 * i + 1) = pj.pixel.v - c.image.v;
      if (J) {
        J->block<2, 3>(2 * i, 0) = -pj.d_point * skew_matrix(Xr);
        J->block<2, 3>(2 * i, 3) = pj.d_point;
      }
    }
    return r.allFinite();
  }

  Eigen::VectorXd plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) const {
    return compose_pose_delta(x, delta);
  }

 private:
  std::span<const Correspondence> corr_;
  const CameraIntrinsics& intr_;
  const DistortionCoefficients& dist_;
};

}  // namespace

double resolve_depth(const Ray& ray, const DepthPolicy& policy) {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FixedDepth>) {
          if (!(p.depth > 0.0) || !std::isfinite(p.depth)) {
            fail(ErrorCode::DepthOutOfBounds, "fixed depth must be positive");
          }
          return p.depth;
        } else if constexpr (std::is_same_v<T, PlaneIntersection>) {
          const double nn = p.normal.norm();
          require(nn > 0.0 && std::isfinite(nn), ErrorCode::InvalidArgument,
                  "plane normal must be nonzero");
          const Vec3 n = p.normal / nn;
          const double denom = n.dot(ray.direction);
          if (std::abs(denom) < 1e-12) {
            fail(ErrorCode::RayParallelToPlane, "ray is parallel to the depth plane");
          }
          const double s = (p.offset / nn - n.dot(ray.origin)) / denom;
          if (!(s > 0.0)) fail(ErrorCode::DepthOutOfBounds, "plane lies behind the ray origin");
          return s;
        } else {
          if (!(p.min_depth <= p.max_depth) || !(p.depth >= p.min_depth) ||
              !(p.depth <= p.max_depth) || !(p.depth > 0.0)) {
            std::ostringstream os;
            os << "prior depth " << p.depth << " outside [" << p.min_depth << ", " << p.max_depth
               << "]";
            fail(ErrorCode::DepthOutOfBounds, os.str());
          }
          return p.depth;
        }
      },
      policy);
}

void JointObjectiveWeights::validate() const {
  const bool ok = pnp >= 0.0 && reproj >= 0.0 && gaze >= 0.0 && std::isfinite(pnp) &&
                  std::isfinite(reproj) && std::isfinite(gaze) &&
                  (pnp > 0.0 || reproj > 0.0 || gaze > 0.0);
  require(ok, ErrorCode::InvalidArgument,
          "objective weights must be nonnegative with at least one positive");
}

PnpResult solve_pnp(std::span<const Correspondence> corr, const CameraIntrinsics& intr,
                    const DistortionCoefficients& dist) {
  intr.validate();
  dist.validate();
  if (corr.size() < kMinCorrespondences) {
    fail(ErrorCode::DegenerateConfiguration,
         "PnP needs at least 6 correspondences, got " + std::to_string(corr.size()));
  }
  validate_correspondences(corr);

  std::vector<Vec2> normalized;
  normalized.reserve(corr.size());
  for (const auto& c : corr) {
    normalized.push_back(undistort_normalized(pixel_to_distorted_normalized(c.image, intr), dist));
  }

  Vec3 mean = Vec3::Zero();
  for (const auto& c : corr) mean += c.world;
  mean /= static_cast<double>(corr.size());
  Eigen::MatrixXd centered(corr.size(), 3);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    centered.row(static_cast<Eigen::Index>(i)) = (corr[i].world - mean).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0)) {
    fail(ErrorCode::DegenerateConfiguration, "world points are collinear or coincident");
  }
  const double scale = sv(0) / std::sqrt(static_cast<double>(corr.size()));

  Pose init;
  if (sv(2) <= 1e-6 * sv(0)) {
    Eigen::Matrix3d basis = svd.matrixV();
    if (basis.determinant() < 0.0) basis.col(2) *= -1.0;
    init = planar_initialization(corr, normalized, mean, basis);
  } else {
    init = dlt_initialization(corr, normalized, mean, scale);
  }

  PnpProblem problem(corr, intr, dist);
  Eigen::VectorXd x = params_from_pose(init);
  const LmSummary summary = levenberg_marquardt(problem, x);
  if (!std::isfinite(summary.final_cost)) {
    fail(ErrorCode::NoConvergence, "PnP refinement failed: points behind the camera at init");
  }
  if (!summary.converged) {
    const auto& h = summary.cost_history;
    const double last = h.size() >= 2 ? (h[h.size() - 2] - h.back()) / h[h.size() - 2] : 0.0;
    if (last > 1e-6) fail(ErrorCode::NoConvergence, "PnP refinement hit the iteration cap");
  }

  PnpResult result;
  result.pose = pose_from_params(x);
  result.residual_rms = std::sqrt(summary.final_cost / static_cast<double>(corr.size()));
  result.iterations = summary.iterations;
  result.cost_history = summary.cost_history;
  return result;
}

double reprojection_error(const Pose& pose, std::span<const Correspondence> corr,
                          const CameraIntrinsics& intr, const DistortionCoefficients& dist) {
  require(!corr.empty(), ErrorCode::InvalidArgument, "reprojection_error needs correspondences");
  validate_correspondences(corr);
  const std::size_t n = corr.size();
  std::vector<double> xs(n), ys(n), zs(n), us(n), vs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = corr[i].world.x();
    ys[i] = corr[i].world.y();
    zs[i] = corr[i].world.z();
  }
  const simd::KernelCamera cam = simd::KernelCamera::from(intr, dist);
  const simd::RigidTransform xf = simd::RigidTransform::from(pose.rotation, pose.translation);
  const std::size_t behind = simd::transform_project(xs, ys, zs, xf, cam, us, vs);
  if (behind > 0) fail(ErrorCode::NonPositiveDepth, "correspondence projects behind the camera");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double du = us[i] - corr[i].image.u;
    const double dv = vs[i] - corr[i].image.v;
    sum += du * du + dv * dv;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

ObjectPointEstimate estimate_object_point(const Pixel& pixel, const Pose& pose,
                                          const CameraIntrinsics& intr,
                                          const DistortionCoefficients& dist,
                                          const DepthPolicy& policy) {
  const Ray ray = pose.world_ray(cast_ray(pixel, intr, dist).direction);
  const double depth = resolve_depth(ray, policy);
  return {ray.point_at(depth), depth, pixel};
}

Vec3 gaze_vector_colocated(const Vec3& object_point, const Vec3& camera_center) {
  const Vec3 d = object_point - camera_center;
  const double n = d.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    fail(ErrorCode::CoincidentPoints, "object point coincides with the camera center");
  }
  return d / n;
}

double gaze_energy(const Vec3& object_point, const Vec3& eye_center, const Vec3& ideal_gaze) {
  const double a = angle_between(gaze_vector_colocated(object_point, eye_center), ideal_gaze);
  return a * a;
}

// ---------------------------------------------------------------------------
// Joint objective

namespace {

// Residual vector whose squared norm is the weighted joint objective.
// Layout: [pose (rotation vector, translation), depth].
class JointCost {
 public:
  JointCost(const JointProblem& problem, const Vec3& ray_camera, const CameraIntrinsics& intr,
            const DistortionCoefficients& dist)
      : p_(problem), ray_camera_(ray_camera), intr_(intr), dist_(dist) {}

  Eigen::Index residual_count() const {
    return 2 * static_cast<Eigen::Index>(p_.correspondences.size()) + 2 + 3;
  }

  bool residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r) const {
    const Pose pose = pose_from_params(x);
    const double s = x(6);
    if (!(s > 0.0)) return false;
    r.resize(residual_count());
    const double wp = std::sqrt(p_.weights.pnp);
    const double wr = std::sqrt(p_.weights.reproj);
    const double wg = std::sqrt(p_.weights.gaze);
    Eigen::Index row = 0;
    for (const auto& c : p_.correspondences) {
      const Vec3 Xc = pose.transform(c.world);
      if (!(Xc.z() > 0.0)) return false;
      const Pixel px = project(Xc, intr_, dist_);
      r(row++) = wp * (px.u - c.image.u);
      r(row++) = wp * (px.v - c.image.v);
    }
    const Ray ray = pose.world_ray(ray_camera_);
    const Vec3 object = ray.point_at(s);
    const Vec3 object_cam = pose.transform(object);
    if (!(object_cam.z() > 0.0)) return false;
    const Pixel px = project(object_cam, intr_, dist_);
    r(row++) = wr * (px.u - p_.target_pixel.u);
    r(row++) = wr * (px.v - p_.target_pixel.v);
    r.segment<3>(row) = wg * gaze_residual(object);
    return r.allFinite();
  }

  // Vector with norm equal to the gaze angle; smooth through zero.
  Vec3 gaze_residual(const Vec3& object) const {
    if (!p_.ideal_gaze) return Vec3::Zero();
    const Vec3 d = object - p_.eye_center;
    const double n = d.norm();
    if (!(n > 0.0)) return Vec3::Zero();
    const Vec3 u = d / n;
    const Vec3 c = u.cross(*p_.ideal_gaze);
    const double sin_a = c.norm();
    const double angle = std::atan2(sin_a, u.dot(*p_.ideal_gaze));
    const double factor = sin_a > 1e-300 ? angle / sin_a : 1.0;
    return factor * c;
  }

  bool evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    if (!residuals(x, r)) return false;
    if (!J) return true;
    J->resize(r.size(), x.size());
    Eigen::VectorXd rp, rm;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      double h;
      if (k < 3) {
        h = 1e-7;
      } else if (k < 6) {
        h = 1e-6 * (std::abs(x(k)) + 1.0);
      } else {
        h = 1e-6 * x(6);
      }
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(x.size());
      delta(k) = h;
      if (!residuals(plus(x, delta), rp) || !residuals(plus(x, -delta), rm)) return false;
      J->col(k) = (rp - rm) / (2.0 * h);
    }
    return true;
  }

  Eigen::VectorXd plus(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) const {
    return compose_pose_delta(x, delta);
  }

 private:
  const JointProblem& p_;
  Vec3 ray_camera_;
  const CameraIntrinsics& intr_;
  const DistortionCoefficients& dist_;
};

// Depth along the camera ray closest to the ideal gaze line, if well defined.
std::optional<double> triangulate_depth(const Ray& ray, const Vec3& eye, const Vec3& gaze) {
  const Vec3 w0 = ray.origin - eye;
  const double b = ray.direction.dot(gaze);
  const double d = ray.direction.dot(w0);
  const double e = gaze.dot(w0);
  const double denom = 1.0 - b * b;
  if (denom < 1e-12) return std::nullopt;
  const double s = (b * e - d) / denom;
  if (!(s > 0.0) || !std::isfinite(s)) return std::nullopt;
  return s;
}

}  // namespace

JointEnergies joint_energies(const JointProblem& problem, const Pose& pose, double depth,
                             const CameraIntrinsics& intr, const DistortionCoefficients& dist) {
  JointEnergies e;
  for (const auto& c : problem.correspondences) {
    const Pixel px = project(pose.transform(c.world), intr, dist);
    e.e_pnp += (px.vec() - c.image.vec()).squaredNorm();
  }
  const Ray ray = pose.world_ray(cast_ray(problem.target_pixel, intr, dist).direction);
  const Vec3 object = ray.point_at(depth);
  const Pixel px = project(pose.transform(object), intr, dist);
  e.e_reproj = (px.vec() - problem.target_pixel.vec()).squaredNorm();
  if (problem.ideal_gaze) e.e_gaze = gaze_energy(object, problem.eye_center, *problem.ideal_gaze);
  return e;
}

JointResult joint_optimize(const JointProblem& problem, const CameraIntrinsics& intr,
                           const DistortionCoefficients& dist) {
  problem.weights.validate();
  require(std::isfinite(problem.target_pixel.u) && std::isfinite(problem.target_pixel.v),
          ErrorCode::InvalidArgument, "target pixel must be finite");
  require(problem.eye_center.allFinite(), ErrorCode::InvalidArgument, "eye center must be finite");
  std::optional<Vec3> ideal;
  if (problem.ideal_gaze) {
    const double n = problem.ideal_gaze->norm();
    require(n > 0.0 && std::isfinite(n), ErrorCode::InvalidArgument, "ideal gaze must be nonzero");
    ideal = *problem.ideal_gaze / n;
  }

  const PnpResult pnp = solve_pnp(problem.correspondences, intr, dist);
  const Vec3 ray_camera = cast_ray(problem.target_pixel, intr, dist).direction;

  JointProblem normalized = problem;
  normalized.ideal_gaze = ideal;

  JointResult result;
  result.pose = pnp.pose;
  const bool gaze_active = ideal.has_value() && problem.weights.gaze > 0.0;
  double depth;
  if (!gaze_active) {
    depth = resolve_depth(pnp.pose.world_ray(ray_camera), problem.fallback_depth);
    result.iterations = pnp.iterations;
  } else {
    const Ray ray = pnp.pose.world_ray(ray_camera);
    double init_depth = 1000.0;
    if (auto s = triangulate_depth(ray, problem.eye_center, *ideal)) init_depth = *s;

    JointCost cost(normalized, ray_camera, intr, dist);
    Eigen::VectorXd x = params_from_pose(pnp.pose, 1);
    x(6) = init_depth;
    const LmSummary summary = levenberg_marquardt(cost, x);
    if (!std::isfinite(summary.final_cost)) {
      fail(ErrorCode::NoConvergence, "joint refinement failed at the initial point");
    }
    result.pose = pose_from_params(x);
    depth = x(6);
    result.iterations = summary.iterations;
    result.objective_history = summary.cost_history;
  }

  const Ray ray = result.pose.world_ray(ray_camera);
  result.object = {ray.point_at(depth), depth, problem.target_pixel};
  const JointEnergies e = joint_energies(normalized, result.pose, depth, intr, dist);
  result.e_pnp = e.e_pnp;
  result.e_reproj = e.e_reproj;
  result.e_gaze = e.e_gaze;
  result.objective_value = problem.weights.pnp * e.e_pnp + problem.weights.reproj * e.e_reproj +
                           problem.weights.gaze * e.e_gaze;
  if (result.objective_history.empty()) result.objective_history.push_back(result.objective_value);
  return result;
}

}  // namespace gazesynth
