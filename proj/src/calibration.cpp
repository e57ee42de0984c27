#include "gazesynth/calibration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "gazesynth/error.hpp"
#include "gazesynth/serialization.hpp"
#include "gazesynth/simd/kernels.hpp"

namespace gazesynth {

namespace {

double wall_clock_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

std::string describe(const Pixel& p) {
  std::ostringstream os;
  os << "(" << p.u << ", " << p.v << ")";
  return os.str();
}

}  // namespace

CalibrationSession::CalibrationSession(PlaneBounds bounds, std::optional<std::filesystem::path> log,
                                       Clock clock)
    : bounds_(bounds), log_(std::move(log)), clock_(std::move(clock)) {
  require(bounds_.width > 0.0 && bounds_.height > 0.0, ErrorCode::InvalidArgument,
          "plane bounds must be positive");
  if (!clock_) clock_ = wall_clock_seconds;
}

CalibrationSession CalibrationSession::load(const std::filesystem::path& log, PlaneBounds bounds,
                                            Clock clock) {
  CalibrationSession session(bounds, log, std::move(clock));
  if (std::filesystem::exists(log)) session.pairs_ = read_pair_log(log);
  return session;
}

const PerceptionPair& CalibrationSession::record_pair(const Pixel& commanded,
                                                      const Pixel& perceived,
                                                      const std::string& observer_id) {
  if (!bounds_.contains(commanded)) {
    fail(ErrorCode::OutOfBounds, "commanded point " + describe(commanded) + " outside the plane");
  }
  if (!bounds_.contains(perceived)) {
    fail(ErrorCode::OutOfBounds, "perceived point " + describe(perceived) + " outside the plane");
  }
  PerceptionPair pair{commanded, perceived, observer_id, clock_()};
  if (log_) {
    std::ofstream out(*log_, std::ios::app);
    if (!out) fail(ErrorCode::IoError, "cannot append to pair log " + log_->string());
    out << nlohmann::json(pair).dump() << '\n';
    if (!out) fail(ErrorCode::IoError, "write to pair log failed");
  }
  pairs_.push_back(std::move(pair));
  return pairs_.back();
}

std::vector<PerceptionPair> read_pair_log(const std::filesystem::path& log) {
  std::ifstream in(log);
  if (!in) fail(ErrorCode::IoError, "cannot open pair log " + log.string());
  std::vector<PerceptionPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      pairs.push_back(nlohmann::json::parse(line).get<PerceptionPair>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError,
           log.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

std::vector<MonomialTerm> monomial_basis(int max_degree) {
  require(max_degree >= 0 && max_degree <= 3, ErrorCode::InvalidArgument,
          "correction degree must lie in 0..3");
  std::vector<MonomialTerm> terms;
  for (int deg = 0; deg <= max_degree; ++deg) {
    for (int pv = 0; pv <= deg; ++pv) terms.push_back({deg - pv, pv});
  }
  return terms;
}

CorrectionModel CorrectionModel::identity(std::string avatar_id) {
  CorrectionModel m;
  m.avatar_id = std::move(avatar_id);
  m.degree = 1;
  m.terms = {{1, 0}, {0, 1}};
  m.coef_u = {1.0, 0.0};
  m.coef_v = {0.0, 1.0};
  return m;
}

void CorrectionModel::validate() const {
  require(!terms.empty(), ErrorCode::InvalidArgument, "correction model has no terms");
  require(coef_u.size() == terms.size() && coef_v.size() == terms.size(),
          ErrorCode::InvalidArgument, "coefficient count does not match the basis");
  for (const auto& t : terms) {
    require(t.pu >= 0 && t.pv >= 0 && t.pu + t.pv <= 3, ErrorCode::InvalidArgument,
            "correction terms are limited to total degree 3");
  }
  require(std::isfinite(scale) && scale > 0.0 && std::isfinite(center_u) &&
              std::isfinite(center_v),
          ErrorCode::InvalidArgument, "invalid input normalization");
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

double term_value(const MonomialTerm& t, double a, double b) {
  double m = 1.0;
  for (int i = 0; i < t.pu; ++i) m *= a;
  for (int i = 0; i < t.pv; ++i) m *= b;
  return m;
}

struct LsFit {
  Eigen::VectorXd coef_u;
  Eigen::VectorXd coef_v;
  double sse = 0.0;
  bool full_rank = false;
};

LsFit least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& yu, const Eigen::VectorXd& yv) {
  LsFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  fit.full_rank = qr.rank() == A.cols();
  if (!fit.full_rank) return fit;
  fit.coef_u = qr.solve(yu);
  fit.coef_v = qr.solve(yv);
  fit.sse = (A * fit.coef_u - yu).squaredNorm() + (A * fit.coef_v - yv).squaredNorm();
  return fit;
}

Eigen::MatrixXd design(const std::vector<Vec2>& inputs, const std::vector<MonomialTerm>& terms) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(inputs.size()),
                    static_cast<Eigen::Index>(terms.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < terms.size(); ++k) {
      A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          term_value(terms[k], inputs[i].x(), inputs[i].y());
    }
  }
  return A;
}

double cross(const Pixel& o, const Pixel& a, const Pixel& b) {
  return (a.u - o.u) * (b.v - o.v) - (a.v - o.v) * (b.u - o.u);
}

}  // namespace

std::vector<Pixel> convex_hull(std::vector<Pixel> pts) {
  std::sort(pts.begin(), pts.end(),
            [](const Pixel& a, const Pixel& b) { return a.u < b.u || (a.u == b.u && a.v < b.v); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Pixel> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0.0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

bool point_in_hull(std::span<const Pixel> hull, const Pixel& p, double tolerance) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Pixel& a = hull[i];
    const Pixel& b = hull[(i + 1) % hull.size()];
    const double edge = std::hypot(b.u - a.u, b.v - a.v);
    if (cross(a, b, p) < -tolerance * std::max(edge, 1.0)) return false;
  }
  return true;
}

CorrectionModel fit_correction(std::span<const PerceptionPair> pairs,
                               const CorrectionConfig& config) {
  if (pairs.size() < std::max<std::size_t>(config.min_pairs, 1)) {
    fail(ErrorCode::InsufficientPairs, "need at least " + std::to_string(config.min_pairs) +
                                           " pairs, got " + std::to_string(pairs.size()));
  }
  require(config.selection_penalty >= 0.0 && std::isfinite(config.selection_penalty),
          ErrorCode::InvalidArgument, "selection penalty must be nonnegative");
  const std::vector<MonomialTerm> candidates = monomial_basis(config.max_degree);

  const std::size_t n = pairs.size();
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pairs) {
    require(std::isfinite(p.commanded.u) && std::isfinite(p.commanded.v) &&
                std::isfinite(p.perceived.u) && std::isfinite(p.perceived.v),
            ErrorCode::InvalidArgument, "perception pairs must be finite");
    mean += p.perceived.vec();
  }
  mean /= static_cast<double>(n);
  double extent = 0.0;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pairs) {
    const Vec2 d = p.perceived.vec() - mean;
    extent = std::max({extent, std::abs(d.x()), std::abs(d.y())});
    cov += d * d.transpose();
  }
  if (!(extent > 0.0)) fail(ErrorCode::RankDeficient, "all perceived points coincide");
  if (config.max_degree >= 1) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    if (es.eigenvalues()(0) <= 1e-12 * es.eigenvalues()(1)) {
      fail(ErrorCode::RankDeficient, "perceived points are collinear");
    }
  }
  const double scale = 1.0 / extent;

  std::vector<Vec2> inputs(n);
  Eigen::VectorXd yu(static_cast<Eigen::Index>(n)), yv(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = (pairs[i].perceived.vec() - mean) * scale;
    yu(static_cast<Eigen::Index>(i)) = pairs[i].commanded.u;
    yv(static_cast<Eigen::Index>(i)) = pairs[i].commanded.v;
  }

  // Greedy forward selection; the constant term is always present.
  std::vector<std::size_t> selected{0};
  std::vector<MonomialTerm> chosen{candidates[0]};
  LsFit current = least_squares(design(inputs, chosen), yu, yv);
  while (chosen.size() < std::min(candidates.size(), n)) {
    std::optional<std::size_t> best;
    LsFit best_fit;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (std::find(selected.begin(), selected.end(), c) != selected.end()) continue;
      std::vector<MonomialTerm> trial = chosen;
      trial.push_back(candidates[c]);
      LsFit fit = least_squares(design(inputs, trial), yu, yv);
      if (!fit.full_rank) continue;
      // Candidates come in degree order; a later term must be clearly better
      // to displace an earlier one, so exact ties keep the simpler term.
      if (!best || fit.sse < best_fit.sse - 1e-9 * current.sse - 1e-12) {
        best = c;
        best_fit = std::move(fit);
      }
    }
    if (!best || current.sse - best_fit.sse <= config.selection_penalty) break;
    selected.push_back(*best);
    chosen.push_back(candidates[*best]);
    current = std::move(best_fit);
  }

  std::sort(selected.begin(), selected.end());
  CorrectionModel model;
  model.avatar_id = config.avatar_id;
  model.center_u = mean.x();
  model.center_v = mean.y();
  model.scale = scale;
  for (std::size_t c : selected) model.terms.push_back(candidates[c]);
  const LsFit final_fit = least_squares(design(inputs, model.terms), yu, yv);
  if (!final_fit.full_rank) fail(ErrorCode::RankDeficient, "selected basis is rank deficient");
  model.coef_u.assign(final_fit.coef_u.begin(), final_fit.coef_u.end());
  model.coef_v.assign(final_fit.coef_v.begin(), final_fit.coef_v.end());
  model.degree = 0;
  for (const auto& t : model.terms) model.degree = std::max(model.degree, t.pu + t.pv);

  std::vector<Pixel> perceived(n);
  for (std::size_t i = 0; i < n; ++i) perceived[i] = pairs[i].perceived;
  model.hull = convex_hull(std::move(perceived));

  model.fit_stats.pair_count = n;
  model.fit_stats.pre_rms = perception_error(pairs, nullptr);
  model.fit_stats.post_rms = perception_error(pairs, &model);
  return model;
}

void apply_correction_batch(const CorrectionModel& model, std::span<const Pixel> intended,
                            std::span<Pixel> commands) {
  model.validate();
  require(intended.size() == commands.size(), ErrorCode::InvalidArgument,
          "apply_correction_batch: size mismatch");
  const std::size_t n = intended.size();
  std::vector<double> u(n), v(n), ou(n), ov(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = intended[i].u;
    v[i] = intended[i].v;
  }
  std::vector<int> eu, ev;
  for (const auto& t : model.terms) {
    eu.push_back(t.pu);
    ev.push_back(t.pv);
  }
  const simd::PolynomialBasis basis{eu, ev, model.coef_u, model.coef_v,
                                    model.center_u, model.center_v, model.scale};
  simd::evaluate_polynomial(basis, u, v, ou, ov);
  for (std::size_t i = 0; i < n; ++i) commands[i] = {ou[i], ov[i]};
}

CorrectedCommand apply_correction(const CorrectionModel& model, const Pixel& intended) {
  require(std::isfinite(intended.u) && std::isfinite(intended.v), ErrorCode::InvalidArgument,
          "intended point must be finite");
  CorrectedCommand out;
  apply_correction_batch(model, std::span<const Pixel>(&intended, 1),
                         std::span<Pixel>(&out.command, 1));
  out.extrapolated = !model.hull.empty() && !point_in_hull(model.hull, intended);
  return out;
}

std::vector<Vec2> perception_residuals(std::span<const PerceptionPair> pairs,
                                       const CorrectionModel& model) {
  require(!pairs.empty(), ErrorCode::InvalidArgument, "perception error needs pairs");
  std::vector<Pixel> targets(pairs.size()), commands(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) targets[i] = pairs[i].perceived;
  apply_correction_batch(model, targets, commands);

  std::vector<Vec2> residuals(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Vec2 c = commands[i].vec();
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      const double d = (pairs[j].commanded.vec() - c).squaredNorm();
      if (d < best) {
        best = d;
        nearest = j;
      }
    }
    const Vec2 perceived = c + pairs[nearest].deviation();
    residuals[i] = perceived - targets[i].vec();
  }
  return residuals;
}

double perception_error(std::span<const PerceptionPair> pairs, const CorrectionModel* model) {
  require(!pairs.empty(), ErrorCode::InvalidArgument, "perception error needs pairs");
  double sum = 0.0;
  if (!model) {
    for (const auto& p : pairs) sum += p.deviation().squaredNorm();
  } else {
    for (const Vec2& r : perception_residuals(pairs, *model)) sum += r.squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

CalibrationReport validate_correction(std::span<const PerceptionPair> pairs,
                                      const CorrectionModel& model, const CorrectionConfig& config,
                                      int folds) {
  require(folds >= 2, ErrorCode::InvalidArgument, "cross-validation needs at least 2 folds");
  require(pairs.size() >= 2, ErrorCode::InsufficientPairs, "validation needs at least 2 pairs");
  CalibrationReport report;
  report.pre_rms = perception_error(pairs, nullptr);
  report.residuals = perception_residuals(pairs, model);
  double sum = 0.0;
  for (const Vec2& r : report.residuals) sum += r.squaredNorm();
  report.post_rms = std::sqrt(sum / static_cast<double>(pairs.size()));

  report.folds = std::min<int>(folds, static_cast<int>(pairs.size()));
  CorrectionConfig fold_config = config;
  fold_config.min_pairs = 1;
  double total = 0.0;
  std::size_t count = 0;
  for (int f = 0; f < report.folds; ++f) {
    std::vector<PerceptionPair> train, test;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      (static_cast<int>(i % static_cast<std::size_t>(report.folds)) == f ? test : train)
          .push_back(pairs[i]);
    }
    double fold_sum = 0.0;
    try {
      const CorrectionModel m = fit_correction(train, fold_config);
      for (const auto& p : test) {
        const Pixel c = apply_correction(m, p.perceived).command;
        fold_sum += (c.vec() - p.commanded.vec()).squaredNorm();
      }
    } catch (const GazeError&) {
      report.fold_rms.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    report.fold_rms.push_back(std::sqrt(fold_sum / static_cast<double>(test.size())));
    total += fold_sum;
    count += test.size();
  }
  report.heldout_rms = count > 0 ? std::sqrt(total / static_cast<double>(count))
                                 : std::numeric_limits<double>::quiet_NaN();
  return report;
}

// ---------------------------------------------------------------------------
// Simulated perceiver

void validate_field(const DistortionField& field) {
  std::visit(
      [](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, AffineField>) {
          require(std::isfinite(f.a) && std::isfinite(f.b) && std::isfinite(f.c) &&
                      std::isfinite(f.d) && std::isfinite(f.e) && std::isfinite(f.f),
                  ErrorCode::InvalidArgument, "affine field coefficients must be finite");
        } else if constexpr (std::is_same_v<T, RadialField>) {
          require(std::isfinite(f.k) && f.scale > 0.0, ErrorCode::InvalidArgument,
                  "radial field needs finite k and positive scale");
        } else if constexpr (std::is_same_v<T, GridField>) {
          require(f.nx >= 2 && f.ny >= 2 && f.spacing_u > 0.0 && f.spacing_v > 0.0,
                  ErrorCode::InvalidArgument, "grid field needs at least 2x2 nodes");
          const auto nodes = static_cast<std::size_t>(f.nx) * static_cast<std::size_t>(f.ny);
          require(f.du.size() == nodes && f.dv.size() == nodes, ErrorCode::InvalidArgument,
                  "grid field displacement count must be nx*ny");
        }
      },
      field);
}

Pixel apply_field(const DistortionField& field, const Pixel& p) {
  return std::visit(
      [&](const auto& f) -> Pixel {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, IdentityField>) {
          return p;
        } else if constexpr (std::is_same_v<T, AffineField>) {
          return {f.a * p.u + f.b * p.v + f.c, f.d * p.u + f.e * p.v + f.f};
        } else if constexpr (std::is_same_v<T, RadialField>) {
          const double du = p.u - f.center_u;
          const double dv = p.v - f.center_v;
          const double g = 1.0 + f.k * (du * du + dv * dv) / (f.scale * f.scale);
          return {f.center_u + du * g, f.center_v + dv * g};
        } else {
          const double gx = std::clamp((p.u - f.origin_u) / f.spacing_u, 0.0, f.nx - 1.0);
          const double gy = std::clamp((p.v - f.origin_v) / f.spacing_v, 0.0, f.ny - 1.0);
          const int ix = std::min(static_cast<int>(gx), f.nx - 2);
          const int iy = std::min(static_cast<int>(gy), f.ny - 2);
          const double tx = gx - ix;
          const double ty = gy - iy;
          auto at = [&](const std::vector<double>& d, int x, int y) {
            return d[static_cast<std::size_t>(y) * static_cast<std::size_t>(f.nx) +
                     static_cast<std::size_t>(x)];
          };
          auto lerp = [&](const std::vector<double>& d) {
            const double top = at(d, ix, iy) * (1.0 - tx) + at(d, ix + 1, iy) * tx;
            const double bottom = at(d, ix, iy + 1) * (1.0 - tx) + at(d, ix + 1, iy + 1) * tx;
            return top * (1.0 - ty) + bottom * ty;
          };
          return {p.u + lerp(f.du), p.v + lerp(f.dv)};
        }
      },
      field);
}

Pixel simulate_perceiver(const DistortionField& field, const Pixel& commanded, double noise_sigma,
                         std::mt19937_64& rng) {
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorCode::InvalidArgument,
          "noise sigma must be nonnegative");
  require(std::isfinite(commanded.u) && std::isfinite(commanded.v), ErrorCode::InvalidArgument,
          "commanded point must be finite");
  Pixel out = apply_field(field, commanded);
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    out.u += noise(rng);
    out.v += noise(rng);
  }
  return out;
}

}  // namespace gazesynth
