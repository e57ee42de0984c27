#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gazesynth/camera_model.hpp"

namespace gazesynth {

/// Image-plane extent in pixels; valid points satisfy 0 <= u <= width, 0 <= v <= height.
struct PlaneBounds {
  double width = 1440.0;
  double height = 1080.0;

  bool contains(const Pixel& p) const {
    return std::isfinite(p.u) && std::isfinite(p.v) && p.u >= 0.0 && p.v >= 0.0 &&
           p.u <= width && p.v <= height;
  }
};

struct PerceptionPair {
  Pixel commanded;  // where the avatar was told to look
  Pixel perceived;  // where the observer reported eye contact
  std::string observer_id;
  double timestamp = 0.0;  // seconds

  Vec2 deviation() const { return perceived.vec() - commanded.vec(); }
};

/// Append-only log of perception pairs, optionally mirrored to a JSON-lines file.
class CalibrationSession {
 public:
  using Clock = std::function<double()>;

  explicit CalibrationSession(PlaneBounds bounds, std::optional<std::filesystem::path> log = {},
                              Clock clock = {});

  /// Replays an existing log. Later records are appended to the same file.
  static CalibrationSession load(const std::filesystem::path& log, PlaneBounds bounds,
                                 Clock clock = {});

  /// Throws OutOfBounds when either pixel is outside the plane.
  const PerceptionPair& record_pair(const Pixel& commanded, const Pixel& perceived,
                                    const std::string& observer_id);

  const std::vector<PerceptionPair>& pairs() const { return pairs_; }
  const PlaneBounds& bounds() const { return bounds_; }
  const std::optional<std::filesystem::path>& log_path() const { return log_; }

 private:
  PlaneBounds bounds_;
  std::optional<std::filesystem::path> log_;
  Clock clock_;
  std::vector<PerceptionPair> pairs_;
};

std::vector<PerceptionPair> read_pair_log(const std::filesystem::path& log);

struct MonomialTerm {
  int pu = 0;
  int pv = 0;
  friend bool operator==(const MonomialTerm&, const MonomialTerm&) = default;
};

/// Candidate terms up to the given total degree, in the order
/// 1, u, v, u^2, uv, v^2, u^3, u^2 v, u v^2, v^3.
std::vector<MonomialTerm> monomial_basis(int max_degree);

struct FitStats {
  double pre_rms = 0.0;   // px, raw perception error
  double post_rms = 0.0;  // px, after correction
  std::size_t pair_count = 0;
};

/// Maps an intended image-plane point to the point the avatar must be
/// commanded to fixate. Terms are evaluated on
/// ((u - center_u) * scale, (v - center_v) * scale).
struct CorrectionModel {
  std::string avatar_id = "default";
  int degree = 1;
  std::vector<MonomialTerm> terms;
  std::vector<double> coef_u;
  std::vector<double> coef_v;
  double center_u = 0.0;
  double center_v = 0.0;
  double scale = 1.0;
  FitStats fit_stats;
  /// Convex hull of the training inputs, counter-clockwise.
  std::vector<Pixel> hull;

  static CorrectionModel identity(std::string avatar_id = "default");
  void validate() const;
};

struct CorrectionConfig {
  int max_degree = 3;
  /// Squared-pixel reduction a term must buy to be selected.
  double selection_penalty = 10.0;
  std::size_t min_pairs = 9;
  std::string avatar_id = "default";
};

/// Fits the inverse map perceived -> commanded with greedy forward selection
/// over the monomial basis. Deterministic.
CorrectionModel fit_correction(std::span<const PerceptionPair> pairs,
                               const CorrectionConfig& config = {});

struct CorrectedCommand {
  Pixel command;
  /// Set when the intended point is outside the hull of the training inputs.
  bool extrapolated = false;
};

CorrectedCommand apply_correction(const CorrectionModel& model, const Pixel& intended);
void apply_correction_batch(const CorrectionModel& model, std::span<const Pixel> intended,
                            std::span<Pixel> commands);

/// Without a model: RMS of perceived - commanded. With a model: each pair's
/// perceived point is treated as the intended target, corrected, and pushed
/// through the nearest-neighbor displacement field of the pairs.
double perception_error(std::span<const PerceptionPair> pairs,
                        const CorrectionModel* model = nullptr);
std::vector<Vec2> perception_residuals(std::span<const PerceptionPair> pairs,
                                       const CorrectionModel& model);

struct CalibrationReport {
  double pre_rms = 0.0;
  double post_rms = 0.0;
  std::vector<Vec2> residuals;
  int folds = 0;
  std::vector<double> fold_rms;
  /// Cross-validated RMS of |G(perceived) - commanded| on held-out pairs.
  double heldout_rms = 0.0;
};

CalibrationReport validate_correction(std::span<const PerceptionPair> pairs,
                                      const CorrectionModel& model, const CorrectionConfig& config,
                                      int folds = 5);

bool point_in_hull(std::span<const Pixel> hull, const Pixel& p, double tolerance = 1e-9);
std::vector<Pixel> convex_hull(std::vector<Pixel> points);

// ---------------------------------------------------------------------------
// Simulated perceiver

struct IdentityField {};

/// u' = a u + b v + c, v' = d u + e v + f.
struct AffineField {
  double a = 1.0, b = 0.0, c = 0.0;
  double d = 0.0, e = 1.0, f = 0.0;
};

/// p' = center + (p - center) * (1 + k * |p - center|^2 / scale^2).
struct RadialField {
  double k = 0.0;
  double center_u = 0.0;
  double center_v = 0.0;
  double scale = 1.0;
};

/// Displacements on a regular lattice, bilinearly interpolated and clamped at the edges.
struct GridField {
  double origin_u = 0.0;
  double origin_v = 0.0;
  double spacing_u = 1.0;
  double spacing_v = 1.0;
  int nx = 0;
  int ny = 0;
  std::vector<double> du;  // row-major, ny rows of nx
  std::vector<double> dv;
};

using DistortionField = std::variant<IdentityField, AffineField, RadialField, GridField>;

void validate_field(const DistortionField& field);
Pixel apply_field(const DistortionField& field, const Pixel& p);

/// perceived = field(commanded) + N(0, sigma^2) per axis.
Pixel simulate_perceiver(const DistortionField& field, const Pixel& commanded, double noise_sigma,
                         std::mt19937_64& rng);

}  // namespace gazesynth
