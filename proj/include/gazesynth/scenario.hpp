#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gazesynth/calibration.hpp"
#include "gazesynth/gaze_engine.hpp"
#include "gazesynth/serialization.hpp"

namespace gazesynth {

/// cols x rows points spanning [u_min, u_max] x [v_min, v_max], row-major.
struct GridSpec {
  int cols = 3;
  int rows = 3;
  double u_min = 0.0;
  double u_max = 0.0;
  double v_min = 0.0;
  double v_max = 0.0;

  std::vector<Pixel> points() const;
};

/// Optional physical setup; when present each commanded pixel is also turned
/// into an avatar fixation.
struct ScenarioScene {
  AvatarRig rig = AvatarRig::two_eye_default();
  IntrinsicsFile camera;
  DisplaySpec display;
  double plane_distance_f = 500.0;
  DepthPolicy depth = FixedDepth{};
};

/// Closed-loop calibration run with a simulated perceiver.
struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  DistortionField field = IdentityField{};
  GridSpec training;
  std::optional<GridSpec> holdout;
  double noise_sigma = 0.0;
  CorrectionConfig fit;
  int folds = 5;
  PlaneBounds bounds;
  std::optional<ScenarioScene> scene;
};

Scenario scenario_from_json(const Json& j);
Json scenario_to_json(const Scenario& s);

/// command -> simulated perception -> record -> fit -> validate. Never throws
/// for component failures; the report names the failing stage instead.
Json run_scenario(const Scenario& s);

}  // namespace gazesynth
