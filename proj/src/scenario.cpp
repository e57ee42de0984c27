#include "gazesynth/scenario.hpp"

#include <cmath>
#include <random>

#include "gazesynth/error.hpp"

namespace gazesynth {

std::vector<Pixel> GridSpec::points() const {
  require(cols >= 1 && rows >= 1, ErrorCode::InvalidArgument, "grid needs at least one point");
  auto axis = [](double lo, double hi, int n, int i) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::vector<Pixel> pts;
  pts.reserve(static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      pts.push_back({axis(u_min, u_max, cols, c), axis(v_min, v_max, rows, r)});
    }
  }
  return pts;
}

namespace {

GridSpec grid_from_json(const Json& j) {
  GridSpec g;
  g.cols = j.at("cols").get<int>();
  g.rows = j.at("rows").get<int>();
  const Vec2 u = vec2_from_json(j.at("u"), "grid.u");
  const Vec2 v = vec2_from_json(j.at("v"), "grid.v");
  g.u_min = u.x();
  g.u_max = u.y();
  g.v_min = v.x();
  g.v_max = v.y();
  return g;
}

Json grid_to_json(const GridSpec& g) {
  return Json{{"cols", g.cols},
              {"rows", g.rows},
              {"u", {g.u_min, g.u_max}},
              {"v", {g.v_min, g.v_max}}};
}

double rms(const std::vector<double>& sq) {
  if (sq.empty()) return 0.0;
  double s = 0.0;
  for (double x : sq) s += x;
  return std::sqrt(s / static_cast<double>(sq.size()));
}

}  // namespace

Scenario scenario_from_json(const Json& j) {
  try {
    Scenario s;
    s.name = j.value("name", std::string{});
    s.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("field")) s.field = j.at("field").get<DistortionField>();
    s.training = grid_from_json(j.at("training"));
    if (const auto it = j.find("holdout"); it != j.end() && !it->is_null()) {
      s.holdout = grid_from_json(*it);
    }
    s.noise_sigma = j.value("noise_sigma", 0.0);
    if (j.contains("fit")) s.fit = j.at("fit").get<CorrectionConfig>();
    s.folds = j.value("folds", 5);
    if (const auto it = j.find("scene"); it != j.end() && !it->is_null()) {
      ScenarioScene sc;
      if (it->contains("rig")) sc.rig = rig_from_json(it->at("rig"));
      sc.camera = it->at("intrinsics").get<IntrinsicsFile>();
      sc.display = it->at("display").get<DisplaySpec>();
      sc.plane_distance_f = it->value("plane_distance_f", sc.plane_distance_f);
      if (it->contains("depth")) sc.depth = it->at("depth").get<DepthPolicy>();
      s.bounds = {static_cast<double>(sc.camera.intrinsics.width),
                  static_cast<double>(sc.camera.intrinsics.height)};
      s.scene = std::move(sc);
    }
    if (const auto it = j.find("bounds"); it != j.end() && !it->is_null()) {
      const Vec2 b = vec2_from_json(*it, "bounds");
      s.bounds = {b.x(), b.y()};
    }
    require(s.noise_sigma >= 0.0, ErrorCode::InvalidArgument, "noise_sigma must be nonnegative");
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("scenario: ") + e.what());
  }
}

Json scenario_to_json(const Scenario& s) {
  Json j{{"name", s.name},
         {"seed", s.seed},
         {"field", s.field},
         {"training", grid_to_json(s.training)},
         {"holdout", s.holdout ? grid_to_json(*s.holdout) : Json(nullptr)},
         {"noise_sigma", s.noise_sigma},
         {"fit", s.fit},
         {"folds", s.folds},
         {"bounds", {s.bounds.width, s.bounds.height}}};
  if (s.scene) {
    j["scene"] = Json{{"rig", rig_to_json(s.scene->rig)},
                      {"intrinsics", s.scene->camera},
                      {"display", s.scene->display},
                      {"plane_distance_f", s.scene->plane_distance_f},
                      {"depth", s.scene->depth}};
  }
  return j;
}

Json run_scenario(const Scenario& s) {
  Json report{{"name", s.name}, {"seed", s.seed}, {"noise_sigma", s.noise_sigma}};
  std::string stage = "setup";
  try {
    std::mt19937_64 rng(s.seed);
    const std::vector<Pixel> commanded = s.training.points();

    if (s.scene) {
      stage = "command";
      const auto& sc = *s.scene;
      const VirtualSceneConfig scene = build_scene(sc.rig, sc.display, sc.camera.intrinsics,
                                                   sc.camera.distortion, sc.plane_distance_f);
      std::size_t violations = 0;
      double max_yaw = 0.0;
      for (const Pixel& c : commanded) {
        const FixationCommand cmd = pixel_to_fixation(scene, c, sc.depth);
        const FixationResult res = fixate(sc.rig, cmd.target(), LimitMode::Clamp);
        violations += res.violations.size();
        for (std::size_t i = 0; i < res.rotations.size(); ++i) {
          const EyeModel& eye = sc.rig.eyes()[i];
          const Vec2 yp = eye_yaw_pitch(eye, res.rotations[i].rotation * eye.rest_forward);
          max_yaw = std::max(max_yaw, std::abs(yp.x()));
        }
      }
      report["scene"] = Json{{"image_plane_mm", {scene.image_plane.width, scene.image_plane.height}},
                             {"plane_distance_f", scene.plane_distance_f},
                             {"fixations", commanded.size()},
                             {"limit_violations", violations},
                             {"max_abs_yaw", max_yaw}};
    }

    stage = "perceive";
    validate_field(s.field);
    std::vector<Pixel> perceived;
    perceived.reserve(commanded.size());
    for (const Pixel& c : commanded) {
      perceived.push_back(simulate_perceiver(s.field, c, s.noise_sigma, rng));
    }

    stage = "record";
    double tick = 0.0;
    CalibrationSession session(s.bounds, std::nullopt, [&tick] { return tick++; });
    for (std::size_t i = 0; i < commanded.size(); ++i) {
      session.record_pair(commanded[i], perceived[i], "simulated");
    }

    stage = "fit";
    const CorrectionModel model = fit_correction(session.pairs(), s.fit);
    report["model"] = model;

    stage = "validate";
    const CalibrationReport cv = validate_correction(session.pairs(), model, s.fit, s.folds);
    report["validation"] = cv;
    report["pre_rms"] = cv.pre_rms;
    report["post_rms"] = cv.post_rms;
    report["improvement"] = cv.pre_rms > 0.0 ? 1.0 - cv.post_rms / cv.pre_rms : 0.0;

    if (s.holdout) {
      stage = "holdout";
      // Intended targets are fixations the observer should perceive; compare
      // what the perceiver reports for the uncorrected and corrected commands.
      std::vector<double> pre_sq, post_sq, noisy_sq;
      std::size_t extrapolated = 0;
      for (const Pixel& t : s.holdout->points()) {
        pre_sq.push_back((apply_field(s.field, t).vec() - t.vec()).squaredNorm());
        const CorrectedCommand cmd = apply_correction(model, t);
        extrapolated += cmd.extrapolated ? 1 : 0;
        post_sq.push_back((apply_field(s.field, cmd.command).vec() - t.vec()).squaredNorm());
        const Pixel noisy = simulate_perceiver(s.field, cmd.command, s.noise_sigma, rng);
        noisy_sq.push_back((noisy.vec() - t.vec()).squaredNorm());
      }
      const double pre = rms(pre_sq);
      const double post = rms(post_sq);
      report["heldout"] = Json{{"points", pre_sq.size()},
                               {"pre_rms", pre},
                               {"post_rms", post},
                               {"post_rms_observed", rms(noisy_sq)},
                               {"improvement", pre > 0.0 ? 1.0 - post / pre : 0.0},
                               {"extrapolated", extrapolated}};
    }
    report["status"] = "ok";
  } catch (const GazeError& e) {
    report["status"] = "failed";
    report["failed_stage"] = stage;
    report["error"] = Json{{"code", error_code_name(e.code())}, {"message", e.what()}};
  }
  return report;
}

}  // namespace gazesynth
