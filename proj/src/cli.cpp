#include "gazesynth/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "gazesynth/calibration.hpp"
#include "gazesynth/camera_model.hpp"
#include "gazesynth/capture_scheduler.hpp"
#include "gazesynth/error.hpp"
#include "gazesynth/gaze_engine.hpp"
#include "gazesynth/pnp.hpp"
#include "gazesynth/scenario.hpp"
#include "gazesynth/serialization.hpp"
#include "gazesynth/service.hpp"

namespace gazesynth {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

Pixel parse_pixel(const std::string& text) {
  std::istringstream in(text);
  Pixel p;
  char comma = 0;
  if (!(in >> p.u >> comma >> p.v) || comma != ',' || !(in >> std::ws).eof()) {
    throw CLI::ValidationError("pixel", "expected 'u,v', got '" + text + "'");
  }
  return p;
}

/// Writes JSON to a file when a path is given, else to out.
void emit(const Json& j, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << dump_stable(j);
  } else {
    write_json_file(path, j);
  }
}

IntrinsicsFile load_intrinsics(const std::string& path) {
  return parse_as<IntrinsicsFile>(read_json_file(path), path);
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaze synthesis engine: camera model, pose, fixation, calibration and capture timing",
               "gazesynth"};
  app.require_subcommand(1);
  std::function<void()> action;

  // intrinsics fit
  auto* intr = app.add_subcommand("intrinsics", "Camera intrinsics")->require_subcommand(1);
  std::vector<std::string> view_files;
  int width = 0, height = 0;
  bool est_skew = false, est_k3 = false, no_dist = false;
  std::string out_path;
  {
    auto* fit = intr->add_subcommand("fit", "Fit intrinsics from planar target views (CSV X,Y,Z,u,v)");
    fit->add_option("--views", view_files, "One CSV file per view")->required()->check(CLI::ExistingFile);
    fit->add_option("--width", width, "Image width in pixels")->required();
    fit->add_option("--height", height, "Image height in pixels")->required();
    fit->add_flag("--skew", est_skew, "Estimate skew");
    fit->add_flag("--k3", est_k3, "Estimate the sixth-order radial term");
    fit->add_flag("--no-distortion", no_dist, "Fix all distortion coefficients at zero");
    fit->add_option("--out", out_path, "Output intrinsics file");
    fit->callback([&] {
      action = [&] {
        std::vector<std::vector<Correspondence>> views;
        for (const auto& f : view_files) views.push_back(read_correspondences_csv(f));
        IntrinsicsFitOptions opts;
        opts.estimate_skew = est_skew;
        opts.estimate_k3 = est_k3;
        opts.estimate_distortion = !no_dist;
        const IntrinsicsFit r = fit_intrinsics(views, width, height, opts);
        Json j = IntrinsicsFile{r.intrinsics, r.distortion};
        j["residual_rms"] = r.residual_rms;
        j["iterations"] = r.iterations;
        emit(j, out_path, out);
      };
    });
  }

  // simulate
  std::string scenario_path;
  std::string pairs_path;
  {
    auto* sim = app.add_subcommand("simulate",
                                   "Simulate perceived fixations for a scenario's training grid");
    sim->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", pairs_path, "Pair log to write (JSON lines); stdout if omitted");
    sim->callback([&] {
      action = [&] {
        const Scenario s = scenario_from_json(read_json_file(scenario_path));
        std::mt19937_64 rng(s.seed);
        std::ostringstream lines;
        double t = 0.0;
        for (const Pixel& c : s.training.points()) {
          const PerceptionPair p{c, simulate_perceiver(s.field, c, s.noise_sigma, rng), "simulated",
                                 t++};
          lines << Json(p).dump() << '\n';
        }
        if (pairs_path.empty()) {
          out << lines.str();
        } else {
          std::ofstream f(pairs_path, std::ios::trunc);
          if (!f) fail(ErrorCode::IoError, "cannot write " + pairs_path);
          f << lines.str();
        }
      };
    });
  }

  // calib record|fit|validate|apply
  auto* calib = app.add_subcommand("calib", "Perception calibration")->require_subcommand(1);
  std::string commanded_s, perceived_s, observer = "cli", model_path, config_path;
  std::vector<double> bounds{1440.0, 1080.0};
  std::vector<std::string> pixels;
  int folds = 5;
  std::optional<int> max_degree;
  std::optional<double> penalty;
  std::optional<std::size_t> min_pairs;
  std::optional<std::string> avatar;
  auto fit_config = [&] {
    CorrectionConfig c;
    if (!config_path.empty()) c = parse_as<CorrectionConfig>(read_json_file(config_path), config_path);
    if (max_degree) c.max_degree = *max_degree;
    if (penalty) c.selection_penalty = *penalty;
    if (min_pairs) c.min_pairs = *min_pairs;
    if (avatar) c.avatar_id = *avatar;
    return c;
  };
  auto add_fit_options = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "Fit configuration JSON")->check(CLI::ExistingFile);
    sc->add_option("--max-degree", max_degree, "Highest monomial degree (0..3)");
    sc->add_option("--penalty", penalty, "Squared-pixel reduction required per added term");
    sc->add_option("--min-pairs", min_pairs, "Minimum number of pairs");
    sc->add_option("--avatar", avatar, "Avatar identifier stored in the model");
  };
  {
    auto* rec = calib->add_subcommand("record", "Append one perception pair to a log");
    rec->add_option("--pairs", pairs_path, "Pair log (JSON lines)")->required();
    rec->add_option("--commanded", commanded_s, "Commanded point u,v")->required();
    rec->add_option("--perceived", perceived_s, "Perceived point u,v")->required();
    rec->add_option("--observer", observer, "Observer identifier");
    rec->add_option("--bounds", bounds, "Image-plane width and height in pixels")
        ->expected(2)
        ->delimiter(',');
    rec->callback([&] {
      action = [&] {
        CalibrationSession session =
            CalibrationSession::load(pairs_path, PlaneBounds{bounds[0], bounds[1]});
        const PerceptionPair& p =
            session.record_pair(parse_pixel(commanded_s), parse_pixel(perceived_s), observer);
        Json j = p;
        j["pair_count"] = session.pairs().size();
        out << dump_stable(j);
      };
    });

    auto* fit = calib->add_subcommand("fit", "Fit a correction model to a pair log");
    fit->add_option("--pairs", pairs_path, "Pair log (JSON lines)")->required();
    fit->add_option("--out", out_path, "Model file to write; stdout if omitted");
    add_fit_options(fit);
    fit->callback([&] {
      action = [&] {
        const auto pairs = read_pair_log(pairs_path);
        emit(fit_correction(pairs, fit_config()), out_path, out);
      };
    });

    auto* val = calib->add_subcommand("validate", "Residuals and cross-validation of a model");
    val->add_option("--pairs", pairs_path, "Pair log (JSON lines)")->required();
    val->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    val->add_option("--folds", folds, "Cross-validation folds");
    val->add_option("--out", out_path, "Report file; stdout if omitted");
    add_fit_options(val);
    val->callback([&] {
      action = [&] {
        const auto pairs = read_pair_log(pairs_path);
        const auto model = parse_as<CorrectionModel>(read_json_file(model_path), model_path);
        emit(validate_correction(pairs, model, fit_config(), folds), out_path, out);
      };
    });

    auto* apply = calib->add_subcommand("apply", "Correct intended fixation points");
    apply->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    apply->add_option("--pixel", pixels, "Intended point u,v (repeatable)")->required();
    apply->callback([&] {
      action = [&] {
        const auto model = parse_as<CorrectionModel>(read_json_file(model_path), model_path);
        Json arr = Json::array();
        for (const auto& s : pixels) {
          const Pixel p = parse_pixel(s);
          const CorrectedCommand c = apply_correction(model, p);
          arr.push_back({{"pixel", p}, {"command", c.command}, {"extrapolated", c.extrapolated}});
        }
        out << dump_stable(Json{{"commands", arr}});
      };
    });
  }

  // schedule check
  auto* sched = app.add_subcommand("schedule", "Camera capture timing")->require_subcommand(1);
  std::string drive_path;
  CameraTiming timing;
  double horizon = 1000.0;
  {
    auto* chk = sched->add_subcommand("check", "Place exposures and check for interference");
    chk->add_option("--drive", drive_path, "Drive preset")->required()->check(CLI::ExistingFile);
    chk->add_option("--fps", timing.fps, "Camera frame rate")->capture_default_str();
    chk->add_option("--exposure", timing.exposure_ms, "Exposure per frame in ms")->capture_default_str();
    chk->add_flag("--split", timing.allow_split, "Accumulate exposure over several windows");
    chk->add_option("--horizon", horizon, "Simulated duration in ms")->capture_default_str();
    chk->callback([&] {
      action = [&] {
        const auto drive = parse_as<DriveConfig>(read_json_file(drive_path), drive_path);
        const ExposureSchedule s = schedule_exposures(drive, timing, horizon);
        const auto interference = interference_check(s, drive);
        Json j = s;
        j["drive"] = drive;
        j["drive_period_ms"] = drive.period_ms();
        j["transparent_duty"] = drive.transparent_duty();
        j["interference"] = interference;
        j["feasible"] = s.violations.empty() && interference.empty();
        out << dump_stable(j);
      };
    });
  }

  // scenario run
  auto* scen = app.add_subcommand("scenario", "Closed-loop calibration scenarios")->require_subcommand(1);
  {
    auto* run = scen->add_subcommand("run", "Run a scenario and print its report");
    run->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_path, "Report file; stdout if omitted");
    run->callback([&] {
      action = [&] {
        const Json report = run_scenario(scenario_from_json(read_json_file(scenario_path)));
        emit(report, out_path, out);
        if (report.at("status") != "ok") {
          const auto& e = report.at("error");
          fail(ErrorCode::InvalidArgument, "scenario failed at stage " +
                                               report.at("failed_stage").get<std::string>() + ": " +
                                               e.at("code").get<std::string>());
        }
      };
    });
  }

  // serve
  std::uint16_t port = 7878;
  bool use_stdio = false;
  std::string session_dir;
  {
    auto* srv = app.add_subcommand("serve", "Serve the wire protocol");
    auto* port_opt = srv->add_option("--port", port, "TCP port on 127.0.0.1")->capture_default_str();
    srv->add_flag("--stdio", use_stdio, "Use standard input and output")->excludes(port_opt);
    srv->add_option("--session-dir", session_dir, "Session directory (default $GAZE_SESSION_DIR)");
    srv->add_option("--config", config_path, "Service configuration JSON")->check(CLI::ExistingFile);
    srv->callback([&] {
      action = [&] {
        ServiceConfig cfg = ServiceConfig::defaults();
        if (!config_path.empty()) cfg = service_config_from_json(read_json_file(config_path));
        if (session_dir.empty()) {
          if (const char* env = std::getenv("GAZE_SESSION_DIR"); env && *env) session_dir = env;
        }
        if (!session_dir.empty()) cfg.session_dir = session_dir;
        Service service(std::move(cfg));
        if (use_stdio) {
          serve_stream(service, std::cin, out);
          return;
        }
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        serve_tcp(service, port, g_stop, [&](std::uint16_t p) {
          err << "listening on 127.0.0.1:" << p << std::endl;
        });
      };
    });
  }

  // pnp solve
  std::string scene_path, intr_path;
  {
    auto* pnp = app.add_subcommand("pnp", "Pose estimation")->require_subcommand(1);
    auto* solve = pnp->add_subcommand("solve", "Joint pose and object-point estimate for a scene");
    solve->add_option("--scene", scene_path, "Scene file")->required()->check(CLI::ExistingFile);
    solve->add_option("--intrinsics", intr_path, "Intrinsics file (else scene.intrinsics)")
        ->check(CLI::ExistingFile);
    solve->callback([&] {
      action = [&] {
        const Json scene = read_json_file(scene_path);
        IntrinsicsFile cam;
        if (!intr_path.empty()) {
          cam = load_intrinsics(intr_path);
        } else if (scene.contains("intrinsics")) {
          cam = parse_as<IntrinsicsFile>(scene.at("intrinsics"), "scene.intrinsics");
        } else {
          throw CLI::RequiredError("--intrinsics");
        }
        const JointProblem problem = joint_problem_from_json(scene);
        const JointResult r = joint_optimize(problem, cam.intrinsics, cam.distortion);
        Json j = joint_result_to_json(r);
        j["reprojection_rms"] =
            reprojection_error(r.pose, problem.correspondences, cam.intrinsics, cam.distortion);
        out << dump_stable(j);
      };
    });
  }

  // gaze fixate
  std::string rig_path, display_path, pixel_s;
  double plane_f = 500.0;
  double depth = 1000.0;
  bool strict = false;
  {
    auto* gaze = app.add_subcommand("gaze", "Avatar fixation")->require_subcommand(1);
    auto* fx = gaze->add_subcommand("fixate", "Rotate the avatar's eyes toward a camera pixel");
    fx->add_option("--pixel", pixel_s, "Camera pixel u,v")->required();
    fx->add_option("--rig", rig_path, "Rig file")->check(CLI::ExistingFile);
    fx->add_option("--intrinsics", intr_path, "Intrinsics file")->check(CLI::ExistingFile);
    fx->add_option("--display", display_path, "Display spec file")->check(CLI::ExistingFile);
    fx->add_option("--plane-distance", plane_f, "Image plane distance f in mm")->capture_default_str();
    fx->add_option("--depth", depth, "Object depth along the ray in mm")->capture_default_str();
    fx->add_flag("--strict", strict, "Fail instead of clamping at rotation limits");
    fx->callback([&] {
      action = [&] {
        ServiceConfig d = ServiceConfig::defaults();
        const AvatarRig rig = rig_path.empty() ? d.rig : rig_from_json(read_json_file(rig_path));
        const IntrinsicsFile cam = intr_path.empty() ? d.camera : load_intrinsics(intr_path);
        const DisplaySpec disp = display_path.empty()
                                     ? d.display
                                     : parse_as<DisplaySpec>(read_json_file(display_path), display_path);
        const VirtualSceneConfig scene =
            build_scene(rig, disp, cam.intrinsics, cam.distortion, plane_f);
        const FixationCommand cmd = pixel_to_fixation(scene, parse_pixel(pixel_s), FixedDepth{depth});
        const FixationResult res =
            fixate(rig, cmd.target(), strict ? LimitMode::Strict : LimitMode::Clamp);
        Json j = fixation_to_json(rig, cmd, res);
        j["image_plane_mm"] = {scene.image_plane.width, scene.image_plane.height};
        out << dump_stable(j);
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const GazeError& e) {
    err << Json{{"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}}.dump()
        << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << Json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}

}  // namespace gazesynth
