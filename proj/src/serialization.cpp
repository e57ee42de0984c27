#include "gazesynth/serialization.hpp"

#include <fstream>
#include <sstream>

namespace gazesynth {

namespace {

template <int N>
Eigen::Matrix<double, N, 1> fixed_vec(const Json& j, std::string_view what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) {
    fail(ErrorCode::ParseError,
         std::string(what) + ": expected an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) {
      fail(ErrorCode::ParseError, std::string(what) + ": non-numeric element");
    }
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

double number_or(const Json& j, const char* key, double fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<double>();
}

const char* state_name(DriveState s) {
  return s == DriveState::Visible ? "visible" : "transparent";
}

}  // namespace

Vec2 vec2_from_json(const Json& j, std::string_view what) { return fixed_vec<2>(j, what); }
Vec3 vec3_from_json(const Json& j, std::string_view what) { return fixed_vec<3>(j, what); }
Json vec_to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }
Json vec_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json quat_to_json(const Eigen::Quaterniond& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }

Eigen::Quaterniond quat_from_json(const Json& j, std::string_view what) {
  const Eigen::Vector4d c = fixed_vec<4>(j, what);
  Eigen::Quaterniond q(c(0), c(1), c(2), c(3));
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorCode::ParseError, std::string(what) + ": quaternion must be nonzero");
  }
  return q.normalized();
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::string dump_stable(const Json& j) { return j.dump(2) + "\n"; }

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << dump_stable(j);
  if (!out) fail(ErrorCode::IoError, "write to " + path.string() + " failed");
}

void to_json(Json& j, const Pixel& p) { j = Json::array({p.u, p.v}); }
void from_json(const Json& j, Pixel& p) {
  const Vec2 v = fixed_vec<2>(j, "pixel");
  p = {v.x(), v.y()};
}

void to_json(Json& j, const IntrinsicsFile& f) {
  const auto& i = f.intrinsics;
  const auto& d = f.distortion;
  j = Json{{"fx", i.fx},       {"fy", i.fy},         {"cx", i.cx},
           {"cy", i.cy},       {"skew", i.skew},     {"width", i.width},
           {"height", i.height}, {"dist", {d.k1, d.k2, d.p1, d.p2, d.k3}}};
}

void from_json(const Json& j, IntrinsicsFile& f) {
  auto& i = f.intrinsics;
  i.fx = j.at("fx").get<double>();
  i.fy = j.at("fy").get<double>();
  i.cx = j.at("cx").get<double>();
  i.cy = j.at("cy").get<double>();
  i.skew = number_or(j, "skew", 0.0);
  i.width = j.at("width").get<int>();
  i.height = j.at("height").get<int>();
  f.distortion = {};
  if (const auto it = j.find("dist"); it != j.end() && !it->is_null()) {
    const auto d = it->get<std::vector<double>>();
    if (d.size() < 4 || d.size() > 5) {
      fail(ErrorCode::ParseError, "dist must hold [k1, k2, p1, p2] or [k1, k2, p1, p2, k3]");
    }
    f.distortion.k1 = d[0];
    f.distortion.k2 = d[1];
    f.distortion.p1 = d[2];
    f.distortion.p2 = d[3];
    if (d.size() == 5) f.distortion.k3 = d[4];
  }
}

std::vector<Correspondence> parse_correspondences_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    return cells;
  };
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, "correspondence CSV is empty");
  const auto header = split(line);
  int col[5] = {-1, -1, -1, -1, -1};
  const char* names[5] = {"X", "Y", "Z", "u", "v"};
  for (std::size_t c = 0; c < header.size(); ++c) {
    for (int k = 0; k < 5; ++k) {
      if (header[c] == names[k]) col[k] = static_cast<int>(c);
    }
  }
  for (int k = 0; k < 5; ++k) {
    if (col[k] < 0) {
      fail(ErrorCode::ParseError, std::string("correspondence CSV header lacks column ") + names[k]);
    }
  }
  std::vector<Correspondence> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    double val[5];
    for (int k = 0; k < 5; ++k) {
      const auto c = static_cast<std::size_t>(col[k]);
      try {
        std::size_t used = 0;
        if (c >= cells.size()) throw std::invalid_argument("missing");
        val[k] = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, "correspondence CSV line " + std::to_string(line_no) +
                                        ": bad value for " + names[k]);
      }
    }
    out.push_back({Vec3(val[0], val[1], val[2]), Pixel{val[3], val[4]}});
  }
  return out;
}

std::vector<Correspondence> read_correspondences_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_correspondences_csv(ss.str());
}

void to_json(Json& j, const Pose& p) {
  j = Json{{"rotation", quat_to_json(p.rotation)}, {"translation", vec_to_json(p.translation)}};
}
void from_json(const Json& j, Pose& p) {
  p.rotation = quat_from_json(j.at("rotation"), "pose.rotation");
  p.translation = vec3_from_json(j.at("translation"), "pose.translation");
}

void to_json(Json& j, const HeadPose& p) {
  j = Json{{"rotation", quat_to_json(p.rotation)}, {"translation", vec_to_json(p.translation)}};
}
void from_json(const Json& j, HeadPose& p) {
  p = {};
  if (j.contains("rotation")) p.rotation = quat_from_json(j.at("rotation"), "head_pose.rotation");
  if (j.contains("translation")) {
    p.translation = vec3_from_json(j.at("translation"), "head_pose.translation");
  }
}

void to_json(Json& j, const DepthPolicy& policy) {
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, FixedDepth>) {
          j = Json{{"type", "fixed"}, {"depth", p.depth}};
        } else if constexpr (std::is_same_v<T, PlaneIntersection>) {
          j = Json{{"type", "plane"}, {"normal", vec_to_json(p.normal)}, {"offset", p.offset}};
        } else {
          j = Json{{"type", "prior"},
                   {"depth", p.depth},
                   {"min_depth", p.min_depth},
                   {"max_depth", p.max_depth}};
        }
      },
      policy);
}

void from_json(const Json& j, DepthPolicy& policy) {
  if (j.is_number()) {
    policy = FixedDepth{j.get<double>()};
    return;
  }
  const std::string type = j.value("type", "fixed");
  if (type == "fixed") {
    policy = FixedDepth{number_or(j, "depth", 1000.0)};
  } else if (type == "plane") {
    policy = PlaneIntersection{vec3_from_json(j.at("normal"), "depth.normal"),
                               j.at("offset").get<double>()};
  } else if (type == "prior") {
    DepthPrior p;
    p.depth = number_or(j, "depth", p.depth);
    p.min_depth = number_or(j, "min_depth", p.min_depth);
    p.max_depth = number_or(j, "max_depth", p.max_depth);
    policy = p;
  } else {
    fail(ErrorCode::ParseError, "unknown depth policy type '" + type + "'");
  }
}

Json rig_to_json(const AvatarRig& rig) {
  Json eyes = Json::array();
  for (const auto& e : rig.eyes()) {
    eyes.push_back({{"center", vec_to_json(e.center)},
                    {"rest_forward", vec_to_json(e.rest_forward)},
                    {"yaw_limit", e.yaw_limit},
                    {"pitch_limit", e.pitch_limit}});
  }
  return Json{{"eyes", eyes}, {"weights", rig.weights()}, {"head_pose", rig.head()}};
}

AvatarRig rig_from_json(const Json& j) {
  try {
    std::vector<EyeModel> eyes;
    for (const auto& e : j.at("eyes")) {
      EyeModel m;
      m.center = vec3_from_json(e.at("center"), "eye.center");
      if (e.contains("rest_forward")) {
        m.rest_forward = vec3_from_json(e.at("rest_forward"), "eye.rest_forward");
      }
      m.yaw_limit = number_or(e, "yaw_limit", m.yaw_limit);
      m.pitch_limit = number_or(e, "pitch_limit", m.pitch_limit);
      eyes.push_back(m);
    }
    std::vector<double> weights;
    if (const auto it = j.find("weights"); it != j.end() && !it->is_null()) {
      weights = it->get<std::vector<double>>();
    }
    HeadPose head;
    if (const auto it = j.find("head_pose"); it != j.end() && !it->is_null()) {
      head = it->get<HeadPose>();
    }
    return AvatarRig(std::move(eyes), std::move(weights), head);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("rig: ") + e.what());
  }
}

void to_json(Json& j, const DisplaySpec& d) {
  j = Json{{"width_mm", d.width_mm},
           {"height_mm", d.height_mm},
           {"width_px", d.width_px},
           {"height_px", d.height_px}};
}
void from_json(const Json& j, DisplaySpec& d) {
  d.width_mm = j.at("width_mm").get<double>();
  d.height_mm = j.at("height_mm").get<double>();
  d.width_px = j.at("width_px").get<double>();
  d.height_px = j.at("height_px").get<double>();
}

Json fixation_to_json(const AvatarRig& rig, const FixationCommand& cmd,
                      const FixationResult& result) {
  Json eyes = Json::array();
  for (std::size_t i = 0; i < result.rotations.size(); ++i) {
    const auto& r = result.rotations[i];
    const EyeModel& eye = rig.eyes()[i];
    const Vec2 yp = eye_yaw_pitch(eye, r.rotation * eye.rest_forward);
    eyes.push_back({{"rotation", quat_to_json(r.rotation)},
                    {"forward", vec_to_json(r.forward)},
                    {"yaw", yp.x()},
                    {"pitch", yp.y()},
                    {"torsion", r.torsion}});
  }
  Json violations = Json::array();
  for (const auto& v : result.violations) {
    violations.push_back({{"eye", v.eye},
                          {"requested_yaw", v.requested_yaw},
                          {"requested_pitch", v.requested_pitch},
                          {"yaw_limit", v.yaw_limit},
                          {"pitch_limit", v.pitch_limit}});
  }
  Json out{{"direction", vec_to_json(cmd.direction)},
           {"distance", cmd.distance},
           {"anchor", vec_to_json(cmd.anchor)},
           {"target", vec_to_json(cmd.target())},
           {"eyes", eyes},
           {"violations", violations}};
  try {
    out["recognized_gaze"] = vec_to_json(recognized_gaze(rig, result.rotations));
  } catch (const GazeError&) {
    out["recognized_gaze"] = nullptr;
  }
  return out;
}

JointProblem joint_problem_from_json(const Json& j) {
  try {
    JointProblem p;
    for (const auto& c : j.at("correspondences")) {
      p.correspondences.push_back(
          {Vec3(c.at("X").get<double>(), c.at("Y").get<double>(), c.at("Z").get<double>()),
           Pixel{c.at("u").get<double>(), c.at("v").get<double>()}});
    }
    p.target_pixel = j.at("target_pixel").get<Pixel>();
    if (j.contains("eye_center")) p.eye_center = vec3_from_json(j.at("eye_center"), "eye_center");
    if (const auto it = j.find("ideal_gaze"); it != j.end() && !it->is_null()) {
      p.ideal_gaze = vec3_from_json(*it, "ideal_gaze");
    }
    if (const auto it = j.find("weights"); it != j.end() && !it->is_null()) {
      p.weights.pnp = number_or(*it, "pnp", 1.0);
      p.weights.reproj = number_or(*it, "reproj", 1.0);
      p.weights.gaze = number_or(*it, "gaze", 1.0);
    }
    if (const auto it = j.find("depth"); it != j.end() && !it->is_null()) {
      p.fallback_depth = it->get<DepthPolicy>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("scene: ") + e.what());
  }
}

Json joint_result_to_json(const JointResult& r) {
  return Json{{"pose", r.pose},
              {"camera_center", vec_to_json(r.pose.camera_center())},
              {"X_obj", vec_to_json(r.object.point)},
              {"depth", r.object.depth},
              {"energies", {{"e_pnp", r.e_pnp}, {"e_reproj", r.e_reproj}, {"e_gaze", r.e_gaze}}},
              {"objective", r.objective_value},
              {"iterations", r.iterations}};
}

void to_json(Json& j, const PerceptionPair& p) {
  j = Json{{"commanded", p.commanded},
           {"perceived", p.perceived},
           {"observer", p.observer_id},
           {"t", p.timestamp}};
}
void from_json(const Json& j, PerceptionPair& p) {
  p.commanded = j.at("commanded").get<Pixel>();
  p.perceived = j.at("perceived").get<Pixel>();
  p.observer_id = j.value("observer", std::string{});
  p.timestamp = number_or(j, "t", 0.0);
}

void to_json(Json& j, const CorrectionModel& m) {
  Json terms = Json::array();
  for (const auto& t : m.terms) terms.push_back({t.pu, t.pv});
  j = Json{{"avatar_id", m.avatar_id},
           {"degree", m.degree},
           {"terms", terms},
           {"coef_u", m.coef_u},
           {"coef_v", m.coef_v},
           {"fit_stats",
            {{"pre_rms", m.fit_stats.pre_rms},
             {"post_rms", m.fit_stats.post_rms},
             {"pair_count", m.fit_stats.pair_count}}},
           {"center_u", m.center_u},
           {"center_v", m.center_v},
           {"scale", m.scale},
           {"hull", m.hull}};
}

void from_json(const Json& j, CorrectionModel& m) {
  m = {};
  m.avatar_id = j.value("avatar_id", std::string("default"));
  m.degree = j.value("degree", 0);
  for (const auto& t : j.at("terms")) {
    if (!t.is_array() || t.size() != 2) fail(ErrorCode::ParseError, "model terms must be [i, j]");
    m.terms.push_back({t[0].get<int>(), t[1].get<int>()});
  }
  m.coef_u = j.at("coef_u").get<std::vector<double>>();
  m.coef_v = j.at("coef_v").get<std::vector<double>>();
  if (const auto it = j.find("fit_stats"); it != j.end() && it->is_object()) {
    m.fit_stats.pre_rms = number_or(*it, "pre_rms", 0.0);
    m.fit_stats.post_rms = number_or(*it, "post_rms", 0.0);
    m.fit_stats.pair_count = it->value("pair_count", std::size_t{0});
  }
  m.center_u = number_or(j, "center_u", 0.0);
  m.center_v = number_or(j, "center_v", 0.0);
  m.scale = number_or(j, "scale", 1.0);
  if (const auto it = j.find("hull"); it != j.end() && !it->is_null()) {
    m.hull = it->get<std::vector<Pixel>>();
  }
  m.validate();
}

void to_json(Json& j, const CorrectionConfig& c) {
  j = Json{{"max_degree", c.max_degree},
           {"selection_penalty", c.selection_penalty},
           {"min_pairs", c.min_pairs},
           {"avatar_id", c.avatar_id}};
}
void from_json(const Json& j, CorrectionConfig& c) {
  c = {};
  c.max_degree = j.value("max_degree", c.max_degree);
  c.selection_penalty = j.value("selection_penalty", c.selection_penalty);
  c.min_pairs = j.value("min_pairs", c.min_pairs);
  c.avatar_id = j.value("avatar_id", c.avatar_id);
}

void to_json(Json& j, const CalibrationReport& r) {
  Json residuals = Json::array();
  for (const auto& v : r.residuals) residuals.push_back(vec_to_json(v));
  Json folds = Json::array();
  for (double f : r.fold_rms) {
    if (std::isfinite(f)) {
      folds.push_back(f);
    } else {
      folds.push_back(nullptr);
    }
  }
  j = Json{{"pre_rms", r.pre_rms},
           {"post_rms", r.post_rms},
           {"residuals", residuals},
           {"folds", r.folds},
           {"fold_rms", folds},
           {"heldout_rms", std::isfinite(r.heldout_rms) ? Json(r.heldout_rms) : Json(nullptr)}};
}

void to_json(Json& j, const DistortionField& field) {
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, IdentityField>) {
          j = Json{{"type", "identity"}};
        } else if constexpr (std::is_same_v<T, AffineField>) {
          j = Json{{"type", "affine"}, {"a", f.a}, {"b", f.b}, {"c", f.c},
                   {"d", f.d},         {"e", f.e}, {"f", f.f}};
        } else if constexpr (std::is_same_v<T, RadialField>) {
          j = Json{{"type", "radial"},
                   {"k", f.k},
                   {"center", {f.center_u, f.center_v}},
                   {"scale", f.scale}};
        } else {
          j = Json{{"type", "grid"},
                   {"origin", {f.origin_u, f.origin_v}},
                   {"spacing", {f.spacing_u, f.spacing_v}},
                   {"nx", f.nx},
                   {"ny", f.ny},
                   {"du", f.du},
                   {"dv", f.dv}};
        }
      },
      field);
}

void from_json(const Json& j, DistortionField& field) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "identity") {
    field = IdentityField{};
  } else if (type == "affine") {
    AffineField f;
    f.a = number_or(j, "a", f.a);
    f.b = number_or(j, "b", f.b);
    f.c = number_or(j, "c", f.c);
    f.d = number_or(j, "d", f.d);
    f.e = number_or(j, "e", f.e);
    f.f = number_or(j, "f", f.f);
    field = f;
  } else if (type == "radial") {
    RadialField f;
    f.k = j.at("k").get<double>();
    const Vec2 c = vec2_from_json(j.at("center"), "field.center");
    f.center_u = c.x();
    f.center_v = c.y();
    f.scale = number_or(j, "scale", 1.0);
    field = f;
  } else if (type == "grid") {
    GridField f;
    const Vec2 o = vec2_from_json(j.at("origin"), "field.origin");
    const Vec2 s = vec2_from_json(j.at("spacing"), "field.spacing");
    f.origin_u = o.x();
    f.origin_v = o.y();
    f.spacing_u = s.x();
    f.spacing_v = s.y();
    f.nx = j.at("nx").get<int>();
    f.ny = j.at("ny").get<int>();
    f.du = j.at("du").get<std::vector<double>>();
    f.dv = j.at("dv").get<std::vector<double>>();
    field = f;
  } else {
    fail(ErrorCode::ParseError, "unknown field type '" + type + "'");
  }
  validate_field(field);
}

void to_json(Json& j, const DriveConfig& d) {
  Json cycle = Json::array();
  for (const auto& s : d.cycle) cycle.push_back({state_name(s.state), s.duration_ms});
  j = Json{{"cycle", cycle},
           {"field_rate_hz", d.field_rate_hz},
           {"display_refresh_hz", d.display_refresh_hz}};
}

void from_json(const Json& j, DriveConfig& d) {
  d = {};
  for (const auto& s : j.at("cycle")) {
    if (!s.is_array() || s.size() != 2) {
      fail(ErrorCode::ParseError, "drive cycle entries must be [state, ms]");
    }
    const std::string state = s[0].get<std::string>();
    DriveSegment seg;
    if (state == "visible") {
      seg.state = DriveState::Visible;
    } else if (state == "transparent") {
      seg.state = DriveState::Transparent;
    } else {
      fail(ErrorCode::ParseError, "unknown drive state '" + state + "'");
    }
    seg.duration_ms = s[1].get<double>();
    d.cycle.push_back(seg);
  }
  d.field_rate_hz = number_or(j, "field_rate_hz", d.field_rate_hz);
  d.display_refresh_hz = number_or(j, "display_refresh_hz", d.display_refresh_hz);
  d.validate();
}

void to_json(Json& j, const ExposureSchedule& s) {
  Json frames = Json::array();
  for (const auto& f : s.frames) {
    Json windows = Json::array();
    for (const auto& w : f.windows) windows.push_back({w.start, w.end});
    frames.push_back({{"frame", f.frame},
                      {"period", {f.period.start, f.period.end}},
                      {"windows", windows},
                      {"accumulated_ms", f.accumulated_ms}});
  }
  Json violations = Json::array();
  for (const auto& v : s.violations) {
    violations.push_back({{"frame", v.frame},
                          {"required_ms", v.required_ms},
                          {"achieved_ms", v.achieved_ms},
                          {"longest_window_ms", v.longest_window_ms}});
  }
  j = Json{{"horizon_ms", s.horizon_ms},
           {"camera",
            {{"fps", s.camera.fps},
             {"exposure_ms", s.camera.exposure_ms},
             {"allow_split", s.camera.allow_split}}},
           {"frames", frames},
           {"violations", violations}};
}

void to_json(Json& j, const InterferenceViolation& v) {
  j = Json{{"frame", v.frame}, {"window", {v.window.start, v.window.end}}, {"overlap_ms", v.overlap_ms}};
}

}  // namespace gazesynth
