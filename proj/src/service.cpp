#include "gazesynth/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <list>
#include <ostream>
#include <thread>

#include "gazesynth/error.hpp"
#include "gazesynth/scenario.hpp"

namespace gazesynth {

namespace {

constexpr std::size_t kMaxLine = 1 << 20;

/// Protocol-level failure with a wire code that is not an engine ErrorCode.
struct ProtocolError : std::runtime_error {
  ProtocolError(std::string code, const std::string& message)
      : std::runtime_error(message), code(std::move(code)) {}
  std::string code;
};

PlaneBounds bounds_of(const IntrinsicsFile& camera) {
  return {static_cast<double>(camera.intrinsics.width),
          static_cast<double>(camera.intrinsics.height)};
}

CalibrationSession open_session(const ServiceConfig& c) {
  if (!c.session_dir) return CalibrationSession(bounds_of(c.camera), std::nullopt, c.clock);
  std::error_code ec;
  std::filesystem::create_directories(*c.session_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create session directory " + c.session_dir->string());
  return CalibrationSession::load(*c.session_dir / "pairs.jsonl", bounds_of(c.camera), c.clock);
}

Pixel pixel_field(const Json& payload, const char* key) {
  const auto it = payload.find(key);
  if (it == payload.end()) throw ProtocolError("invalid_payload", std::string("missing '") + key + "'");
  return parse_as<Pixel>(*it, key);
}

Json error_reply(const Json& id, std::uint64_t revision, const std::string& code,
                 const std::string& message) {
  return Json{{"type", "error"},
              {"id", id},
              {"revision", revision},
              {"payload", {{"code", code}, {"message", message}}}};
}

}  // namespace

ServiceConfig ServiceConfig::defaults() {
  ServiceConfig c;
  c.camera.intrinsics = {1200.0, 1200.0, 720.0, 540.0, 0.0, 1440, 1080};
  // 4-inch diagonal, 320x360 pixels, square pixels.
  const double diag_mm = 4.0 * 25.4;
  const double diag_px = std::hypot(320.0, 360.0);
  c.display = {diag_mm * 320.0 / diag_px, diag_mm * 360.0 / diag_px, 320.0, 360.0};
  return c;
}

ServiceConfig service_config_from_json(const Json& j, ServiceConfig base) {
  try {
    if (j.contains("rig")) base.rig = rig_from_json(j.at("rig"));
    if (j.contains("intrinsics")) base.camera = j.at("intrinsics").get<IntrinsicsFile>();
    if (j.contains("display")) base.display = j.at("display").get<DisplaySpec>();
    base.plane_distance_f = j.value("plane_distance_f", base.plane_distance_f);
    if (j.contains("depth")) base.depth = j.at("depth").get<DepthPolicy>();
    if (j.contains("fit")) base.fit = j.at("fit").get<CorrectionConfig>();
    return base;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("service config: ") + e.what());
  }
}

Service::Service(ServiceConfig config)
    : config_(std::move(config)), session_(open_session(config_)) {
  if (config_.session_dir) {
    const auto rig_path = *config_.session_dir / "rig.json";
    if (std::filesystem::exists(rig_path)) config_.rig = rig_from_json(read_json_file(rig_path));
    const auto model_path = *config_.session_dir / "model.json";
    if (std::filesystem::exists(model_path)) {
      model_ = parse_as<CorrectionModel>(read_json_file(model_path), "model.json");
    }
  }
  rebuild_scene();
}

void Service::rebuild_scene() {
  scene_ = build_scene(config_.rig, config_.display, config_.camera.intrinsics,
                       config_.camera.distortion, config_.plane_distance_f);
}

void Service::persist_model() const {
  if (config_.session_dir && model_) write_json_file(*config_.session_dir / "model.json", *model_);
}

std::size_t Service::connect(Sink sink) {
  std::lock_guard lock(sinks_mu_);
  const std::size_t id = next_connection_++;
  sinks_[id] = std::move(sink);
  return id;
}

void Service::disconnect(std::size_t connection) {
  std::lock_guard lock(sinks_mu_);
  sinks_.erase(connection);
}

std::uint64_t Service::revision() const {
  std::lock_guard lock(mu_);
  return revision_;
}

Json Service::state() const {
  std::lock_guard lock(mu_);
  return state_locked();
}

Json Service::state_locked() const {
  Json fixation = nullptr;
  if (fixation_) {
    fixation = fixation_to_json(config_.rig, fixation_->command, fixation_->result);
    fixation["pixel"] = fixation_->requested;
    fixation["commanded_pixel"] = fixation_->commanded;
    fixation["corrected"] = fixation_->corrected;
    fixation["extrapolated"] = fixation_->extrapolated;
  }
  return Json{{"revision", revision_},
              {"fixation", fixation},
              {"pair_count", session_.pairs().size()},
              {"model", model_ ? Json(*model_) : Json(nullptr)},
              {"scene",
               {{"plane_distance_f", scene_.plane_distance_f},
                {"image_plane_mm", {scene_.image_plane.width, scene_.image_plane.height}},
                {"camera_px", {scene_.virtual_camera.width, scene_.virtual_camera.height}},
                {"anchor", vec_to_json(scene_.anchor)},
                {"rig", rig_to_json(config_.rig)}}}};
}

void Service::broadcast(std::size_t origin, const Json& update) {
  const std::string line = update.dump();
  std::lock_guard lock(sinks_mu_);
  for (const auto& [id, sink] : sinks_) {
    if (id != origin && sink) sink(line);
  }
}

Json Service::state_update_locked() const {
  return Json{{"type", "state_update"}, {"revision", revision_}, {"payload", state_locked()}};
}

Json Service::dispatch(const std::string& type, const Json& payload, std::optional<Json>& update) {
  if (type == "get_state") {
    std::lock_guard lock(mu_);
    return state_locked();
  }

  if (type == "set_fixation_pixel") {
    const Pixel pixel = pixel_field(payload, "pixel");
    const bool use_model = payload.value("apply_model", false);
    const std::string mode_name = payload.value("limit_mode", std::string("clamp"));
    if (mode_name != "clamp" && mode_name != "strict") {
      throw ProtocolError("invalid_payload", "limit_mode must be 'clamp' or 'strict'");
    }
    std::lock_guard lock(mu_);
    Fixation f;
    f.requested = pixel;
    f.commanded = pixel;
    if (use_model) {
      if (!model_) throw ProtocolError("no_active_model", "no calibration model is active");
      const CorrectedCommand c = apply_correction(*model_, pixel);
      f.commanded = c.command;
      f.corrected = true;
      f.extrapolated = c.extrapolated;
    }
    f.command = pixel_to_fixation(scene_, f.commanded, config_.depth);
    f.result = fixate(config_.rig, f.command.target(),
                      mode_name == "strict" ? LimitMode::Strict : LimitMode::Clamp);
    fixation_ = std::move(f);
    ++revision_;
    update = state_update_locked();
    return state_locked();
  }

  if (type == "record_pair") {
    const Pixel perceived = pixel_field(payload, "perceived");
    const std::string observer = payload.value("observer", std::string{});
    std::lock_guard lock(mu_);
    Pixel commanded;
    if (payload.contains("commanded")) {
      commanded = pixel_field(payload, "commanded");
    } else if (fixation_) {
      commanded = fixation_->commanded;
    } else {
      throw ProtocolError("invalid_payload", "no 'commanded' point and no active fixation");
    }
    const PerceptionPair& pair = session_.record_pair(commanded, perceived, observer);
    ++revision_;
    update = state_update_locked();
    return Json{{"pair", pair}, {"pair_count", session_.pairs().size()}};
  }

  if (type == "fit_calibration") {
    CorrectionConfig cfg = config_.fit;
    if (const auto it = payload.find("config"); it != payload.end() && it->is_object()) {
      cfg = parse_as<CorrectionConfig>(*it, "config");
    }
    std::vector<PerceptionPair> snapshot;
    {
      std::lock_guard lock(mu_);
      snapshot = session_.pairs();
    }
    CorrectionModel model = fit_correction(snapshot, cfg);
    std::lock_guard lock(mu_);
    model_ = std::move(model);
    persist_model();
    ++revision_;
    update = state_update_locked();
    return Json{{"model", *model_}, {"fit_stats", Json(*model_)["fit_stats"]}};
  }

  if (type == "apply_model") {
    std::optional<CorrectionModel> model;
    {
      std::lock_guard lock(mu_);
      model = model_;
    }
    if (!model) throw ProtocolError("no_active_model", "no calibration model is active");
    auto one = [&](const Pixel& p) {
      const CorrectedCommand c = apply_correction(*model, p);
      return Json{{"pixel", p}, {"command", c.command}, {"extrapolated", c.extrapolated}};
    };
    if (payload.contains("pixels")) {
      Json out = Json::array();
      for (const auto& p : payload.at("pixels")) out.push_back(one(parse_as<Pixel>(p, "pixels")));
      return Json{{"commands", out}};
    }
    return one(pixel_field(payload, "pixel"));
  }

  if (type == "load_rig") {
    const auto it = payload.find("rig");
    if (it == payload.end()) throw ProtocolError("invalid_payload", "missing 'rig'");
    AvatarRig rig = rig_from_json(*it);
    std::lock_guard lock(mu_);
    const AvatarRig previous = config_.rig;
    config_.rig = std::move(rig);
    try {
      rebuild_scene();
    } catch (...) {
      config_.rig = previous;
      rebuild_scene();
      throw;
    }
    fixation_.reset();
    if (config_.session_dir) write_json_file(*config_.session_dir / "rig.json", rig_to_json(config_.rig));
    ++revision_;
    update = state_update_locked();
    return state_locked();
  }

  if (type == "run_scenario") {
    const auto it = payload.find("scenario");
    if (it == payload.end()) throw ProtocolError("invalid_payload", "missing 'scenario'");
    return run_scenario(scenario_from_json(*it));
  }

  throw ProtocolError("unknown_type", "unknown message type '" + type + "'");
}

std::string Service::handle(std::size_t connection, std::string_view line) {
  Json request;
  try {
    request = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    return error_reply(nullptr, revision(), "malformed", e.what()).dump();
  }
  if (!request.is_object()) {
    return error_reply(nullptr, revision(), "malformed", "request must be a JSON object").dump();
  }
  const Json id = request.contains("id") ? request["id"] : Json(nullptr);
  const auto type_it = request.find("type");
  if (type_it == request.end() || !type_it->is_string()) {
    return error_reply(id, revision(), "malformed", "request needs a string 'type'").dump();
  }
  const std::string type = type_it->get<std::string>();
  Json payload = request.value("payload", Json::object());
  if (payload.is_null()) payload = Json::object();
  if (!payload.is_object()) {
    return error_reply(id, revision(), "malformed", "payload must be an object").dump();
  }

  std::optional<Json> update;
  Json reply_payload;
  try {
    reply_payload = dispatch(type, payload, update);
  } catch (const ProtocolError& e) {
    return error_reply(id, revision(), e.code, e.what()).dump();
  } catch (const GazeError& e) {
    // A payload that fails to parse is the client's framing problem, not a domain error.
    const std::string code = e.code() == ErrorCode::ParseError ? "invalid_payload"
                                                                : std::string(error_code_name(e.code()));
    return error_reply(id, revision(), code, e.what()).dump();
  } catch (const nlohmann::json::exception& e) {
    return error_reply(id, revision(), "invalid_payload", e.what()).dump();
  } catch (const std::exception& e) {
    return error_reply(id, revision(), "internal", e.what()).dump();
  }

  Json reply{{"type", type}, {"id", id}, {"payload", std::move(reply_payload)}};
  if (update) {
    // Taken under the same lock as the mutation, so both carry its revision.
    reply["revision"] = (*update)["revision"];
    broadcast(connection, *update);
  } else {
    reply["revision"] = revision();
  }
  return reply.dump();
}

void serve_stream(Service& service, std::istream& in, std::ostream& out) {
  const std::size_t conn = service.connect();
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out << service.handle(conn, line) << '\n' << std::flush;
  }
  service.disconnect(conn);
}

namespace {

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

void run_connection(Service& service, int fd, const std::atomic<bool>& stop) {
  auto write_mu = std::make_shared<std::mutex>();
  const std::size_t conn = service.connect([fd, write_mu](const std::string& line) {
    std::lock_guard lock(*write_mu);
    send_all(fd, line + "\n");
  });
  std::string buffer;
  char chunk[4096];
  bool overflow = false;
  while (!stop.load()) {
    pollfd pfd{fd, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready < 0 && errno == EINTR) continue;
    if (ready < 0) break;
    if (ready == 0) continue;
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t pos;
    bool alive = true;
    while (alive && (pos = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, pos);
      buffer.erase(0, pos + 1);
      std::string reply;
      if (overflow) {
        overflow = false;
        reply = error_reply(nullptr, service.revision(), "line_too_long",
                            "request exceeds " + std::to_string(kMaxLine) + " bytes")
                    .dump();
      } else if (line.find_first_not_of(" \t\r") == std::string::npos) {
        continue;
      } else {
        reply = service.handle(conn, line);
      }
      std::lock_guard lock(*write_mu);
      alive = send_all(fd, reply + "\n");
    }
    if (!alive) break;
    if (buffer.size() > kMaxLine) {
      buffer.clear();
      overflow = true;
    }
  }
  service.disconnect(conn);
  ::close(fd);
}

}  // namespace

void serve_tcp(Service& service, std::uint16_t port, const std::atomic<bool>& stop,
               const std::function<void(std::uint16_t)>& on_ready) {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listener < 0) fail(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
  const int yes = 1;
  ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 ||
      ::listen(listener, 16) < 0) {
    const std::string msg = std::strerror(errno);
    ::close(listener);
    fail(ErrorCode::IoError, "cannot listen on port " + std::to_string(port) + ": " + msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  if (on_ready) on_ready(ntohs(addr.sin_port));

  std::list<std::thread> workers;
  while (!stop.load()) {
    pollfd pfd{listener, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    if (ready <= 0) continue;
    const int fd = ::accept(listener, nullptr, nullptr);
    if (fd < 0) continue;
    workers.emplace_back(run_connection, std::ref(service), fd, std::cref(stop));
  }
  ::close(listener);
  for (auto& w : workers) w.join();
}

}  // namespace gazesynth
