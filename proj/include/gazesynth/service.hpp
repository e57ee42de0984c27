#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "gazesynth/calibration.hpp"
#include "gazesynth/gaze_engine.hpp"
#include "gazesynth/serialization.hpp"

namespace gazesynth {

struct ServiceConfig {
  /// pairs.jsonl, model.json and rig.json live here when set.
  std::optional<std::filesystem::path> session_dir;
  AvatarRig rig = AvatarRig::two_eye_default();
  IntrinsicsFile camera;
  DisplaySpec display;
  double plane_distance_f = 500.0;  // mm
  DepthPolicy depth = FixedDepth{};
  CorrectionConfig fit;
  CalibrationSession::Clock clock;

  /// 1440x1080 camera behind a 4-inch 320x360 display.
  static ServiceConfig defaults();
};

/// Overrides defaults with {rig, intrinsics, display, plane_distance_f, depth, fit}.
ServiceConfig service_config_from_json(const Json& j, ServiceConfig base = ServiceConfig::defaults());

/// Session state behind the newline-delimited JSON protocol. Mutations are
/// serialized by one mutex; calibration fits run on a snapshot of the pairs.
class Service {
 public:
  using Sink = std::function<void(const std::string& line)>;

  explicit Service(ServiceConfig config);

  /// Registers a connection. The sink receives state_update lines caused by
  /// other connections' mutations.
  std::size_t connect(Sink sink = {});
  void disconnect(std::size_t connection);

  /// Handles one request line and returns exactly one reply line (no newline).
  std::string handle(std::size_t connection, std::string_view line);

  std::uint64_t revision() const;
  Json state() const;

 private:
  struct Fixation {
    Pixel requested;
    Pixel commanded;
    bool corrected = false;
    bool extrapolated = false;
    FixationCommand command;
    FixationResult result;
  };

  Json state_locked() const;
  Json state_update_locked() const;
  Json dispatch(const std::string& type, const Json& payload, std::optional<Json>& update);
  void rebuild_scene();
  void persist_model() const;
  void broadcast(std::size_t origin, const Json& update);

  ServiceConfig config_;
  mutable std::mutex mu_;
  std::uint64_t revision_ = 0;
  VirtualSceneConfig scene_;
  CalibrationSession session_;
  std::optional<Fixation> fixation_;
  std::optional<CorrectionModel> model_;

  std::mutex sinks_mu_;
  std::size_t next_connection_ = 1;
  std::map<std::size_t, Sink> sinks_;
};

/// One connection over a pair of streams; returns at end of input.
void serve_stream(Service& service, std::istream& in, std::ostream& out);

/// Accepts TCP connections on 127.0.0.1 until stop is set. on_ready receives
/// the bound port (useful with port 0).
void serve_tcp(Service& service, std::uint16_t port, const std::atomic<bool>& stop,
               const std::function<void(std::uint16_t)>& on_ready = {});

}  // namespace gazesynth
