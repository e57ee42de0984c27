#include "gazesynth/capture_scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "gazesynth/error.hpp"

namespace gazesynth {

namespace {

constexpr double kTimeEps = 1e-9;  // ms

}  // namespace

void DriveConfig::validate() const {
  require(!cycle.empty(), ErrorCode::InvalidArgument, "drive cycle is empty");
  bool has_transparent = false;
  for (const auto& s : cycle) {
    require(s.duration_ms > 0.0 && std::isfinite(s.duration_ms), ErrorCode::InvalidArgument,
            "drive segment durations must be positive");
    has_transparent = has_transparent || s.state == DriveState::Transparent;
  }
  require(has_transparent, ErrorCode::InvalidArgument,
          "drive cycle needs at least one transparent segment");
  require(field_rate_hz > 0.0 && display_refresh_hz > 0.0, ErrorCode::InvalidArgument,
          "drive rates must be positive");
}

double DriveConfig::period_ms() const {
  double p = 0.0;
  for (const auto& s : cycle) p += s.duration_ms;
  return p;
}

double DriveConfig::transparent_duty() const {
  double t = 0.0;
  for (const auto& s : cycle) {
    if (s.state == DriveState::Transparent) t += s.duration_ms;
  }
  return t / period_ms();
}

DriveConfig DriveConfig::reference_preset() {
  const double field = 1000.0 / 180.0;
  DriveConfig d;
  d.cycle = {{DriveState::Visible, field}, {DriveState::Transparent, field}};
  d.field_rate_hz = 180.0;
  d.display_refresh_hz = 50.0;
  return d;
}

void CameraTiming::validate() const {
  require(fps > 0.0 && std::isfinite(fps), ErrorCode::InvalidArgument, "fps must be positive");
  require(exposure_ms > 0.0 && std::isfinite(exposure_ms), ErrorCode::InvalidArgument,
          "exposure must be positive");
  require(exposure_ms <= frame_period_ms() + kTimeEps, ErrorCode::InvalidArgument,
          "exposure exceeds the frame period");
}

std::vector<Interval> transparent_intervals(const DriveConfig& drive, double horizon_ms) {
  drive.validate();
  require(horizon_ms > 0.0 && std::isfinite(horizon_ms), ErrorCode::InvalidArgument,
          "horizon must be positive");
  const double period = drive.period_ms();
  std::vector<double> offsets{0.0};
  for (const auto& s : drive.cycle) offsets.push_back(offsets.back() + s.duration_ms);

  std::vector<Interval> out;
  for (std::size_t k = 0;; ++k) {
    const double base = static_cast<double>(k) * period;
    if (base >= horizon_ms) break;
    for (std::size_t i = 0; i < drive.cycle.size(); ++i) {
      if (drive.cycle[i].state != DriveState::Transparent) continue;
      const double a = base + offsets[i];
      const double b = std::min(base + offsets[i + 1], horizon_ms);
      if (b - a <= 0.0) continue;
      if (!out.empty() && a - out.back().end <= kTimeEps) {
        out.back().end = std::max(out.back().end, b);
      } else {
        out.push_back({a, b});
      }
    }
  }
  return out;
}

ExposureSchedule schedule_exposures(const DriveConfig& drive, const CameraTiming& camera,
                                    double horizon_ms) {
  camera.validate();
  const std::vector<Interval> open = transparent_intervals(drive, horizon_ms);
  const double period = camera.frame_period_ms();

  ExposureSchedule sched;
  sched.horizon_ms = horizon_ms;
  sched.camera = camera;
  std::size_t first = 0;  // first interval that may still intersect the current frame
  for (std::size_t k = 0;; ++k) {
    const double fs = static_cast<double>(k) * period;
    const double fe = static_cast<double>(k + 1) * period;
    if (fe > horizon_ms + kTimeEps) break;

    FrameExposure frame;
    frame.frame = k;
    frame.period = {fs, fe};
    double longest = 0.0;
    double remaining = camera.exposure_ms;
    while (first < open.size() && open[first].end <= fs) ++first;
    for (std::size_t i = first; i < open.size() && open[i].start < fe; ++i) {
      const double a = std::max(open[i].start, fs);
      const double b = std::min(open[i].end, fe);
      const double len = b - a;
      if (len <= 0.0) continue;
      longest = std::max(longest, len);
      if (remaining <= kTimeEps) continue;
      if (camera.allow_split) {
        const double take = std::min(remaining, len);
        frame.windows.push_back({a, a + take});
        frame.accumulated_ms += take;
        remaining -= take;
      } else if (len >= camera.exposure_ms - kTimeEps && frame.windows.empty()) {
        const double take = std::min(camera.exposure_ms, len);
        frame.windows.push_back({a, a + take});
        frame.accumulated_ms = take;
        remaining = 0.0;
      }
    }
    if (camera.exposure_ms - frame.accumulated_ms > kTimeEps) {
      sched.violations.push_back({k, camera.exposure_ms, frame.accumulated_ms, longest});
    }
    sched.frames.push_back(std::move(frame));
  }
  return sched;
}

std::vector<InterferenceViolation> interference_check(const ExposureSchedule& schedule,
                                                      const DriveConfig& drive) {
  drive.validate();
  const double period = drive.period_ms();
  std::vector<InterferenceViolation> out;
  for (const auto& frame : schedule.frames) {
    for (const auto& w : frame.windows) {
      double overlap = 0.0;
      // Walk the drive segment by segment from the cycle containing the window start.
      double t = w.start - std::fmod(w.start, period);
      std::size_t i = 0;
      while (t < w.end) {
        const auto& seg = drive.cycle[i];
        const double seg_end = t + seg.duration_ms;
        if (seg.state == DriveState::Visible) {
          overlap += std::max(0.0, std::min(w.end, seg_end) - std::max(w.start, t));
        }
        t = seg_end;
        i = (i + 1) % drive.cycle.size();
      }
      if (overlap > kTimeEps || w.start < 0.0 || w.end < w.start) {
        out.push_back({frame.frame, w, overlap});
      }
    }
  }
  return out;
}

}  // namespace gazesynth
