#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace gazesynth {

enum class DriveState { Visible, Transparent };

struct DriveSegment {
  DriveState state = DriveState::Visible;
  double duration_ms = 0.0;
};

/// A repeating pattern of display states starting at t = 0.
struct DriveConfig {
  std::vector<DriveSegment> cycle;
  double field_rate_hz = 180.0;
  double display_refresh_hz = 50.0;

  void validate() const;
  double period_ms() const;
  /// Fraction of the cycle spent transparent.
  double transparent_duty() const;

  /// One visible field followed by one transparent field at 180 Hz.
  static DriveConfig reference_preset();
};

/// Half-open interval [start, end) in ms.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct CameraTiming {
  double fps = 50.0;
  double exposure_ms = 6.0;
  /// Accumulate exposure over several transparent windows within one frame.
  bool allow_split = false;

  void validate() const;
  double frame_period_ms() const { return 1000.0 / fps; }
};

struct FrameExposure {
  std::size_t frame = 0;
  Interval period;
  std::vector<Interval> windows;
  double accumulated_ms = 0.0;
};

struct ScheduleViolation {
  std::size_t frame = 0;
  double required_ms = 0.0;
  double achieved_ms = 0.0;
  /// Longest single transparent window available in the frame.
  double longest_window_ms = 0.0;
};

struct ExposureSchedule {
  double horizon_ms = 0.0;
  CameraTiming camera;
  std::vector<FrameExposure> frames;
  std::vector<ScheduleViolation> violations;
};

struct InterferenceViolation {
  std::size_t frame = 0;
  Interval window;
  /// Total time the window overlaps visible segments.
  double overlap_ms = 0.0;
};

/// Transparent segments of the repeating drive over [0, horizon), merged,
/// sorted and disjoint.
std::vector<Interval> transparent_intervals(const DriveConfig& drive, double horizon_ms);

/// Greedy earliest-fit exposure placement for every camera frame that ends
/// inside the horizon. Infeasible frames are listed in violations.
ExposureSchedule schedule_exposures(const DriveConfig& drive, const CameraTiming& camera,
                                    double horizon_ms);

/// Independent check that every window avoids the visible segments of the drive.
std::vector<InterferenceViolation> interference_check(const ExposureSchedule& schedule,
                                                      const DriveConfig& drive);

}  // namespace gazesynth
