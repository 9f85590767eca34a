#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ttv/feed.hpp"
#include "ttv/image.hpp"
#include "ttv/manifest.hpp"

namespace ttv {

struct GeoPoint {
  double lat = 0;
  double lon = 0;
};

// Great-circle distance on a 6,371,000 m sphere.
double haversine_m(GeoPoint a, GeoPoint b);

struct MonitoredSegment {
  GeoPoint camera_point;
  double activation_radius_m = 500.0;
  double segment_length_m = 1000.0;
};

struct FrameRef {
  std::string frame_path;
  std::int64_t capture_ts = 0;
};

// One triggered capture episode. Frames are the successful captures, in
// strictly increasing timestamp order; failed slots are kept as gap markers.
struct AcquisitionSession {
  std::string session_id;
  std::int64_t start_ts = 0;
  int frame_count = 6;
  int frame_interval_s = 15;
  std::vector<std::pair<std::string, int>> trips;  // (trip_id, direction), attach order
  std::vector<FrameRef> frames;
  std::vector<std::int64_t> gap_ts;
  bool failed = false;  // zero frames captured

  std::int64_t window_end() const {
    return start_ts + static_cast<std::int64_t>(frame_count - 1) * frame_interval_s;
  }
  bool has_trip(const std::string& trip_id) const;
};

struct TripApproach {
  std::string trip_id;
  int direction = 0;
  std::int64_t approach_ts = 0;
  std::string session_id;
  double occupancy = 0;  // from the triggering feed record
};

enum class TriggerDecision { None, OpenSession, JoinSession };

// A captured frame plus an optional preexisting path. When path_hint is
// empty the registry persists the frame itself.
struct CapturedFrame {
  RasterFrame frame;
  std::string path_hint;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  // Returns the frame observed at the given simulated timestamp, or nullopt
  // on capture failure.
  virtual std::optional<CapturedFrame> capture(std::int64_t ts) = 0;
};

// Runs the session's full capture schedule against the source: frame_count
// requests at frame_interval_s spacing starting at start_ts. Failed slots
// become gap markers; a session with zero captures is marked failed.
void run_session(AcquisitionSession& session, FrameSource& source);

struct SessionRegistryOptions {
  int frame_count = 6;
  int frame_interval_s = 15;
  // Directory for persisted frames; when empty, frames stay in memory and
  // manifest rows use synthesized paths.
  std::string frames_dir;
};

// Tracks approach state per (trip, direction), maintains at most one open
// session, and serializes all mutations through process_position /
// finish (single logical writer).
class SessionRegistry {
 public:
  SessionRegistry(const MonitoredSegment& segment, FrameSource& source,
                  SessionRegistryOptions options = {});

  // Processes one feed record; records must arrive in non-decreasing
  // timestamp order (throws DataError otherwise).
  TriggerDecision process_position(const VehiclePositionRecord& record);

  // Closes any still-open session. Call once after the last record.
  void finish();

  const std::vector<AcquisitionSession>& sessions() const { return sessions_; }
  const std::vector<TripApproach>& approaches() const { return approaches_; }

  // Approaches belonging to sessions that captured at least one frame.
  std::vector<TripApproach> successful_approaches() const;

  // One row per (captured frame x attached trip) from successful sessions.
  Manifest manifest() const;

 private:
  void open_session(const VehiclePositionRecord& record);
  void close_open_session();
  const AcquisitionSession* find_session(const std::string& session_id) const;

  MonitoredSegment segment_;
  FrameSource* source_;
  SessionRegistryOptions options_;
  std::map<std::pair<std::string, int>, bool> inside_;  // last observation within radius
  std::optional<AcquisitionSession> open_;
  std::vector<AcquisitionSession> sessions_;
  std::vector<TripApproach> approaches_;
  std::int64_t last_ts_ = 0;
  bool saw_any_ = false;
  int next_session_ = 0;
};

// Successful approaches as CSV: trip_id,direction,approach_ts,session_id.
void export_trip_database(const std::string& path, const SessionRegistry& registry);
std::vector<TripApproach> read_trip_database(const std::string& path);

}  // namespace ttv
