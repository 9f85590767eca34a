#include "ttv/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ttv/csv.hpp"
#include "ttv/errors.hpp"

namespace ttv {

double haversine_m(GeoPoint a, GeoPoint b) {
  constexpr double kEarthRadiusM = 6371000.0;
  constexpr double kDegToRad = M_PI / 180.0;
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlam = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlam / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

bool AcquisitionSession::has_trip(const std::string& trip_id) const {
  return std::any_of(trips.begin(), trips.end(),
                     [&](const auto& t) { return t.first == trip_id; });
}

namespace {

// Full capture schedule; frames without a path hint are persisted under
// frames_dir when one is configured.
void run_session_persisting(AcquisitionSession& session, FrameSource& source,
                            const std::string& frames_dir) {
  session.frames.clear();
  session.gap_ts.clear();
  for (int slot = 0; slot < session.frame_count; ++slot) {
    const std::int64_t ts =
        session.start_ts + static_cast<std::int64_t>(slot) * session.frame_interval_s;
    auto captured = source.capture(ts);
    if (!captured) {
      session.gap_ts.push_back(ts);
      continue;
    }
    FrameRef ref;
    ref.capture_ts = ts;
    if (!captured->path_hint.empty()) {
      ref.frame_path = captured->path_hint;
    } else if (!frames_dir.empty()) {
      std::filesystem::create_directories(frames_dir);
      ref.frame_path = (std::filesystem::path(frames_dir) /
                        (session.session_id + "_f" + std::to_string(slot) + ".ppm"))
                           .string();
      captured->frame.capture_ts = ts;
      write_ppm(ref.frame_path, captured->frame);
    } else {
      ref.frame_path = session.session_id + "_f" + std::to_string(slot);
    }
    session.frames.push_back(std::move(ref));
  }
  session.failed = session.frames.empty();
}

}  // namespace

void run_session(AcquisitionSession& session, FrameSource& source) {
  run_session_persisting(session, source, "");
}

SessionRegistry::SessionRegistry(const MonitoredSegment& segment, FrameSource& source,
                                 SessionRegistryOptions options)
    : segment_(segment), source_(&source), options_(std::move(options)) {
  if (segment_.activation_radius_m <= 0) {
    throw ArgumentError("activation radius must be positive");
  }
}

TriggerDecision SessionRegistry::process_position(const VehiclePositionRecord& record) {
  if (saw_any_ && record.timestamp < last_ts_) {
    throw DataError("out-of-order feed record for trip " + record.trip_id + " at ts " +
                    std::to_string(record.timestamp));
  }
  last_ts_ = record.timestamp;
  saw_any_ = true;

  if (open_ && record.timestamp > open_->window_end()) close_open_session();

  const double dist = haversine_m({record.lat, record.lon}, segment_.camera_point);
  const auto key = std::make_pair(record.trip_id, record.direction);

  if (dist > segment_.activation_radius_m) {
    inside_[key] = false;  // re-arms the trip for a future entry
    return TriggerDecision::None;
  }

  const bool was_inside = inside_[key];
  inside_[key] = true;
  if (was_inside) return TriggerDecision::None;  // still inside, no new edge

  if (open_) {
    if (open_->has_trip(record.trip_id)) return TriggerDecision::None;  // not re-attached
    open_->trips.emplace_back(record.trip_id, record.direction);
    approaches_.push_back(
        {record.trip_id, record.direction, record.timestamp, open_->session_id, record.occupancy});
    return TriggerDecision::JoinSession;
  }

  open_session(record);
  return TriggerDecision::OpenSession;
}

void SessionRegistry::open_session(const VehiclePositionRecord& record) {
  AcquisitionSession s;
  char id[16];
  std::snprintf(id, sizeof id, "s%04d", next_session_++);
  s.session_id = id;
  s.start_ts = record.timestamp;
  s.frame_count = options_.frame_count;
  s.frame_interval_s = options_.frame_interval_s;
  s.trips.emplace_back(record.trip_id, record.direction);
  // The capture schedule is fully determined at open time and does not
  // depend on later joins, so it runs eagerly on the simulated clock.
  run_session_persisting(s, *source_, options_.frames_dir);
  approaches_.push_back(
      {record.trip_id, record.direction, record.timestamp, s.session_id, record.occupancy});
  open_ = std::move(s);
}

void SessionRegistry::close_open_session() {
  sessions_.push_back(std::move(*open_));
  open_.reset();
}

void SessionRegistry::finish() {
  if (open_) close_open_session();
}

const AcquisitionSession* SessionRegistry::find_session(const std::string& session_id) const {
  for (const auto& s : sessions_) {
    if (s.session_id == session_id) return &s;
  }
  if (open_ && open_->session_id == session_id) return &*open_;
  return nullptr;
}

std::vector<TripApproach> SessionRegistry::successful_approaches() const {
  std::vector<TripApproach> out;
  for (const auto& a : approaches_) {
    const auto* s = find_session(a.session_id);
    if (s && !s->failed) out.push_back(a);
  }
  return out;
}

Manifest SessionRegistry::manifest() const {
  Manifest m;
  auto emit = [&m](const AcquisitionSession& s) {
    if (s.failed) return;
    for (const auto& [trip_id, direction] : s.trips) {
      for (const auto& f : s.frames) {
        FrameRecord r;
        r.frame_path = f.frame_path;
        r.trip_id = trip_id;
        r.direction = direction;
        r.capture_ts = f.capture_ts;
        r.session_id = s.session_id;
        m.rows.push_back(std::move(r));
      }
    }
  };
  for (const auto& s : sessions_) emit(s);
  if (open_) emit(*open_);
  return m;
}

void export_trip_database(const std::string& path, const SessionRegistry& registry) {
  csv::Table table;
  table.header = {"trip_id", "direction", "approach_ts", "session_id"};
  for (const auto& a : registry.successful_approaches()) {
    table.rows.push_back(
        {a.trip_id, std::to_string(a.direction), std::to_string(a.approach_ts), a.session_id});
  }
  csv::write_file(path, table);
}

std::vector<TripApproach> read_trip_database(const std::string& path) {
  const auto table = csv::read_file(path);
  std::vector<TripApproach> out;
  if (table.header.empty()) return out;
  const auto c_trip = table.col("trip_id");
  const auto c_dir = table.col("direction");
  const auto c_ts = table.col("approach_ts");
  const auto c_sess = table.col("session_id");
  for (const auto& row : table.rows) {
    TripApproach a;
    a.trip_id = row[c_trip];
    a.direction = std::stoi(row[c_dir]);
    a.approach_ts = std::stoll(row[c_ts]);
    a.session_id = row[c_sess];
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace ttv
