#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ttv {

// One observation from the vehicle-position feed.
struct VehiclePositionRecord {
  std::int64_t timestamp = 0;  // Unix seconds
  std::string trip_id;
  int direction = 0;  // 0 = outbound, 1 = inbound
  double lat = 0;
  double lon = 0;
  double occupancy = 0;  // percent of seating capacity, [0, 150]

  bool operator==(const VehiclePositionRecord&) const = default;
};

enum class ClockMode { RealtimeScaled, AsFastAsPossible };

struct FeedStream {
  std::vector<VehiclePositionRecord> records;  // non-decreasing in timestamp
  ClockMode clock_mode = ClockMode::AsFastAsPossible;
};

struct FeedParseReport {
  std::size_t accepted = 0;
  std::size_t skipped = 0;             // malformed + invariant violations + duplicates
  std::size_t duplicates = 0;          // subset of skipped
  std::size_t first_bad_line = 0;      // 1-based, 0 if none
  std::vector<std::string> messages;   // capped diagnostics
};

// Parses a newline-delimited JSON feed file (keys ts, trip, dir, lat, lon,
// occ; unknown keys ignored). Invalid lines are skipped and counted; records
// sharing (trip_id, timestamp) keep the first occurrence in file order.
// Throws IoError when the file cannot be read and FormatError when more than
// half of the non-empty lines are malformed.
FeedStream parse_feed_file(const std::string& path, FeedParseReport* report = nullptr);

// Inverse of parse_feed_file for valid streams.
void write_feed_file(const std::string& path, const std::vector<VehiclePositionRecord>& records);

// Emits records in timestamp order. In RealtimeScaled mode consecutive events
// are spaced by (delta timestamp) / speedup of wall time; AsFastAsPossible
// never sleeps. One consumer at a time.
class ReplayIterator {
 public:
  ReplayIterator(const FeedStream& stream, double speedup);

  std::optional<VehiclePositionRecord> next();
  bool done() const { return index_ >= stream_->records.size(); }

 private:
  const FeedStream* stream_;
  double speedup_;
  std::size_t index_ = 0;
  std::int64_t last_ts_ = 0;
  bool emitted_any_ = false;
};

ReplayIterator replay(const FeedStream& stream, double speedup);

}  // namespace ttv
