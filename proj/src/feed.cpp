#include "ttv/feed.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "ttv/errors.hpp"

namespace ttv {

namespace {

constexpr std::size_t kMaxMessages = 32;

void note(FeedParseReport* rep, std::size_t lineno, const std::string& why) {
  if (!rep) return;
  if (rep->first_bad_line == 0) rep->first_bad_line = lineno;
  if (rep->messages.size() < kMaxMessages) {
    rep->messages.push_back("line " + std::to_string(lineno) + ": " + why);
  }
}

// Returns an error description, or empty when the line parses cleanly.
std::string parse_line(const std::string& line, VehiclePositionRecord* out) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return "not a JSON object";
  if (!j.contains("ts") || !j["ts"].is_number_integer()) return "missing/invalid 'ts'";
  if (!j.contains("trip") || !j["trip"].is_string()) return "missing/invalid 'trip'";
  if (!j.contains("dir") || !j["dir"].is_number_integer()) return "missing/invalid 'dir'";
  if (!j.contains("lat") || !j["lat"].is_number()) return "missing/invalid 'lat'";
  if (!j.contains("lon") || !j["lon"].is_number()) return "missing/invalid 'lon'";
  if (!j.contains("occ") || !j["occ"].is_number()) return "missing/invalid 'occ'";

  VehiclePositionRecord r;
  r.timestamp = j["ts"].get<std::int64_t>();
  r.trip_id = j["trip"].get<std::string>();
  r.direction = j["dir"].get<int>();
  r.lat = j["lat"].get<double>();
  r.lon = j["lon"].get<double>();
  r.occupancy = j["occ"].get<double>();

  if (r.timestamp <= 0) return "ts must be positive";
  if (r.trip_id.empty()) return "empty trip id";
  if (r.direction != 0 && r.direction != 1) return "dir must be 0 or 1";
  if (r.lat < -90.0 || r.lat > 90.0) return "lat out of [-90, 90]";
  if (r.lon < -180.0 || r.lon > 180.0) return "lon out of [-180, 180]";
  if (r.occupancy < 0.0 || r.occupancy > 150.0) return "occ out of [0, 150]";
  *out = std::move(r);
  return {};
}

}  // namespace

FeedStream parse_feed_file(const std::string& path, FeedParseReport* report) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feed file " + path);

  FeedParseReport local;
  FeedParseReport* rep = report ? report : &local;
  *rep = {};

  FeedStream stream;
  std::set<std::pair<std::string, std::int64_t>> seen;
  std::string line;
  std::size_t lineno = 0;
  std::size_t considered = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++considered;
    VehiclePositionRecord r;
    std::string err = parse_line(line, &r);
    if (!err.empty()) {
      ++rep->skipped;
      note(rep, lineno, err);
      continue;
    }
    if (!seen.insert({r.trip_id, r.timestamp}).second) {
      ++rep->skipped;
      ++rep->duplicates;
      note(rep, lineno, "duplicate (trip, ts) pair");
      continue;
    }
    stream.records.push_back(std::move(r));
    ++rep->accepted;
  }

  if (considered > 0 && rep->skipped - rep->duplicates > considered / 2) {
    throw FormatError(path + ": more than half of the lines are malformed, first at line " +
                      std::to_string(rep->first_bad_line));
  }

  std::stable_sort(stream.records.begin(), stream.records.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return stream;
}

void write_feed_file(const std::string& path, const std::vector<VehiclePositionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feed file " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["ts"] = r.timestamp;
    j["trip"] = r.trip_id;
    j["dir"] = r.direction;
    j["lat"] = r.lat;
    j["lon"] = r.lon;
    j["occ"] = r.occupancy;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

ReplayIterator::ReplayIterator(const FeedStream& stream, double speedup)
    : stream_(&stream), speedup_(speedup) {
  if (speedup <= 0) throw ArgumentError("replay speedup must be positive");
}

std::optional<VehiclePositionRecord> ReplayIterator::next() {
  if (index_ >= stream_->records.size()) return std::nullopt;
  const auto& r = stream_->records[index_++];
  if (stream_->clock_mode == ClockMode::RealtimeScaled && emitted_any_) {
    const double wait_s = static_cast<double>(r.timestamp - last_ts_) / speedup_;
    if (wait_s > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    }
  }
  last_ts_ = r.timestamp;
  emitted_any_ = true;
  return r;
}

ReplayIterator replay(const FeedStream& stream, double speedup) {
  return ReplayIterator(stream, speedup);
}

}  // namespace ttv
