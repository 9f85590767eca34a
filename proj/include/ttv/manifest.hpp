#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttv/labeling_types.hpp"

namespace ttv {

// One dataset row: a frame associated with one trip. The same frame file can
// appear under several trips when an acquisition session served multiple
// vehicles. (frame_path, trip_id) identifies a row.
struct FrameRecord {
  std::string frame_path;
  std::string trip_id;
  int direction = 0;
  std::int64_t capture_ts = 0;
  std::string session_id;

  // Present once labeled.
  std::optional<double> eff_tt_s;
  std::optional<TravelTimeBand> band;

  // Augmentation lineage; empty for originals.
  std::string source_frame_id;  // source row's frame_path
  std::string actions;          // e.g. "crop;brightness"
  std::string magnitudes;       // e.g. "crop=48x52+3+1;brightness=1.13"

  bool is_augmented() const { return !source_frame_id.empty(); }
};

enum class ManifestKind { Base, Labeled, Expanded };

struct Manifest {
  ManifestKind kind = ManifestKind::Base;
  std::vector<FrameRecord> rows;
};

// Column sets: Base = frame_path,trip_id,direction,capture_ts,session_id;
// Labeled adds eff_tt_s,band; Expanded adds source_frame_id,actions,magnitudes.
Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

}  // namespace ttv
