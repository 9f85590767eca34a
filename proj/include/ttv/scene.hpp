#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ttv/image.hpp"
#include "ttv/rng.hpp"
#include "ttv/trigger.hpp"

namespace ttv {

// Latent traffic state behind one rendered frame. Inbound vehicles appear on
// the right half of the frame, outbound on the left.
struct SceneState {
  int vehicle_count_inbound = 0;
  int vehicle_count_outbound = 0;
  double ambient_level = 1.0;  // [0, 1] day/night brightness proxy
  std::uint64_t noise_seed = 0;
};

struct SceneGeometry {
  int width = 1280;
  int height = 720;
};

// Maximum number of blobs one half of the frame can hold.
int render_capacity(const SceneGeometry& geometry);

// Daylight curve; deterministic per hour, 1.0 midday, ~0.45 at night.
double ambient_for_hour(int hour);

struct RenderOutput {
  RasterFrame frame;
  std::vector<std::uint8_t> vehicle_mask;  // 1 per pixel covered by a vehicle blob
};

// Pure function of (state, geometry): identical bytes on every call. Counts
// beyond render_capacity are truncated.
RenderOutput render_with_mask(const SceneState& state, const SceneGeometry& geometry);
RasterFrame render(const SceneState& state, const SceneGeometry& geometry);

// Calibration from effective travel time to expected vehicle count.
struct SceneModel {
  double count_floor = 1.0;
  double count_ceil = 15.0;
  double tt_min = 35.0;
  double tt_max = 310.0;
  double count_noise_sd = 0.6;
  int max_count = 30;
  int background_max = 4;  // cap for opposite-direction ambient traffic
};

// Linear in effective travel time, clamped to [count_floor, count_ceil].
double expected_count(double eff_tt_s, const SceneModel& model);

// Draws a scene whose count on the trip's side follows expected_count plus
// noise; the opposite side gets independent background traffic. ambient is a
// deterministic function of the hour.
SceneState sample_scene(double eff_tt_s, int direction, int hour, Rng& rng,
                        const SceneModel& model = {});

struct SynthParams {
  int n_trips = 40;
  std::uint64_t seed = 1;

  // Travel time distribution.
  bool separable = false;  // four gapped clusters at exact 10/40/40/10 shares
  double tt_mean = 124.0;
  double tt_sd = 38.0;
  double tt_min = 35.0;
  double tt_max = 310.0;
  double cluster_sd = 8.0;  // separable mode

  // Adds a peak-hour bump to mean travel time and occupancy (TruncNormal only).
  bool hour_effect = true;

  int frame_width = 256;
  int frame_height = 256;
  int frames_per_session = 6;
  int frame_interval_s = 15;

  MonitoredSegment segment{{42.3647, -71.1032}, 500.0, 1000.0};
  std::int64_t start_day_ts = 1650240000;  // midnight UTC
  int day_start_hour = 6;
  int day_end_hour = 21;
  int headway_s = 600;

  SceneModel scene;

  double occ_mean = 34.6;
  double occ_sd = 26.67;
};

struct SynthOutputs {
  std::string feed_path;
  std::string avl_path;
  std::string frames_dir;
  std::string manifest_path;
  std::string scenes_path;  // per-frame latent states, for mask reconstruction
  std::size_t n_trips = 0;
  std::size_t n_frames = 0;
};

// scenes.csv row: capture_ts,count_inbound,count_outbound,ambient,noise_seed.
std::map<std::int64_t, SceneState> read_scene_states(const std::string& path);

// Writes a self-consistent fixture under out_dir: a feed whose trips cross
// the activation radius, an AVL file, rendered frames for every acquisition
// session, and the frame manifest. Byte-identical for identical params.
SynthOutputs generate_synthetic_corpus(const SynthParams& params, const std::string& out_dir);

// Frame source that renders the scheduled traffic state at any timestamp;
// used by the corpus generator and by trigger replays over synthetic feeds.
class ScheduledRenderSource : public FrameSource {
 public:
  struct Interval {
    std::int64_t start = 0;
    std::int64_t end = 0;  // inclusive
    int count = 0;
  };

  ScheduledRenderSource(SceneGeometry geometry, std::uint64_t seed, SceneModel model = {});

  void add_interval(int direction, Interval interval);
  std::optional<CapturedFrame> capture(std::int64_t ts) override;

  SceneState state_at(std::int64_t ts) const;

 private:
  int count_at(int direction, std::int64_t ts) const;

  SceneGeometry geometry_;
  std::uint64_t seed_;
  SceneModel model_;
  std::vector<Interval> inbound_, outbound_;
};

// Frame source backed by an existing manifest: capture(ts) loads the frame
// recorded at that timestamp. Used to replay a feed against already-rendered
// frames without duplicating them.
class ManifestFrameSource : public FrameSource {
 public:
  explicit ManifestFrameSource(const Manifest& manifest);
  std::optional<CapturedFrame> capture(std::int64_t ts) override;

 private:
  std::map<std::int64_t, std::string> path_by_ts_;
};

}  // namespace ttv
