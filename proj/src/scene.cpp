#include "ttv/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <set>

#include "ttv/csv.hpp"
#include "ttv/errors.hpp"
#include "ttv/feed.hpp"
#include "ttv/labeling.hpp"
#include "ttv/timeutil.hpp"

namespace ttv {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Uniform byte-range value from a hash, inclusive bounds.
int hash_range(std::uint64_t h, int lo, int hi) {
  return lo + static_cast<int>(h % static_cast<std::uint64_t>(hi - lo + 1));
}

struct BlobLayout {
  int blob_w, blob_h, pitch, lanes, slots_per_lane;
};

BlobLayout layout_for(const SceneGeometry& g) {
  BlobLayout l;
  l.blob_w = std::max(3, g.width / 24);
  l.blob_h = std::max(3, g.height / 12);
  l.pitch = l.blob_w + std::max(2, l.blob_w / 2);
  l.lanes = 3;
  l.slots_per_lane = std::max(1, (g.width / 2 - 4) / l.pitch);
  return l;
}

}  // namespace

int render_capacity(const SceneGeometry& geometry) {
  const auto l = layout_for(geometry);
  return l.lanes * l.slots_per_lane;
}

double ambient_for_hour(int hour) {
  static constexpr double kTable[24] = {
      0.45, 0.45, 0.45, 0.45, 0.45, 0.45,  // 0-5
      0.55, 0.70, 0.85, 0.95,              // 6-9
      1.00, 1.00, 1.00, 1.00, 1.00, 1.00,  // 10-15
      0.95, 0.90, 0.80, 0.70, 0.60, 0.55,  // 16-21
      0.45, 0.45};
  return kTable[((hour % 24) + 24) % 24];
}

RenderOutput render_with_mask(const SceneState& state, const SceneGeometry& geometry) {
  if (geometry.width <= 0 || geometry.height <= 0) {
    throw ArgumentError("render: zero-area geometry");
  }
  const int W = geometry.width, H = geometry.height;
  RenderOutput out;
  out.frame = RasterFrame(W, H);
  out.vehicle_mask.assign(static_cast<std::size_t>(W) * H, 0);

  // Asphalt background with seeded texture.
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::uint64_t h = mix(state.noise_seed, static_cast<std::uint64_t>(y) * 73856093u + x);
      const int v = 68 + hash_range(h, -6, 6);
      for (int c = 0; c < 3; ++c) out.frame.at(x, y, c) = static_cast<std::uint8_t>(v);
    }
  }
  // Center divider marking.
  for (int y = 0; y < H; ++y) {
    const int x = W / 2;
    for (int c = 0; c < 3; ++c) out.frame.at(x, y, c) = 88;
  }

  const auto l = layout_for(geometry);
  auto draw_side = [&](int direction, int count) {
    count = std::min(count, l.lanes * l.slots_per_lane);
    for (int i = 0; i < count; ++i) {
      const int lane = i % l.lanes;
      const int slot = i / l.lanes;
      const std::uint64_t hb = mix(state.noise_seed, mix(direction + 11, i + 131));
      const int jx = hash_range(mix(hb, 1), -1, 1);
      const int jy = hash_range(mix(hb, 2), -2, 2);
      const int lane_cy = static_cast<int>(std::lround(H * (0.18 + 0.30 * lane)));
      // Queues grow outward from the center divider (stop-line geometry).
      int x0;
      if (direction == 1) {  // inbound, right half
        x0 = W / 2 + 2 + slot * l.pitch + jx;
      } else {  // outbound, left half
        x0 = W / 2 - 2 - l.blob_w - slot * l.pitch + jx;
      }
      const int y0 = lane_cy - l.blob_h / 2 + jy;
      const int base = 170 + hash_range(mix(hb, 3), 0, 70);
      int rgb[3];
      for (int c = 0; c < 3; ++c) {
        rgb[c] = std::clamp(base + hash_range(mix(hb, 4 + c), -30, 30), 0, 255);
      }
      for (int y = std::max(0, y0); y < std::min(H, y0 + l.blob_h); ++y) {
        for (int x = std::max(0, x0); x < std::min(W, x0 + l.blob_w); ++x) {
          for (int c = 0; c < 3; ++c) out.frame.at(x, y, c) = static_cast<std::uint8_t>(rgb[c]);
          out.vehicle_mask[static_cast<std::size_t>(y) * W + x] = 1;
        }
      }
    }
  };
  draw_side(1, state.vehicle_count_inbound);
  draw_side(0, state.vehicle_count_outbound);

  const double ambient = std::clamp(state.ambient_level, 0.0, 1.0);
  for (auto& v : out.frame.pixels) {
    v = static_cast<std::uint8_t>(std::clamp(std::lround(v * ambient), 0L, 255L));
  }
  return out;
}

RasterFrame render(const SceneState& state, const SceneGeometry& geometry) {
  return render_with_mask(state, geometry).frame;
}

double expected_count(double eff_tt_s, const SceneModel& model) {
  const double t = std::clamp((eff_tt_s - model.tt_min) / (model.tt_max - model.tt_min), 0.0, 1.0);
  return model.count_floor + t * (model.count_ceil - model.count_floor);
}

SceneState sample_scene(double eff_tt_s, int direction, int hour, Rng& rng,
                        const SceneModel& model) {
  if (eff_tt_s <= 0) throw ArgumentError("sample_scene: effective travel time must be positive");
  SceneState st;
  double c = expected_count(eff_tt_s, model);
  if (model.count_noise_sd > 0) c += rng.normal(0.0, model.count_noise_sd);
  const int own = std::clamp(static_cast<int>(std::lround(c)), 0, model.max_count);
  const int other = rng.uniform_int(0, model.background_max);
  if (direction == 1) {
    st.vehicle_count_inbound = own;
    st.vehicle_count_outbound = other;
  } else {
    st.vehicle_count_outbound = own;
    st.vehicle_count_inbound = other;
  }
  st.ambient_level = ambient_for_hour(hour);
  st.noise_seed = rng.next_u64();
  return st;
}

ScheduledRenderSource::ScheduledRenderSource(SceneGeometry geometry, std::uint64_t seed,
                                             SceneModel model)
    : geometry_(geometry), seed_(seed), model_(model) {}

void ScheduledRenderSource::add_interval(int direction, Interval interval) {
  (direction == 1 ? inbound_ : outbound_).push_back(interval);
}

int ScheduledRenderSource::count_at(int direction, std::int64_t ts) const {
  const auto& list = direction == 1 ? inbound_ : outbound_;
  for (const auto& iv : list) {
    if (ts >= iv.start && ts <= iv.end) return iv.count;
  }
  // Ambient background traffic outside any scheduled trip window.
  return static_cast<int>(mix(seed_, mix(direction + 301, static_cast<std::uint64_t>(ts / 75))) %
                          static_cast<std::uint64_t>(model_.background_max + 1));
}

SceneState ScheduledRenderSource::state_at(std::int64_t ts) const {
  SceneState st;
  st.vehicle_count_inbound = count_at(1, ts);
  st.vehicle_count_outbound = count_at(0, ts);
  st.ambient_level = ambient_for_hour(hour_of_ts(ts));
  st.noise_seed = mix(seed_, static_cast<std::uint64_t>(ts));
  return st;
}

std::optional<CapturedFrame> ScheduledRenderSource::capture(std::int64_t ts) {
  CapturedFrame cf;
  cf.frame = render(state_at(ts), geometry_);
  cf.frame.capture_ts = ts;
  return cf;
}

ManifestFrameSource::ManifestFrameSource(const Manifest& manifest) {
  for (const auto& r : manifest.rows) path_by_ts_[r.capture_ts] = r.frame_path;
}

std::optional<CapturedFrame> ManifestFrameSource::capture(std::int64_t ts) {
  auto it = path_by_ts_.find(ts);
  if (it == path_by_ts_.end()) return std::nullopt;
  CapturedFrame cf;
  cf.frame = read_ppm(it->second);
  cf.frame.capture_ts = ts;
  cf.path_hint = it->second;
  return cf;
}

namespace {

// Largest-remainder allocation of n trips to the 10/40/40/10 band shares.
std::array<int, 4> band_quotas(int n) {
  const double shares[4] = {0.10, 0.40, 0.40, 0.10};
  std::array<int, 4> q{};
  std::array<std::pair<double, int>, 4> rem;
  int assigned = 0;
  for (int b = 0; b < 4; ++b) {
    const double exact = shares[b] * n;
    q[b] = static_cast<int>(std::floor(exact));
    assigned += q[b];
    rem[b] = {exact - q[b], b};
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < n - assigned; ++i) q[rem[i].second] += 1;
  return q;
}

double peak_bump(int hour) {
  const double am = std::exp(-0.5 * (hour - 8) * (hour - 8) / 1.5);
  const double pm = std::exp(-0.5 * (hour - 17) * (hour - 17) / 1.5);
  return 18.0 * (am + pm);
}

struct SynthTrip {
  std::string trip_id;
  int direction = 0;
  std::int64_t approach_ts = 0;
  double eff_tt = 0;
  double dwell = 0;
  double occupancy = 0;
};

}  // namespace

SynthOutputs generate_synthetic_corpus(const SynthParams& params, const std::string& out_dir) {
  if (params.n_trips <= 0) throw ArgumentError("n_trips must be positive");
  if (params.tt_min >= params.tt_max || params.tt_min <= 0) {
    throw ArgumentError("invalid travel time bounds");
  }
  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);

  SceneModel scene = params.scene;
  if (params.separable) {
    // Cluster centers sit at counts {2, 6, 10, 14}; with the [1, 15] count
    // range and +-2*cluster_sd clamping the four bands occupy disjoint
    // count sets with a full count of separation between neighbors.
    scene.count_floor = 1.0;
    scene.count_ceil = 15.0;
    scene.count_noise_sd = 0.0;
  }
  const SceneGeometry geometry{params.frame_width, params.frame_height};
  if (static_cast<int>(std::lround(scene.count_ceil)) > render_capacity(geometry)) {
    throw ArgumentError("scene count ceiling exceeds render capacity for " +
                        std::to_string(params.frame_width) + "x" +
                        std::to_string(params.frame_height));
  }

  // Approach schedule: alternating-direction slots, offset half a headway,
  // jittered, spanning as many synthetic days as needed. Windows never
  // overlap within a direction, so the traffic state function is
  // unambiguous.
  const int n_in = params.n_trips - params.n_trips / 2;
  const int n_out = params.n_trips / 2;
  Rng sched_rng(derive_seed(params.seed, "schedule"));
  std::vector<SynthTrip> trips;
  const int day_seconds = (params.day_end_hour - params.day_start_hour) * 3600;
  const int slots_per_day = std::max(1, day_seconds / params.headway_s);
  for (int direction = 0; direction <= 1; ++direction) {
    const int want = direction == 1 ? n_in : n_out;
    for (int k = 0; k < want; ++k) {
      const int day = k / slots_per_day;
      const int slot = k % slots_per_day;
      std::int64_t ts = params.start_day_ts + static_cast<std::int64_t>(day) * 86400 +
                        params.day_start_hour * 3600 +
                        static_cast<std::int64_t>(slot) * params.headway_s +
                        (direction == 0 ? params.headway_s / 2 : 0) +
                        sched_rng.uniform_int(-60, 60);
      SynthTrip t;
      t.direction = direction;
      t.approach_ts = ts;
      trips.push_back(t);
    }
  }
  std::sort(trips.begin(), trips.end(),
            [](const auto& a, const auto& b) { return a.approach_ts < b.approach_ts; });
  for (std::size_t i = 0; i < trips.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "t%05zu", i);
    trips[i].trip_id = id;
  }

  // Travel times.
  if (params.separable) {
    for (int direction = 0; direction <= 1; ++direction) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < trips.size(); ++i) {
        if (trips[i].direction == direction) idx.push_back(i);
      }
      const auto quotas = band_quotas(static_cast<int>(idx.size()));
      std::vector<int> bands;
      for (int b = 0; b < 4; ++b) bands.insert(bands.end(), quotas[b], b);
      Rng rng(derive_seed(params.seed, "bands" + std::to_string(direction)));
      std::shuffle(bands.begin(), bands.end(), rng.engine());
      const double tt_span = params.tt_max - params.tt_min;
      const double count_span = scene.count_ceil - scene.count_floor;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const double center_count = 2.0 + 4.0 * bands[j];
        const double center_tt =
            params.tt_min + (center_count - scene.count_floor) * tt_span / count_span;
        const double v = rng.normal(center_tt, params.cluster_sd);
        trips[idx[j]].eff_tt = std::clamp(v, center_tt - 2.0 * params.cluster_sd,
                                          center_tt + 2.0 * params.cluster_sd);
      }
    }
  } else {
    Rng rng(derive_seed(params.seed, "traveltime"));
    for (auto& t : trips) {
      const double mean =
          params.tt_mean + (params.hour_effect ? peak_bump(hour_of_ts(t.approach_ts)) : 0.0);
      double v = rng.normal(mean, params.tt_sd);
      for (int tries = 0; (v < params.tt_min || v > params.tt_max) && tries < 64; ++tries) {
        v = rng.normal(mean, params.tt_sd);
      }
      t.eff_tt = std::clamp(v, params.tt_min, params.tt_max);
    }
  }

  // Dwell and occupancy.
  {
    Rng rng(derive_seed(params.seed, "dwell"));
    for (auto& t : trips) {
      t.dwell = rng.bernoulli(0.5) ? rng.uniform(5.0, 40.0) : 0.0;
      const double occ_mean =
          params.occ_mean + (params.hour_effect ? peak_bump(hour_of_ts(t.approach_ts)) * 0.8 : 0.0);
      t.occupancy = std::clamp(rng.normal(occ_mean, params.occ_sd), 0.0, 150.0);
    }
  }

  // Feed records: one observation outside the radius, the triggering one
  // inside it, and one deep inside. Positions sit on the camera meridian so
  // haversine distance reduces to a latitude offset.
  constexpr double kMetersPerDegLat = 111194.92664455873;  // R * pi / 180
  const double radius = params.segment.activation_radius_m;
  std::vector<VehiclePositionRecord> feed;
  for (const auto& t : trips) {
    const double side = t.direction == 1 ? 1.0 : -1.0;
    auto record = [&](std::int64_t ts, double dist_m) {
      VehiclePositionRecord r;
      r.timestamp = ts;
      r.trip_id = t.trip_id;
      r.direction = t.direction;
      r.lat = params.segment.camera_point.lat + side * dist_m / kMetersPerDegLat;
      r.lon = params.segment.camera_point.lon;
      r.occupancy = t.occupancy;
      return r;
    };
    feed.push_back(record(t.approach_ts - 30, radius * 1.4));
    feed.push_back(record(t.approach_ts, radius * 0.9));
    feed.push_back(record(t.approach_ts + 40, radius * 0.2));
  }
  std::sort(feed.begin(), feed.end(),
            [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

  SynthOutputs out;
  out.feed_path = (dir / "feed.jsonl").string();
  out.avl_path = (dir / "avl.csv").string();
  out.frames_dir = (dir / "frames").string();
  out.manifest_path = (dir / "manifest.csv").string();
  write_feed_file(out.feed_path, feed);

  std::vector<AvlRecord> avl;
  for (const auto& t : trips) {
    avl.push_back({t.trip_id, t.direction, t.eff_tt + t.dwell, t.dwell});
  }
  write_avl_csv(out.avl_path, avl);

  // Scene schedule, then frames via the real session machinery so manifest,
  // sessions, and feed agree by construction.
  ScheduledRenderSource source(geometry, derive_seed(params.seed, "render"), scene);
  const std::int64_t window =
      static_cast<std::int64_t>(params.frames_per_session - 1) * params.frame_interval_s;
  for (const auto& t : trips) {
    Rng rng(derive_seed(params.seed, "scene|" + t.trip_id));
    const SceneState st = sample_scene(t.eff_tt, t.direction, hour_of_ts(t.approach_ts), rng, scene);
    const int own = t.direction == 1 ? st.vehicle_count_inbound : st.vehicle_count_outbound;
    source.add_interval(t.direction, {t.approach_ts, t.approach_ts + window, own});
  }

  SessionRegistryOptions opts;
  opts.frame_count = params.frames_per_session;
  opts.frame_interval_s = params.frame_interval_s;
  opts.frames_dir = out.frames_dir;
  SessionRegistry registry(params.segment, source, opts);
  FeedStream stream;
  stream.records = feed;
  auto it = replay(stream, 1.0);  // as-fast-as-possible
  while (auto rec = it.next()) registry.process_position(*rec);
  registry.finish();

  const Manifest manifest = registry.manifest();
  write_manifest(out.manifest_path, manifest);

  // Latent states behind each captured frame, so tests and tools can rebuild
  // ground-truth vehicle masks via render_with_mask.
  out.scenes_path = (dir / "scenes.csv").string();
  {
    csv::Table table;
    table.header = {"capture_ts", "count_inbound", "count_outbound", "ambient", "noise_seed"};
    std::set<std::int64_t> seen_ts;
    for (const auto& row : manifest.rows) {
      if (!seen_ts.insert(row.capture_ts).second) continue;
      const SceneState st = source.state_at(row.capture_ts);
      char ambient[32];
      std::snprintf(ambient, sizeof ambient, "%.6f", st.ambient_level);
      table.rows.push_back({std::to_string(row.capture_ts),
                            std::to_string(st.vehicle_count_inbound),
                            std::to_string(st.vehicle_count_outbound), ambient,
                            std::to_string(st.noise_seed)});
    }
    csv::write_file(out.scenes_path, table);
  }

  out.n_trips = trips.size();
  out.n_frames = manifest.rows.size();
  return out;
}

}  // namespace ttv

namespace ttv {

std::map<std::int64_t, SceneState> read_scene_states(const std::string& path) {
  const auto table = csv::read_file(path);
  std::map<std::int64_t, SceneState> out;
  const auto c_ts = table.col("capture_ts");
  const auto c_in = table.col("count_inbound");
  const auto c_out = table.col("count_outbound");
  const auto c_amb = table.col("ambient");
  const auto c_seed = table.col("noise_seed");
  for (const auto& row : table.rows) {
    SceneState st;
    st.vehicle_count_inbound = std::stoi(row[c_in]);
    st.vehicle_count_outbound = std::stoi(row[c_out]);
    st.ambient_level = std::stod(row[c_amb]);
    st.noise_seed = std::stoull(row[c_seed]);
    out[std::stoll(row[c_ts])] = st;
  }
  return out;
}

}  // namespace ttv
