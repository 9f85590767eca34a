#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "testutil.hpp"
#include "ttv/errors.hpp"
#include "ttv/feed.hpp"
#include "ttv/labeling.hpp"
#include "ttv/rng.hpp"
#include "ttv/scene.hpp"
#include "ttv/trigger.hpp"

using namespace ttv;

namespace {

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t pos = 0; pos < idx.size();) {
      std::size_t end = pos;
      while (end < idx.size() && v[idx[end]] == v[idx[pos]]) ++end;
      const double mean_rank = (pos + end - 1) / 2.0;
      for (std::size_t k = pos; k < end; ++k) r[idx[k]] = mean_rank;
      pos = end;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("render is a pure function of state and geometry") {
  SceneState st;
  st.vehicle_count_inbound = 7;
  st.vehicle_count_outbound = 3;
  st.ambient_level = 0.8;
  st.noise_seed = 12345;
  const SceneGeometry g{96, 96};
  const RasterFrame a = render(st, g);
  const RasterFrame b = render(st, g);
  CHECK(a.pixels == b.pixels);
  CHECK_THROWS_AS(render(st, SceneGeometry{0, 10}), ArgumentError);
}

TEST_CASE("empty scene variance comes only from the seeded texture") {
  SceneState st;
  st.ambient_level = 1.0;
  st.noise_seed = 77;
  const RasterFrame f = render(st, SceneGeometry{96, 96});
  CHECK(stddev_luma(f, 0, 0, 96, 96) > 0.5);
  st.noise_seed = 78;
  const RasterFrame g = render(st, SceneGeometry{96, 96});
  CHECK(f.pixels != g.pixels);  // the texture is seed-driven
}

TEST_CASE("vehicle counts move the half-frame luminance beyond noise") {
  const SceneGeometry g{96, 96};
  SceneState empty;
  empty.ambient_level = 1.0;
  empty.noise_seed = 5;
  const RasterFrame base = render(empty, g);
  const double sigma = stddev_luma(base, 48, 0, 96, 96);

  SceneState many = empty;
  many.vehicle_count_inbound = 20;
  SceneState few = empty;
  few.vehicle_count_inbound = 2;
  const double lum_many = mean_luma(render(many, g), 48, 0, 96, 96);
  const double lum_few = mean_luma(render(few, g), 48, 0, 96, 96);
  CHECK(lum_many - lum_few > 3.0 * sigma);
}

TEST_CASE("inbound renders right, outbound renders left") {
  const SceneGeometry g{96, 96};
  SceneState st;
  st.noise_seed = 9;
  st.vehicle_count_inbound = 8;
  const auto in_only = render_with_mask(st, g);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width / 2; ++x) {
      CHECK(in_only.vehicle_mask[y * g.width + x] == 0);
    }
  }
  st.vehicle_count_inbound = 0;
  st.vehicle_count_outbound = 8;
  const auto out_only = render_with_mask(st, g);
  long left = 0, right = 0;
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      (x < g.width / 2 ? left : right) += out_only.vehicle_mask[y * g.width + x];
    }
  }
  CHECK(left > 0);
  CHECK(right == 0);
}

TEST_CASE("ambient level scales global brightness") {
  SceneState st;
  st.vehicle_count_inbound = 5;
  st.noise_seed = 3;
  st.ambient_level = 1.0;
  const double day = mean_luma(render(st, SceneGeometry{64, 64}), 0, 0, 64, 64);
  st.ambient_level = 0.5;
  const double night = mean_luma(render(st, SceneGeometry{64, 64}), 0, 0, 64, 64);
  CHECK(night < 0.6 * day);
  CHECK(ambient_for_hour(12) == doctest::Approx(1.0));
  CHECK(ambient_for_hour(2) < 0.5);
}

TEST_CASE("sample_scene is deterministic and spans floor to ceiling") {
  SceneModel model;
  Rng a(42), b(42);
  const SceneState sa = sample_scene(150, 1, 9, a, model);
  const SceneState sb = sample_scene(150, 1, 9, b, model);
  CHECK(sa.vehicle_count_inbound == sb.vehicle_count_inbound);
  CHECK(sa.vehicle_count_outbound == sb.vehicle_count_outbound);
  CHECK(sa.noise_seed == sb.noise_seed);
  CHECK(sa.ambient_level == doctest::Approx(ambient_for_hour(9)));

  CHECK(expected_count(model.tt_min, model) == doctest::Approx(model.count_floor));
  CHECK(expected_count(model.tt_max, model) == doctest::Approx(model.count_ceil));
  CHECK(expected_count(model.tt_min - 100, model) == doctest::Approx(model.count_floor));
  CHECK_THROWS_AS(sample_scene(-1, 1, 9, a, model), ArgumentError);

  // Noise-free expectations at the extremes.
  SceneModel exact = model;
  exact.count_noise_sd = 0.0;
  Rng c(1);
  CHECK(sample_scene(model.tt_min, 1, 12, c, exact).vehicle_count_inbound ==
        static_cast<int>(std::lround(model.count_floor)));
  CHECK(sample_scene(model.tt_max, 1, 12, c, exact).vehicle_count_inbound ==
        static_cast<int>(std::lround(model.count_ceil)));
}

TEST_CASE("vehicle count is monotone in travel time (rank correlation)") {
  SceneModel model;
  Rng rng(101);
  std::vector<double> tts, counts;
  for (int i = 0; i < 1000; ++i) {
    const double tt = rng.uniform(model.tt_min, model.tt_max);
    const SceneState st = sample_scene(tt, 1, 12, rng, model);
    tts.push_back(tt);
    counts.push_back(st.vehicle_count_inbound);
  }
  CHECK(spearman(tts, counts) >= 0.8);
}

TEST_CASE("render capacity grows with geometry") {
  CHECK(render_capacity(SceneGeometry{96, 96}) >= 18);
  CHECK(render_capacity(SceneGeometry{64, 64}) >= 15);
  CHECK(render_capacity(SceneGeometry{1280, 720}) >= 18);
}

TEST_CASE("single-trip corpus has the right cardinalities") {
  testutil::TempDir tmp("synth1");
  SynthParams params;
  params.n_trips = 1;
  params.seed = 9;
  params.frame_width = 64;
  params.frame_height = 64;
  params.scene.count_ceil = 12.0;
  const SynthOutputs outs = generate_synthetic_corpus(params, tmp.str());

  const FeedStream feed = parse_feed_file(outs.feed_path);
  CHECK(feed.records.size() >= 2);
  CHECK(read_avl_csv(outs.avl_path).size() == 1);
  const Manifest manifest = read_manifest(outs.manifest_path);
  CHECK(manifest.rows.size() == 6);
  for (const auto& row : manifest.rows) {
    CHECK(std::filesystem::exists(row.frame_path));
    const RasterFrame f = read_ppm(row.frame_path);
    CHECK(f.width == 64);
    CHECK(f.height == 64);
  }
}

TEST_CASE("generated corpora replay and label with zero skips") {
  testutil::TempDir tmp("synthv");
  SynthParams params;
  params.n_trips = 60;
  params.seed = 4;
  params.frame_width = 64;
  params.frame_height = 64;
  params.scene.count_ceil = 12.0;
  const SynthOutputs outs = generate_synthetic_corpus(params, tmp.str());

  FeedParseReport report;
  const FeedStream feed = parse_feed_file(outs.feed_path, &report);
  CHECK(report.skipped == 0);

  const Manifest manifest = read_manifest(outs.manifest_path);
  ManifestFrameSource source(manifest);
  SessionRegistry registry(params.segment, source);
  for (const auto& r : feed.records) registry.process_position(r);
  registry.finish();
  CHECK(registry.successful_approaches().size() == 60);

  LabelReport label_report;
  const Manifest labeled =
      label_dataset(manifest, registry.successful_approaches(), read_avl_csv(outs.avl_path),
                    ScopePolicy::PerDirection, &label_report);
  CHECK(label_report.dropped == 0);
  CHECK(labeled.rows.size() == manifest.rows.size());
}

TEST_CASE("trigger replay reproduces the generator's own sessions") {
  testutil::TempDir tmp("synthr");
  SynthParams params;
  params.n_trips = 20;
  params.seed = 12;
  params.frame_width = 64;
  params.frame_height = 64;
  params.scene.count_ceil = 12.0;
  const SynthOutputs outs = generate_synthetic_corpus(params, tmp.str());

  const Manifest manifest = read_manifest(outs.manifest_path);
  ManifestFrameSource source(manifest);
  SessionRegistry registry(params.segment, source);
  const FeedStream feed = parse_feed_file(outs.feed_path);
  for (const auto& r : feed.records) registry.process_position(r);
  registry.finish();

  const Manifest again = registry.manifest();
  REQUIRE(again.rows.size() == manifest.rows.size());
  for (std::size_t i = 0; i < again.rows.size(); ++i) {
    CHECK(again.rows[i].frame_path == manifest.rows[i].frame_path);
    CHECK(again.rows[i].capture_ts == manifest.rows[i].capture_ts);
    CHECK(again.rows[i].session_id == manifest.rows[i].session_id);
  }
}

TEST_CASE("same seed produces a byte-identical corpus") {
  testutil::TempDir a("synth_a"), b("synth_b");
  SynthParams params;
  params.n_trips = 8;
  params.seed = 77;
  params.frame_width = 64;
  params.frame_height = 64;
  params.scene.count_ceil = 12.0;
  const SynthOutputs oa = generate_synthetic_corpus(params, a.str());
  const SynthOutputs ob = generate_synthetic_corpus(params, b.str());

  CHECK(file_bytes(oa.feed_path) == file_bytes(ob.feed_path));
  CHECK(file_bytes(oa.avl_path) == file_bytes(ob.avl_path));
  const Manifest ma = read_manifest(oa.manifest_path);
  const Manifest mb = read_manifest(ob.manifest_path);
  REQUIRE(ma.rows.size() == mb.rows.size());
  for (std::size_t i = 0; i < ma.rows.size(); ++i) {
    CHECK(file_bytes(ma.rows[i].frame_path) == file_bytes(mb.rows[i].frame_path));
  }
}

TEST_CASE("large corpus reproduces the configured moments within sampling error") {
  testutil::TempDir tmp("synth_moments");
  SynthParams params;
  params.n_trips = 2992;
  params.seed = 2;
  params.frame_width = 32;
  params.frame_height = 32;
  params.scene.count_ceil = 6.0;  // fits the small frame capacity
  params.hour_effect = false;
  const SynthOutputs outs = generate_synthetic_corpus(params, tmp.str());

  const auto avl = read_avl_csv(outs.avl_path);
  REQUIRE(avl.size() == 2992);
  std::vector<double> eff;
  for (const auto& r : avl) eff.push_back(effective_travel_time(r).value_s);
  double mean = 0;
  for (double v : eff) mean += v;
  mean /= eff.size();
  double ss = 0;
  for (double v : eff) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (eff.size() - 1.0));
  CHECK(std::abs(mean - 124.0) < 3.0);
  CHECK(std::abs(sd - 38.0) < 3.0);
  const auto mm = std::minmax_element(eff.begin(), eff.end());
  CHECK(*mm.first >= params.tt_min);
  CHECK(*mm.second <= params.tt_max);
}

TEST_CASE("separable corpus allocates exact band shares per direction") {
  testutil::TempDir tmp("synth_sep");
  SynthParams params;
  params.n_trips = 100;
  params.seed = 5;
  params.separable = true;
  params.frame_width = 64;
  params.frame_height = 64;
  const SynthOutputs outs = generate_synthetic_corpus(params, tmp.str());

  const auto avl = read_avl_csv(outs.avl_path);
  std::vector<EffectiveTravelTime> values;
  for (const auto& r : avl) values.push_back(effective_travel_time(r));
  for (const auto scope : {ThresholdScope::Inbound, ThresholdScope::Outbound}) {
    const BandThresholds t = compute_thresholds(values, scope);
    std::array<int, 4> counts{};
    int total = 0;
    for (const auto& v : values) {
      if ((scope == ThresholdScope::Inbound) != (v.direction == 1)) continue;
      counts[static_cast<int>(assign_band(v.value_s, t))] += 1;
      ++total;
    }
    CHECK(counts[0] == total / 10);
    CHECK(counts[3] == total / 10);
    CHECK(counts[1] == total * 4 / 10);
    CHECK(counts[2] == total * 4 / 10);
  }
}
