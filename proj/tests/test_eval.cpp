#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "oracles.hpp"
#include "testutil.hpp"
#include "ttv/errors.hpp"
#include "ttv/eval.hpp"
#include "ttv/rng.hpp"

using namespace ttv;

namespace {

// Labeled manifest: n_trips per band, frames_per_trip frames each, plus
// optional augmented variants per frame.
Manifest fold_fixture(int trips_per_band, int frames_per_trip, int aug_per_frame) {
  Manifest m;
  m.kind = aug_per_frame > 0 ? ManifestKind::Expanded : ManifestKind::Labeled;
  int trip_no = 0;
  for (int band = 0; band < kNumBands; ++band) {
    for (int t = 0; t < trips_per_band; ++t, ++trip_no) {
      const std::string trip = "t" + std::to_string(trip_no);
      for (int f = 0; f < frames_per_trip; ++f) {
        FrameRecord r;
        r.frame_path = trip + "_f" + std::to_string(f) + ".ppm";
        r.trip_id = trip;
        r.direction = trip_no % 2;
        r.capture_ts = 1650240000 + trip_no * 600 + f * 15;
        r.session_id = "s" + std::to_string(trip_no);
        r.eff_tt_s = 50.0 + band * 40.0;
        r.band = static_cast<TravelTimeBand>(band);
        m.rows.push_back(r);
        for (int a = 0; a < aug_per_frame; ++a) {
          FrameRecord v = r;
          v.frame_path = trip + "_f" + std::to_string(f) + "_aug" + std::to_string(a) + ".ppm";
          v.source_frame_id = r.frame_path;
          v.actions = "brightness";
          v.magnitudes = "brightness=1.1";
          m.rows.push_back(v);
        }
      }
    }
  }
  return m;
}

Vec one_hot_probs(int band, double confidence = 0.9) {
  Vec p = Vec::Constant(4, (1.0 - confidence) / 3.0);
  p(band) = confidence;
  return p;
}

}  // namespace

TEST_CASE("stratified folds put five trips per band in each test side") {
  const Manifest m = fold_fixture(25, 6, 0);  // 100 trips, 25 per band
  const FoldPlan plan = make_folds(m, 5, 42);
  REQUIRE(plan.k == 5);
  for (int f = 0; f < 5; ++f) {
    std::map<int, int> per_band;
    for (const auto& trip : plan.test_trips[f]) {
      for (const auto& row : m.rows) {
        if (row.trip_id == trip) {
          per_band[static_cast<int>(*row.band)] += 1;
          break;
        }
      }
    }
    for (int b = 0; b < kNumBands; ++b) CHECK(per_band[b] == 5);
  }
}

TEST_CASE("every row lands in the test side of exactly one fold") {
  const Manifest m = fold_fixture(10, 3, 1);
  const FoldPlan plan = make_folds(m, 5, 7);
  std::map<std::size_t, int> test_count;
  for (int f = 0; f < plan.k; ++f) {
    for (auto i : plan.test_rows[f]) test_count[i] += 1;
    // train and test partition the rows within each fold
    CHECK(plan.train_rows[f].size() + plan.test_rows[f].size() == m.rows.size());
  }
  CHECK(test_count.size() == m.rows.size());
  for (const auto& [row, n] : test_count) CHECK(n == 1);
}

TEST_CASE("augmented variants follow their source trip's side (lineage audit)") {
  const Manifest m = fold_fixture(10, 3, 2);
  const FoldPlan plan = make_folds(m, 5, 99);
  for (int f = 0; f < plan.k; ++f) {
    std::set<std::string> test_trips(plan.test_trips[f].begin(), plan.test_trips[f].end());
    for (auto i : plan.train_rows[f]) {
      CHECK(!test_trips.count(m.rows[i].trip_id));
      if (m.rows[i].is_augmented()) {
        // The variant's source frame must also be on the training side.
        bool source_in_train = false;
        for (auto j : plan.train_rows[f]) {
          if (m.rows[j].frame_path == m.rows[i].source_frame_id) source_in_train = true;
        }
        CHECK(source_in_train);
      }
    }
  }
}

TEST_CASE("folds are deterministic in the seed and small strata fail loudly") {
  const Manifest m = fold_fixture(6, 2, 0);
  const FoldPlan a = make_folds(m, 5, 1);
  const FoldPlan b = make_folds(m, 5, 1);
  for (int f = 0; f < 5; ++f) CHECK(a.test_trips[f] == b.test_trips[f]);
  const FoldPlan c = make_folds(m, 5, 2);
  bool any_differs = false;
  for (int f = 0; f < 5; ++f) any_differs |= a.test_trips[f] != c.test_trips[f];
  CHECK(any_differs);

  const Manifest small = fold_fixture(3, 2, 0);  // 3 trips per band < k
  try {
    make_folds(small, 5, 1);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("Low") != std::string::npos);
  }
}

TEST_CASE("perfect predictions give an identity confusion pattern") {
  std::vector<int> truths, preds;
  for (int i = 0; i < 40; ++i) {
    truths.push_back(i % 4);
    preds.push_back(i % 4);
  }
  const auto [cm, metrics] = evaluate_frames(preds, truths);
  const auto norm = cm.normalized();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(norm[r][c] == doctest::Approx(r == c ? 1.0 : 0.0));
  }
  for (int c = 0; c < 4; ++c) {
    CHECK(metrics.precision[c] == doctest::Approx(1.0));
    CHECK(metrics.recall[c] == doctest::Approx(1.0));
    CHECK(metrics.f1[c] == doctest::Approx(1.0));
  }
  CHECK(metrics.accuracy == doctest::Approx(1.0));
  CHECK(cm.non_adjacent_confusions() == 0);
}

TEST_CASE("the all-Moderate predictor on a 10/40/40/10 corpus") {
  std::vector<int> truths, preds;
  for (int i = 0; i < 100; ++i) {
    const int band = i < 10 ? 0 : i < 50 ? 1 : i < 90 ? 2 : 3;
    truths.push_back(band);
    preds.push_back(1);
  }
  const auto [cm, metrics] = evaluate_frames(preds, truths);
  CHECK(metrics.accuracy == doctest::Approx(0.40));
  CHECK(metrics.recall[1] == doctest::Approx(1.0));
  CHECK(metrics.recall[0] == doctest::Approx(0.0));
  CHECK(metrics.recall[2] == doctest::Approx(0.0));
  CHECK(metrics.recall[3] == doctest::Approx(0.0));
  CHECK(metrics.precision[1] == doctest::Approx(0.40));
}

TEST_CASE("random confusion counts match the counting oracle") {
  Rng rng(55);
  std::vector<int> truths, preds;
  for (int i = 0; i < 1000; ++i) {
    truths.push_back(rng.uniform_int(0, 3));
    preds.push_back(rng.uniform_int(0, 3));
  }
  const auto [cm, metrics] = evaluate_frames(preds, truths);
  const auto oracle = oracles::confusion_counts(preds, truths);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(cm.counts[r][c] == oracle[r][c]);
  }
  CHECK(cm.total() == 1000);

  // Column sums of the normalized matrix are 1 for non-empty columns.
  const auto norm = cm.normalized();
  for (int c = 0; c < 4; ++c) {
    double sum = 0;
    for (int r = 0; r < 4; ++r) sum += norm[r][c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  CHECK_THROWS_AS(evaluate_frames({5}, {0}), DataError);
  CHECK_THROWS_AS(evaluate_frames({0, 1}, {0}), ArgumentError);
}

TEST_CASE("fold summary reports mean and spread") {
  ClassMetrics a, b;
  a.accuracy = 0.80;
  b.accuracy = 0.84;
  for (int c = 0; c < 4; ++c) {
    a.precision[c] = 0.7;
    b.precision[c] = 0.9;
    a.recall[c] = 0.6;
    b.recall[c] = 0.6;
    a.f1[c] = 155.0 / 240.0;
    b.f1[c] = 0.72;
  }
  const FoldSummary s = summarize_folds({a, b});
  CHECK(s.accuracy_mean == doctest::Approx(0.82));
  CHECK(s.accuracy_spread == doctest::Approx(0.04));
  CHECK(s.precision_mean[0] == doctest::Approx(0.8));
  CHECK(s.precision_spread[0] == doctest::Approx(0.2));
  CHECK(s.recall_spread[0] == doctest::Approx(0.0));
}

TEST_CASE("sequence prediction averages probabilities and breaks ties low") {
  Vec a(4), b(4);
  a << 0.6, 0.4, 0.0, 0.0;
  b << 0.2, 0.8, 0.0, 0.0;
  CHECK(sequence_predict({a}) == 0);       // single frame: identity
  CHECK(sequence_predict({a, b}) == 1);    // mean (0.4, 0.6, 0, 0)

  Vec tie(4);
  tie << 0.4, 0.4, 0.1, 0.1;
  CHECK(sequence_predict({tie}) == 0);     // exact tie goes to the lower band
  CHECK_THROWS_AS(sequence_predict({}), ArgumentError);
}

TEST_CASE("sequence inference groups by trip and is order-invariant") {
  const Manifest m = fold_fixture(2, 3, 0);  // 8 trips x 3 frames
  FrameDataset ds;
  for (const auto& row : m.rows) {
    ds.frames.emplace_back(1, 1);
    ds.labels.push_back(static_cast<int>(*row.band));
    ds.trip_ids.push_back(row.trip_id);
    ds.capture_ts.push_back(row.capture_ts);
    ds.directions.push_back(row.direction);
    ds.augmented.push_back(false);
  }
  Rng rng(77);
  std::vector<Vec> probs;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Vec p(4);
    for (int c = 0; c < 4; ++c) p(c) = rng.uniform(0.01, 1.0);
    p /= p.sum();
    probs.push_back(p);
  }
  auto rows = sequence_inference(ds, probs);
  CHECK(rows.size() == 8);

  // Shuffle frame order within the dataset; per-trip predictions must not move.
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  FrameDataset shuffled;
  std::vector<Vec> shuffled_probs;
  for (auto i : perm) {
    shuffled.frames.emplace_back(1, 1);
    shuffled.labels.push_back(ds.labels[i]);
    shuffled.trip_ids.push_back(ds.trip_ids[i]);
    shuffled.capture_ts.push_back(ds.capture_ts[i]);
    shuffled.directions.push_back(ds.directions[i]);
    shuffled.augmented.push_back(false);
    shuffled_probs.push_back(probs[i]);
  }
  auto rows2 = sequence_inference(shuffled, shuffled_probs);
  REQUIRE(rows2.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].trip_id == rows2[i].trip_id);
    CHECK(rows[i].predicted == rows2[i].predicted);
  }
}

TEST_CASE("sequence-length buckets cover prefixes and omit empty lengths") {
  const Manifest m = fold_fixture(3, 3, 0);  // 12 trips x 3 frames
  FrameDataset ds;
  std::vector<Vec> probs;
  for (const auto& row : m.rows) {
    ds.frames.emplace_back(1, 1);
    ds.labels.push_back(static_cast<int>(*row.band));
    ds.trip_ids.push_back(row.trip_id);
    ds.capture_ts.push_back(row.capture_ts);
    ds.directions.push_back(row.direction);
    ds.augmented.push_back(false);
    probs.push_back(one_hot_probs(static_cast<int>(*row.band)));
  }
  const auto points = accuracy_vs_sequence_length(ds, probs);
  int max_len = 0;
  for (const auto& p : points) {
    max_len = std::max(max_len, p.length);
    CHECK(p.support > 0);
    CHECK(p.accuracy == doctest::Approx(1.0));  // oracle probabilities
    CHECK(p.ci_lo >= 0.0);
    CHECK(p.ci_hi <= 1.0);
    CHECK(p.ci_lo <= p.accuracy);
    CHECK(p.ci_hi >= p.accuracy);
  }
  CHECK(max_len == 3);

  // Pooled bucket at length 1 counts every trip once.
  for (const auto& p : points) {
    if (p.length == 1 && p.band == -1) CHECK(p.support == 12);
  }
}

TEST_CASE("hourly accuracy buckets by direction and flags off-window hours") {
  std::vector<SequenceEvalRow> rows;
  auto add = [&](int dir, int hour, bool correct) {
    SequenceEvalRow r;
    r.trip_id = "t" + std::to_string(rows.size());
    r.direction = dir;
    r.approach_ts = 1650240000 + hour * 3600;
    r.truth = 1;
    r.predicted = correct ? 1 : 2;
    rows.push_back(r);
  };
  add(1, 8, true);
  add(1, 8, false);
  add(0, 8, true);
  add(0, 23, true);  // outside the acquisition window

  const auto table = accuracy_by_hour(rows);
  long total = 0;
  bool saw_other = false;
  for (const auto& r : table) {
    total += r.support;
    if (r.bucket == "other") {
      saw_other = true;
      CHECK(r.direction == 0);
      CHECK(r.support == 1);
    }
    if (r.direction == 1 && r.bucket == "8") {
      CHECK(r.support == 2);
      CHECK(r.accuracy == doctest::Approx(0.5));
    }
  }
  CHECK(saw_other);
  CHECK(total == 4);
}
