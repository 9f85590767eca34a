#include "ttv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ttv/errors.hpp"
#include "ttv/rng.hpp"
#include "ttv/timeutil.hpp"

namespace ttv {

FoldPlan make_folds(const Manifest& labeled, int k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("make_folds: k must be at least 2");

  // Trip -> band, insisting every row of a trip agrees.
  std::map<std::string, int> trip_band;
  for (const auto& row : labeled.rows) {
    if (!row.band) throw DataError("make_folds: unlabeled row " + row.frame_path);
    const int band = static_cast<int>(*row.band);
    auto [it, inserted] = trip_band.emplace(row.trip_id, band);
    if (!inserted && it->second != band) {
      throw DataError("make_folds: trip " + row.trip_id + " carries conflicting bands");
    }
  }

  // Stratify by band: deterministic order, seeded shuffle, round-robin fold
  // assignment (test shares differ by at most one trip per stratum).
  std::array<std::vector<std::string>, kNumBands> strata;
  for (const auto& [trip, band] : trip_band) strata[band].push_back(trip);
  std::map<std::string, int> fold_of_trip;
  for (int band = 0; band < kNumBands; ++band) {
    auto& trips = strata[band];
    if (static_cast<int>(trips.size()) < k) {
      throw DataError("make_folds: band " + band_name(static_cast<TravelTimeBand>(band)) +
                      " has only " + std::to_string(trips.size()) + " trips, need >= " +
                      std::to_string(k));
    }
    std::sort(trips.begin(), trips.end());
    Rng rng(derive_seed(seed, "fold-band" + std::to_string(band)));
    std::shuffle(trips.begin(), trips.end(), rng.engine());
    for (std::size_t i = 0; i < trips.size(); ++i) {
      fold_of_trip[trips[i]] = static_cast<int>(i % k);
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.test_trips.resize(k);
  plan.train_rows.resize(k);
  plan.test_rows.resize(k);
  for (const auto& [trip, fold] : fold_of_trip) plan.test_trips[fold].push_back(trip);
  for (std::size_t i = 0; i < labeled.rows.size(); ++i) {
    const int fold = fold_of_trip.at(labeled.rows[i].trip_id);
    for (int f = 0; f < k; ++f) {
      (f == fold ? plan.test_rows[f] : plan.train_rows[f]).push_back(i);
    }
  }
  return plan;
}

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& row : counts) {
    for (long v : row) t += v;
  }
  return t;
}

std::array<std::array<double, kNumBands>, kNumBands> ConfusionMatrix::normalized() const {
  std::array<std::array<double, kNumBands>, kNumBands> out{};
  for (int col = 0; col < kNumBands; ++col) {
    long col_sum = 0;
    for (int row = 0; row < kNumBands; ++row) col_sum += counts[row][col];
    for (int row = 0; row < kNumBands; ++row) {
      out[row][col] = col_sum ? static_cast<double>(counts[row][col]) / col_sum : 0.0;
    }
  }
  return out;
}

long ConfusionMatrix::non_adjacent_confusions() const {
  long n = 0;
  for (int row = 0; row < kNumBands; ++row) {
    for (int col = 0; col < kNumBands; ++col) {
      if (std::abs(row - col) > 1) n += counts[row][col];
    }
  }
  return n;
}

double ClassMetrics::macro_f1() const {
  double s = 0;
  for (double v : f1) s += v;
  return s / kNumBands;
}

std::pair<ConfusionMatrix, ClassMetrics> evaluate_frames(const std::vector<int>& predictions,
                                                         const std::vector<int>& truths) {
  if (predictions.size() != truths.size()) {
    throw ArgumentError("evaluate_frames: prediction/truth length mismatch");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || predictions[i] >= kNumBands || truths[i] < 0 ||
        truths[i] >= kNumBands) {
      throw DataError("evaluate_frames: label outside the band enumeration");
    }
    cm.counts[predictions[i]][truths[i]] += 1;
  }
  ClassMetrics m;
  long correct = 0;
  for (int c = 0; c < kNumBands; ++c) {
    long row_sum = 0, col_sum = 0;
    for (int j = 0; j < kNumBands; ++j) {
      row_sum += cm.counts[c][j];
      col_sum += cm.counts[j][c];
    }
    const long tp = cm.counts[c][c];
    correct += tp;
    m.precision[c] = row_sum ? static_cast<double>(tp) / row_sum : 0.0;
    m.recall[c] = col_sum ? static_cast<double>(tp) / col_sum : 0.0;
    m.f1[c] = m.precision[c] + m.recall[c] > 0
                  ? 2.0 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c])
                  : 0.0;
  }
  m.accuracy = cm.total() ? static_cast<double>(correct) / cm.total() : 0.0;
  return {cm, m};
}

FoldSummary summarize_folds(const std::vector<ClassMetrics>& folds) {
  if (folds.empty()) throw ArgumentError("summarize_folds: no folds");
  FoldSummary s;
  auto reduce = [&](auto metric_of) {
    std::array<double, kNumBands> mean{}, spread{};
    for (int c = 0; c < kNumBands; ++c) {
      double lo = 1e300, hi = -1e300, sum = 0;
      for (const auto& f : folds) {
        const double v = metric_of(f, c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
      }
      mean[c] = sum / folds.size();
      spread[c] = hi - lo;
    }
    return std::make_pair(mean, spread);
  };
  std::tie(s.precision_mean, s.precision_spread) =
      reduce([](const ClassMetrics& f, int c) { return f.precision[c]; });
  std::tie(s.recall_mean, s.recall_spread) =
      reduce([](const ClassMetrics& f, int c) { return f.recall[c]; });
  std::tie(s.f1_mean, s.f1_spread) = reduce([](const ClassMetrics& f, int c) { return f.f1[c]; });
  double lo = 1e300, hi = -1e300, sum = 0;
  for (const auto& f : folds) {
    lo = std::min(lo, f.accuracy);
    hi = std::max(hi, f.accuracy);
    sum += f.accuracy;
  }
  s.accuracy_mean = sum / folds.size();
  s.accuracy_spread = hi - lo;
  return s;
}

int sequence_predict(const std::vector<Vec>& frame_probs) {
  if (frame_probs.empty()) throw ArgumentError("sequence_predict: empty group");
  Vec mean = Vec::Zero(frame_probs[0].size());
  for (const auto& p : frame_probs) mean += p;
  mean /= static_cast<double>(frame_probs.size());
  int best = 0;
  for (int c = 1; c < static_cast<int>(mean.size()); ++c) {
    if (mean(c) > mean(best)) best = c;  // strict: ties stay at the lower band
  }
  return best;
}

std::vector<SequenceEvalRow> sequence_inference(const FrameDataset& dataset,
                                                const std::vector<Vec>& frame_probs) {
  if (dataset.size() != frame_probs.size()) {
    throw ArgumentError("sequence_inference: dataset/probability size mismatch");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) groups[dataset.trip_ids[i]].push_back(i);

  std::vector<SequenceEvalRow> rows;
  for (auto& [trip, idx] : groups) {
    SequenceEvalRow row;
    row.trip_id = trip;
    row.direction = dataset.directions[idx.front()];
    row.truth = dataset.labels[idx.front()];
    row.approach_ts = dataset.capture_ts[idx.front()];
    std::vector<Vec> probs;
    Vec mean = Vec::Zero(frame_probs[idx.front()].size());
    for (auto i : idx) {
      row.approach_ts = std::min(row.approach_ts, dataset.capture_ts[i]);
      probs.push_back(frame_probs[i]);
      mean += frame_probs[i];
    }
    row.predicted = sequence_predict(probs);
    row.mean_probs = mean / static_cast<double>(idx.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SequenceLengthPoint> accuracy_vs_sequence_length(const FrameDataset& dataset,
                                                             const std::vector<Vec>& frame_probs) {
  if (dataset.size() != frame_probs.size()) {
    throw ArgumentError("accuracy_vs_sequence_length: size mismatch");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) groups[dataset.trip_ids[i]].push_back(i);

  // (length, band) -> (correct, total); band kNumBands pools everything.
  std::map<std::pair<int, int>, std::pair<long, long>> buckets;
  for (auto& [trip, idx] : groups) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return dataset.capture_ts[a] < dataset.capture_ts[b];
    });
    const int truth = dataset.labels[idx.front()];
    std::vector<Vec> prefix;
    for (std::size_t n = 0; n < idx.size(); ++n) {
      prefix.push_back(frame_probs[idx[n]]);
      const bool correct = sequence_predict(prefix) == truth;
      auto& per_band = buckets[{static_cast<int>(n + 1), truth}];
      auto& pooled = buckets[{static_cast<int>(n + 1), kNumBands}];
      per_band.second += 1;
      pooled.second += 1;
      if (correct) {
        per_band.first += 1;
        pooled.first += 1;
      }
    }
  }

  std::vector<SequenceLengthPoint> out;
  for (const auto& [key, counts] : buckets) {
    if (counts.second == 0) continue;
    SequenceLengthPoint p;
    p.length = key.first;
    p.band = key.second == kNumBands ? -1 : key.second;
    p.support = counts.second;
    p.accuracy = static_cast<double>(counts.first) / counts.second;
    const double half = 1.96 * std::sqrt(p.accuracy * (1.0 - p.accuracy) / counts.second);
    p.ci_lo = std::max(0.0, p.accuracy - half);
    p.ci_hi = std::min(1.0, p.accuracy + half);
    out.push_back(p);
  }
  return out;
}

std::vector<HourAccuracyRow> accuracy_by_hour(const std::vector<SequenceEvalRow>& rows) {
  // (direction, bucket) -> (correct, total)
  std::map<std::pair<int, std::string>, std::pair<long, long>> buckets;
  for (const auto& r : rows) {
    const int hour = hour_of_ts(r.approach_ts);
    const std::string bucket = hour >= 6 && hour <= 21 ? std::to_string(hour) : "other";
    auto& b = buckets[{r.direction, bucket}];
    b.second += 1;
    if (r.predicted == r.truth) b.first += 1;
  }
  std::vector<HourAccuracyRow> out;
  for (const auto& [key, counts] : buckets) {
    HourAccuracyRow row;
    row.direction = key.first;
    row.bucket = key.second;
    row.support = counts.second;
    row.accuracy = counts.second ? static_cast<double>(counts.first) / counts.second : 0.0;
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace ttv
