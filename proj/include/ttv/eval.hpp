#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ttv/labeling_types.hpp"
#include "ttv/manifest.hpp"
#include "ttv/vit.hpp"

namespace ttv {

// Trip-level stratified k-fold plan. Folds partition the trip set; every
// frame (originals and augmented variants alike) follows its trip, so no
// augmented view of a test trip ever reaches the training side.
struct FoldPlan {
  int k = 5;
  std::vector<std::vector<std::string>> test_trips;        // per fold
  std::vector<std::vector<std::size_t>> train_rows;        // manifest row indices
  std::vector<std::vector<std::size_t>> test_rows;
};

FoldPlan make_folds(const Manifest& labeled, int k, std::uint64_t seed);

// Rows are predicted band, columns are true band.
struct ConfusionMatrix {
  std::array<std::array<long, kNumBands>, kNumBands> counts{};

  long total() const;
  // Column-normalized: each non-empty column sums to 1; diagonal cells are
  // per-band accuracy.
  std::array<std::array<double, kNumBands>, kNumBands> normalized() const;
  // Confusions between bands more than one ordinal step apart.
  long non_adjacent_confusions() const;
};

struct ClassMetrics {
  std::array<double, kNumBands> precision{};
  std::array<double, kNumBands> recall{};
  std::array<double, kNumBands> f1{};
  double accuracy = 0;

  double macro_f1() const;
};

std::pair<ConfusionMatrix, ClassMetrics> evaluate_frames(const std::vector<int>& predictions,
                                                         const std::vector<int>& truths);

// Across-fold mean and spread (max - min) per metric.
struct FoldSummary {
  std::array<double, kNumBands> precision_mean{}, precision_spread{};
  std::array<double, kNumBands> recall_mean{}, recall_spread{};
  std::array<double, kNumBands> f1_mean{}, f1_spread{};
  double accuracy_mean = 0, accuracy_spread = 0;
};

FoldSummary summarize_folds(const std::vector<ClassMetrics>& folds);

// Mean of per-frame probability vectors; argmax with ties broken toward the
// lower ordinal band.
int sequence_predict(const std::vector<Vec>& frame_probs);

struct SequenceEvalRow {
  std::string trip_id;
  int direction = 0;
  std::int64_t approach_ts = 0;  // earliest capture in the group
  int truth = 0;
  int predicted = 0;
  Vec mean_probs;
};

// Groups per-frame predictions by trip and applies sequence averaging.
std::vector<SequenceEvalRow> sequence_inference(const FrameDataset& dataset,
                                                const std::vector<Vec>& frame_probs);

struct SequenceLengthPoint {
  int length = 0;
  int band = -1;  // -1 = all bands pooled
  double accuracy = 0;
  double ci_lo = 0, ci_hi = 0;  // binomial 95% normal approximation
  long support = 0;
};

// Accuracy of the first-n-frames prediction per sequence length. Buckets with
// zero support are omitted.
std::vector<SequenceLengthPoint> accuracy_vs_sequence_length(const FrameDataset& dataset,
                                                             const std::vector<Vec>& frame_probs);

struct HourAccuracyRow {
  int direction = 0;
  std::string bucket;  // "6".."21" or "other"
  double accuracy = 0;
  long support = 0;
};

std::vector<HourAccuracyRow> accuracy_by_hour(const std::vector<SequenceEvalRow>& rows);

}  // namespace ttv
