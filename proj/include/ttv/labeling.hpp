#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttv/labeling_types.hpp"
#include "ttv/manifest.hpp"
#include "ttv/trigger.hpp"

namespace ttv {

struct AvlRecord {
  std::string trip_id;
  int direction = 0;
  double segment_travel_time_s = 0;
  double dwell_s = 0;
};

struct EffectiveTravelTime {
  std::string trip_id;
  int direction = 0;
  double value_s = 0;
};

enum class ThresholdScope { Overall, Inbound, Outbound };

struct BandThresholds {
  double p10_s = 0;
  double p50_s = 0;
  double p90_s = 0;
  ThresholdScope scope = ThresholdScope::Overall;
};

// Segment travel time minus dwell. Throws DataError (naming the trip) when
// dwell >= travel time.
EffectiveTravelTime effective_travel_time(const AvlRecord& record);

// Linear interpolation between closest ranks over a sorted copy; q in [0, 1].
double percentile_linear(std::vector<double> values, double q);

// 10/50/90 percentiles over the values matching the scope (Overall keeps
// everything, Inbound keeps direction 1, Outbound direction 0). Requires at
// least 10 in-scope values.
BandThresholds compute_thresholds(const std::vector<EffectiveTravelTime>& values,
                                  ThresholdScope scope);

// Band boundaries: <= p10 Low; p10 < v <= p50 Moderate; p50 < v < p90
// AboveAverage; >= p90 High. When thresholds collide the Low and High rules
// win, in that order.
TravelTimeBand assign_band(double value_s, const BandThresholds& thresholds);

struct DescriptiveStats {
  double mean = 0;
  double sd = 0;  // sample sd by default
  double p10 = 0;
  double p50 = 0;
  double p90 = 0;
  double min = 0;
  double max = 0;
  std::size_t count = 0;
};

DescriptiveStats descriptive_stats(const std::vector<EffectiveTravelTime>& values,
                                   ThresholdScope scope, bool sample_sd = true);

enum class ScopePolicy { PerDirection, Overall };

struct LabelReport {
  std::size_t labeled = 0;
  std::size_t dropped = 0;
  std::vector<std::string> dropped_trips;  // unique, order of first occurrence
};

// Attaches (eff_tt_s, band) to every manifest row via its trip's AVL record.
// Thresholds come from the manifest's own trips (one set per direction under
// PerDirection, one overall set otherwise); they are computed once, before
// any assignment. Rows whose trip is absent from the AVL data or the trip
// database are dropped and reported.
Manifest label_dataset(const Manifest& manifest, const std::vector<TripApproach>& trips,
                       const std::vector<AvlRecord>& avl, ScopePolicy policy,
                       LabelReport* report = nullptr);

// AVL file: CSV trip_id,direction,ts,dwell.
std::vector<AvlRecord> read_avl_csv(const std::string& path);
void write_avl_csv(const std::string& path, const std::vector<AvlRecord>& records);

}  // namespace ttv
