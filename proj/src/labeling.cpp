#include "ttv/labeling.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "ttv/csv.hpp"
#include "ttv/errors.hpp"

namespace ttv {

namespace {

const std::string kBandNames[kNumBands] = {"Low", "Moderate", "AboveAverage", "High"};

bool in_scope(int direction, ThresholdScope scope) {
  switch (scope) {
    case ThresholdScope::Overall:
      return true;
    case ThresholdScope::Inbound:
      return direction == 1;
    case ThresholdScope::Outbound:
      return direction == 0;
  }
  return false;
}

std::vector<double> scoped_values(const std::vector<EffectiveTravelTime>& values,
                                  ThresholdScope scope) {
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& v : values) {
    if (in_scope(v.direction, scope)) out.push_back(v.value_s);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, p);
}

}  // namespace

const std::string& band_name(TravelTimeBand band) { return kBandNames[static_cast<int>(band)]; }

TravelTimeBand parse_band(const std::string& name) {
  for (int i = 0; i < kNumBands; ++i) {
    if (kBandNames[i] == name) return static_cast<TravelTimeBand>(i);
  }
  throw FormatError("unknown travel time band '" + name + "'");
}

EffectiveTravelTime effective_travel_time(const AvlRecord& record) {
  if (record.segment_travel_time_s <= 0) {
    throw DataError("trip " + record.trip_id + ": non-positive segment travel time");
  }
  if (record.dwell_s < 0 || record.dwell_s >= record.segment_travel_time_s) {
    throw DataError("trip " + record.trip_id + ": dwell " + format_double(record.dwell_s) +
                    " outside [0, travel time)");
  }
  return {record.trip_id, record.direction, record.segment_travel_time_s - record.dwell_s};
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of empty set");
  if (q < 0.0 || q > 1.0) throw ArgumentError("percentile q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BandThresholds compute_thresholds(const std::vector<EffectiveTravelTime>& values,
                                  ThresholdScope scope) {
  auto v = scoped_values(values, scope);
  if (v.size() < 10) {
    throw DataError("need at least 10 values to compute thresholds, got " +
                    std::to_string(v.size()));
  }
  BandThresholds t;
  t.scope = scope;
  t.p10_s = percentile_linear(v, 0.10);
  t.p50_s = percentile_linear(v, 0.50);
  t.p90_s = percentile_linear(v, 0.90);
  return t;
}

TravelTimeBand assign_band(double value_s, const BandThresholds& t) {
  if (value_s <= t.p10_s) return TravelTimeBand::Low;
  if (value_s >= t.p90_s) return TravelTimeBand::High;
  if (value_s <= t.p50_s) return TravelTimeBand::Moderate;
  return TravelTimeBand::AboveAverage;
}

DescriptiveStats descriptive_stats(const std::vector<EffectiveTravelTime>& values,
                                   ThresholdScope scope, bool sample_sd) {
  auto v = scoped_values(values, scope);
  if (v.empty()) throw DataError("descriptive_stats: no values in scope");
  DescriptiveStats s;
  s.count = v.size();
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  const auto denom = sample_sd && v.size() > 1 ? v.size() - 1 : v.size();
  s.sd = std::sqrt(ss / static_cast<double>(denom));
  s.p10 = percentile_linear(v, 0.10);
  s.p50 = percentile_linear(v, 0.50);
  s.p90 = percentile_linear(v, 0.90);
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  return s;
}

Manifest label_dataset(const Manifest& manifest, const std::vector<TripApproach>& trips,
                       const std::vector<AvlRecord>& avl, ScopePolicy policy,
                       LabelReport* report) {
  LabelReport local;
  LabelReport* rep = report ? report : &local;
  *rep = {};

  std::set<std::string> known_trips;
  for (const auto& t : trips) known_trips.insert(t.trip_id);

  std::map<std::string, EffectiveTravelTime> eff_by_trip;
  for (const auto& rec : avl) eff_by_trip[rec.trip_id] = effective_travel_time(rec);

  // Thresholds from the dataset's own trips, computed once before any
  // assignment.
  std::set<std::string> seen;
  std::vector<EffectiveTravelTime> dataset_values;
  for (const auto& row : manifest.rows) {
    if (!seen.insert(row.trip_id).second) continue;
    auto it = eff_by_trip.find(row.trip_id);
    if (it != eff_by_trip.end() && known_trips.count(row.trip_id)) {
      dataset_values.push_back(it->second);
    }
  }

  // Only scopes that actually label a row need thresholds, so an empty or
  // one-sided dataset does not trip the >= 10 values requirement spuriously.
  std::map<ThresholdScope, BandThresholds> cache;
  auto thresholds_for = [&](int direction) -> const BandThresholds& {
    const ThresholdScope scope = policy == ScopePolicy::Overall
                                     ? ThresholdScope::Overall
                                     : (direction == 1 ? ThresholdScope::Inbound
                                                       : ThresholdScope::Outbound);
    auto it = cache.find(scope);
    if (it == cache.end()) {
      it = cache.emplace(scope, compute_thresholds(dataset_values, scope)).first;
    }
    return it->second;
  };

  Manifest out;
  out.kind = manifest.kind == ManifestKind::Expanded ? ManifestKind::Expanded
                                                     : ManifestKind::Labeled;
  std::set<std::string> dropped_seen;
  for (const auto& row : manifest.rows) {
    auto it = eff_by_trip.find(row.trip_id);
    if (it == eff_by_trip.end() || !known_trips.count(row.trip_id)) {
      ++rep->dropped;
      if (dropped_seen.insert(row.trip_id).second) rep->dropped_trips.push_back(row.trip_id);
      continue;
    }
    FrameRecord labeled = row;
    labeled.eff_tt_s = it->second.value_s;
    labeled.band = assign_band(it->second.value_s, thresholds_for(row.direction));
    out.rows.push_back(std::move(labeled));
    ++rep->labeled;
  }
  return out;
}

std::vector<AvlRecord> read_avl_csv(const std::string& path) {
  const auto table = csv::read_file(path);
  std::vector<AvlRecord> out;
  if (table.header.empty()) return out;
  const auto c_trip = table.col("trip_id");
  const auto c_dir = table.col("direction");
  const auto c_ts = table.col("ts");
  const auto c_dwell = table.col("dwell");
  for (const auto& row : table.rows) {
    AvlRecord r;
    r.trip_id = row[c_trip];
    r.direction = std::stoi(row[c_dir]);
    r.segment_travel_time_s = std::stod(row[c_ts]);
    r.dwell_s = std::stod(row[c_dwell]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_avl_csv(const std::string& path, const std::vector<AvlRecord>& records) {
  csv::Table table;
  table.header = {"trip_id", "direction", "ts", "dwell"};
  for (const auto& r : records) {
    table.rows.push_back({r.trip_id, std::to_string(r.direction),
                          format_double(r.segment_travel_time_s), format_double(r.dwell_s)});
  }
  csv::write_file(path, table);
}

}  // namespace ttv
