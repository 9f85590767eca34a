#pragma once

#include <string>

namespace ttv {

// Ordinal travel-time bands; the order is load-bearing (Low < Moderate <
// AboveAverage < High) for monotonicity checks and tie-breaking.
enum class TravelTimeBand : int { Low = 0, Moderate = 1, AboveAverage = 2, High = 3 };

inline constexpr int kNumBands = 4;

const std::string& band_name(TravelTimeBand band);
TravelTimeBand parse_band(const std::string& name);  // throws FormatError

}  // namespace ttv
