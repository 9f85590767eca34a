#pragma once

#include <cstdint>

namespace ttv {

// Hour of day (0-23) for a Unix timestamp. Fixtures and synthetic corpora
// are generated in UTC, so no zone conversion is applied.
inline int hour_of_ts(std::int64_t ts) {
  return static_cast<int>((ts % 86400 + 86400) % 86400 / 3600);
}

}  // namespace ttv
