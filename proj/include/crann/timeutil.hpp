#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace crann {

/// Hours since 1970-01-01T00:00 UTC. The whole pipeline runs on this grid.
using HourIndex = std::int64_t;

/// Parses "YYYY-MM-DDTHH:MM[:SS]" (a space may replace the T, a trailing Z
/// is accepted). Returns minutes since the epoch, or nullopt when malformed.
std::optional<std::int64_t> parse_iso_minutes(std::string_view text);

std::string format_iso_hour(HourIndex hour);

inline HourIndex floor_hour(std::int64_t minutes) {
  return minutes >= 0 ? minutes / 60 : -((-minutes + 59) / 60);
}

/// 0..23
int hour_of_day(HourIndex hour);
/// Monday = 0 ... Sunday = 6
int day_of_week(HourIndex hour);

}  // namespace crann
