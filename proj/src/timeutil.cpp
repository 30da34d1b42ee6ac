#include "crann/timeutil.hpp"

#include <chrono>
#include <cstdio>

namespace crann {

namespace {

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

}  // namespace

std::optional<std::int64_t> parse_iso_minutes(std::string_view s) {
  while (!s.empty() && (s.back() == 'Z' || s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return std::nullopt;
  if (!read_int(s, 0, 4, y) || !read_int(s, 5, 2, mo) || !read_int(s, 8, 2, d) || !read_int(s, 11, 2, h) ||
      !read_int(s, 14, 2, mi))
    return std::nullopt;
  if (s.size() > 16) {
    if (s.size() != 19 || s[16] != ':' || !read_int(s, 17, 2, sec)) return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 1440 + h * 60 + mi;
}

std::string format_iso_hour(HourIndex hour) {
  using namespace std::chrono;
  const auto day_count = hour >= 0 ? hour / 24 : -((-hour + 23) / 24);
  const year_month_day ymd{sys_days{days{day_count}}};
  const auto hh = static_cast<int>(hour - day_count * 24);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hh);
  return buf;
}

int hour_of_day(HourIndex hour) {
  const auto r = hour % 24;
  return static_cast<int>(r < 0 ? r + 24 : r);
}

int day_of_week(HourIndex hour) {
  const auto day_count = hour >= 0 ? hour / 24 : -((-hour + 23) / 24);
  // 1970-01-01 was a Thursday (index 3 with Monday = 0)
  const auto r = (day_count + 3) % 7;
  return static_cast<int>(r < 0 ? r + 7 : r);
}

}  // namespace crann
