#pragma once

// Trip ingestion, monthly demand aggregation and the temporal
// train/validation/test split.

#include <absl/time/civil_time.h>
#include <absl/time/time.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tripgen/common.hpp"
#include "tripgen/csv.hpp"
#include "tripgen/year_month.hpp"

namespace tripgen {

struct TripRecord {
  std::string start_station_id;
  std::string end_station_id;
  std::chrono::sys_seconds start_time{};  // instant (UTC)
  std::chrono::sys_seconds end_time{};
  std::chrono::sys_days start_day{};  // civil date in the configured zone
  std::chrono::sys_days end_day{};
};

struct StationRecord {
  std::string id;
  double lat = 0;
  double lon = 0;
  YearMonth first_active_month;
  std::optional<YearMonth> last_active_month;
};

struct MonthlySample {
  std::string station_id;
  YearMonth month;
  double y_out = 0;  // departures per active day
  double y_in = 0;   // arrivals per active day
  int active_days = 0;

  bool operator==(const MonthlySample&) const = default;
};

struct DatasetSplit {
  std::vector<MonthlySample> train;
  std::vector<MonthlySample> validation;
  std::vector<MonthlySample> test_existing;
  std::vector<MonthlySample> test_new;
  std::set<std::string> train_station_ids;
};

// ---------------------------------------------------------------------------
// Timestamps

namespace detail {

struct ParsedTimestamp {
  absl::CivilSecond civil;
  std::optional<int> utc_offset_seconds;
};

inline bool read_int(std::string_view s, std::size_t& pos, std::size_t min_digits, std::size_t max_digits, int& out) {
  std::size_t start = pos;
  while (pos < s.size() && pos - start < max_digits && s[pos] >= '0' && s[pos] <= '9') ++pos;
  if (pos - start < min_digits) return false;
  std::from_chars(s.data() + start, s.data() + pos, out);
  return true;
}

/// Parses ISO-8601 ("2019-07-01T08:15:00", "2019-07-01 08:15:00.123",
/// "...Z", "...-04:00", date-only) and the US form used by some historic
/// Citi Bike exports ("7/1/2016 00:00:18").
inline std::optional<ParsedTimestamp> parse_timestamp(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  std::size_t p = 0;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.find('/') != std::string_view::npos) {
    if (!read_int(s, p, 1, 2, mo) || p >= s.size() || s[p++] != '/') return std::nullopt;
    if (!read_int(s, p, 1, 2, d) || p >= s.size() || s[p++] != '/') return std::nullopt;
    if (!read_int(s, p, 4, 4, y)) return std::nullopt;
  } else {
    if (!read_int(s, p, 4, 4, y) || p >= s.size() || s[p++] != '-') return std::nullopt;
    if (!read_int(s, p, 2, 2, mo) || p >= s.size() || s[p++] != '-') return std::nullopt;
    if (!read_int(s, p, 2, 2, d)) return std::nullopt;
  }
  std::optional<int> offset;
  if (p < s.size()) {
    if (s[p] != 'T' && s[p] != ' ') return std::nullopt;
    ++p;
    if (!read_int(s, p, 1, 2, h) || p >= s.size() || s[p++] != ':') return std::nullopt;
    if (!read_int(s, p, 2, 2, mi)) return std::nullopt;
    if (p < s.size() && s[p] == ':') {
      ++p;
      if (!read_int(s, p, 2, 2, sec)) return std::nullopt;
      if (p < s.size() && s[p] == '.') {
        ++p;
        int frac = 0;
        if (!read_int(s, p, 1, 9, frac)) return std::nullopt;
      }
    }
    if (p < s.size()) {
      if (s[p] == 'Z' && p + 1 == s.size()) {
        offset = 0;
        ++p;
      } else if (s[p] == '+' || s[p] == '-') {
        const int sign = s[p] == '-' ? -1 : 1;
        ++p;
        int oh = 0, om = 0;
        if (!read_int(s, p, 2, 2, oh)) return std::nullopt;
        if (p < s.size() && s[p] == ':') ++p;
        if (p < s.size() && !read_int(s, p, 2, 2, om)) return std::nullopt;
        offset = sign * (oh * 3600 + om * 60);
      } else {
        return std::nullopt;
      }
    }
    if (p != s.size()) return std::nullopt;
  }
  if (mo < 1 || mo > 12 || d < 1 || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const absl::CivilSecond cs(y, mo, d, h, mi, sec);
  // CivilSecond normalizes out-of-range fields; reject instead.
  if (cs.year() != y || cs.month() != mo || cs.day() != d) return std::nullopt;
  return ParsedTimestamp{cs, offset};
}

inline std::chrono::sys_days to_sys_days(absl::CivilDay day) {
  using namespace std::chrono;
  return sys_days{year{static_cast<int>(day.year())} / month{static_cast<unsigned>(day.month())} /
                  std::chrono::day{static_cast<unsigned>(day.day())}};
}

}  // namespace detail

/// Resolves a timestamp to (instant, local civil date) in the given zone.
/// Timestamps without an explicit offset are read as local civil time.
inline std::optional<std::pair<std::chrono::sys_seconds, std::chrono::sys_days>> resolve_timestamp(
    std::string_view text, const absl::TimeZone& zone) {
  auto parsed = detail::parse_timestamp(text);
  if (!parsed) return std::nullopt;
  absl::Time instant;
  absl::CivilSecond local;
  if (parsed->utc_offset_seconds) {
    instant = absl::FromCivil(parsed->civil, absl::UTCTimeZone()) - absl::Seconds(*parsed->utc_offset_seconds);
    local = absl::ToCivilSecond(instant, zone);
  } else {
    local = parsed->civil;
    instant = absl::FromCivil(local, zone);
  }
  const auto secs = std::chrono::sys_seconds{std::chrono::seconds{absl::ToUnixSeconds(instant)}};
  return std::pair{secs, detail::to_sys_days(absl::CivilDay(local))};
}

// ---------------------------------------------------------------------------
// Trip ingestion

struct TripColumns {
  std::string start_station_id = "start_station_id";
  std::string end_station_id = "end_station_id";
  std::string started_at = "started_at";
  std::string ended_at = "ended_at";
};

struct IngestConfig {
  TripColumns columns;
  std::string timezone = "America/New_York";
};

struct IngestResult {
  std::vector<TripRecord> trips;
  std::size_t skipped = 0;
  std::vector<std::string> diagnostics;  // first kMaxDiagnostics skip reasons
  static constexpr std::size_t kMaxDiagnostics = 100;
};

inline absl::TimeZone load_time_zone(const std::string& name) {
  absl::TimeZone tz;
  if (!absl::LoadTimeZone(name, &tz)) throw ConfigError("unknown time zone '" + name + "'");
  return tz;
}

/// Reads a trip CSV. Missing columns are fatal; rows with unparseable or
/// inverted timestamps or empty station ids are skipped and reported.
inline IngestResult ingest_trips(std::istream& source, const IngestConfig& config = {}) {
  const absl::TimeZone zone = load_time_zone(config.timezone);
  csv::Reader reader(source);
  const std::size_t c_start = reader.column(config.columns.start_station_id);
  const std::size_t c_end = reader.column(config.columns.end_station_id);
  const std::size_t c_t0 = reader.column(config.columns.started_at);
  const std::size_t c_t1 = reader.column(config.columns.ended_at);
  const std::size_t width = std::max({c_start, c_end, c_t0, c_t1}) + 1;

  IngestResult result;
  auto skip = [&](std::string reason) {
    ++result.skipped;
    if (result.diagnostics.size() < IngestResult::kMaxDiagnostics)
      result.diagnostics.push_back("line " + std::to_string(reader.line_number() + 1) + ": " + std::move(reason));
  };

  std::vector<std::string> row;
  while (reader.next(row)) {
    if (row.size() < width) {
      skip("expected at least " + std::to_string(width) + " fields, got " + std::to_string(row.size()));
      continue;
    }
    TripRecord trip;
    trip.start_station_id = row[c_start];
    trip.end_station_id = row[c_end];
    if (trip.start_station_id.empty() || trip.end_station_id.empty()) {
      skip("empty station id");
      continue;
    }
    auto t0 = resolve_timestamp(row[c_t0], zone);
    auto t1 = resolve_timestamp(row[c_t1], zone);
    if (!t0 || !t1) {
      skip("unparseable timestamp '" + (t0 ? row[c_t1] : row[c_t0]) + "'");
      continue;
    }
    if (t0->first > t1->first) {
      skip("start_time after end_time");
      continue;
    }
    std::tie(trip.start_time, trip.start_day) = *t0;
    std::tie(trip.end_time, trip.end_day) = *t1;
    result.trips.push_back(std::move(trip));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Average daily outflow/inflow per station for one month. Departures are
/// attributed by start date, arrivals by end date; a station is active on a
/// day with at least one departure or arrival.
inline std::vector<MonthlySample> aggregate_monthly_demand(std::span<const TripRecord> trips, YearMonth month) {
  struct Tally {
    std::size_t departures = 0;
    std::size_t arrivals = 0;
    std::set<int> days;
  };
  std::map<std::string, Tally> tally;
  for (const auto& t : trips) {
    if (YearMonth::of(t.start_day) == month) {
      auto& s = tally[t.start_station_id];
      ++s.departures;
      s.days.insert(static_cast<int>(t.start_day.time_since_epoch().count()));
    }
    if (YearMonth::of(t.end_day) == month) {
      auto& s = tally[t.end_station_id];
      ++s.arrivals;
      s.days.insert(static_cast<int>(t.end_day.time_since_epoch().count()));
    }
  }
  std::vector<MonthlySample> out;
  out.reserve(tally.size());
  for (auto& [id, s] : tally) {
    const int n = static_cast<int>(s.days.size());
    out.push_back({id, month, static_cast<double>(s.departures) / n, static_cast<double>(s.arrivals) / n, n});
  }
  return out;
}

/// Aggregates every month touched by the trips; sorted by (month, station).
inline std::vector<MonthlySample> aggregate_all_months(std::span<const TripRecord> trips) {
  std::set<YearMonth> months;
  for (const auto& t : trips) {
    months.insert(YearMonth::of(t.start_day));
    months.insert(YearMonth::of(t.end_day));
  }
  // Bucket first so each month's pass touches only its own trips.
  std::map<YearMonth, std::vector<TripRecord>> buckets;
  for (const auto& t : trips) {
    const YearMonth a = YearMonth::of(t.start_day), b = YearMonth::of(t.end_day);
    buckets[a].push_back(t);
    if (b != a) buckets[b].push_back(t);
  }
  std::vector<MonthlySample> out;
  for (const auto& m : months) {
    auto part = aggregate_monthly_demand(buckets[m], m);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal split

/// Samples up to train_end are shuffled (seeded) into train/validation;
/// samples from test_start on go to test_existing when their station was
/// seen during the train period and to test_new otherwise.
inline DatasetSplit temporal_split(std::span<const MonthlySample> samples, YearMonth train_end, YearMonth test_start,
                                   double val_fraction, std::uint64_t seed) {
  if (!(train_end < test_start)) throw ConfigError("temporal_split: train_end must precede test_start");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("temporal_split: val_fraction must be in (0,1)");

  std::vector<MonthlySample> period;
  DatasetSplit split;
  for (const auto& s : samples) {
    if (s.month <= train_end) {
      period.push_back(s);
      split.train_station_ids.insert(s.station_id);
    }
  }
  if (period.empty()) throw DataError("temporal_split: no samples in the training period");

  // Canonical order first so the result does not depend on input order.
  std::sort(period.begin(), period.end(), [](const auto& a, const auto& b) {
    return std::tie(a.month, a.station_id) < std::tie(b.month, b.station_id);
  });
  Rng rng(seed);
  rng.shuffle(period);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(period.size())));
  split.validation.assign(period.begin(), period.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(period.begin() + static_cast<std::ptrdiff_t>(n_val), period.end());

  for (const auto& s : samples) {
    if (s.month < test_start) continue;
    (split.train_station_ids.contains(s.station_id) ? split.test_existing : split.test_new).push_back(s);
  }
  if (split.test_existing.empty() && split.test_new.empty())
    throw DataError("temporal_split: no samples in the test period");
  return split;
}

// ---------------------------------------------------------------------------
// Station registry and lifecycle

/// Registry row as read from disk; first_active_month may be absent and is
/// then derived from data.
struct RegistryEntry {
  std::string id;
  double lat = 0;
  double lon = 0;
  std::optional<YearMonth> first_active_month;
  std::optional<YearMonth> last_active_month;
};

inline void validate_coordinates(double lat, double lon, const std::string& what) {
  if (!(lat >= -90 && lat <= 90) || !(lon >= -180 && lon <= 180))
    throw DataError(what + ": coordinates out of range (" + std::to_string(lat) + ", " + std::to_string(lon) + ")");
}

inline std::vector<RegistryEntry> read_station_registry(std::istream& in) {
  csv::Reader reader(in);
  const auto c_id = reader.column("id"), c_lat = reader.column("lat"), c_lon = reader.column("lon");
  const std::optional<std::size_t> c_first =
      reader.has("first_active_month") ? std::optional(reader.column("first_active_month")) : std::nullopt;
  const std::optional<std::size_t> c_last =
      reader.has("last_active_month") ? std::optional(reader.column("last_active_month")) : std::nullopt;
  std::vector<RegistryEntry> out;
  std::vector<std::string> row;
  while (reader.next(row)) {
    auto field = [&](std::optional<std::size_t> c) -> std::string { return c && *c < row.size() ? row[*c] : ""; };
    RegistryEntry e;
    e.id = field(c_id);
    if (e.id.empty()) throw DataError("station registry line " + std::to_string(reader.line_number()) + ": empty id");
    e.lat = csv::parse_double(field(c_lat));
    e.lon = csv::parse_double(field(c_lon));
    validate_coordinates(e.lat, e.lon, "station " + e.id);
    if (auto f = field(c_first); !f.empty()) e.first_active_month = YearMonth::parse(f);
    if (auto l = field(c_last); !l.empty()) e.last_active_month = YearMonth::parse(l);
    if (e.first_active_month && e.last_active_month && *e.last_active_month < *e.first_active_month)
      throw DataError("station " + e.id + ": last_active_month precedes first_active_month");
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_station_registry(std::ostream& out, std::span<const StationRecord> stations) {
  csv::write_row(out, {"id", "lat", "lon", "first_active_month", "last_active_month"});
  for (const auto& s : stations)
    csv::write_row(out, {s.id, csv::format_double(s.lat), csv::format_double(s.lon), s.first_active_month.to_string(),
                         s.last_active_month ? s.last_active_month->to_string() : ""});
}

/// Combines registry coordinates with the lifecycle observed in the samples.
/// first_active_month comes from the data unless the registry sets it.
/// Stations without samples and without a registry month are dropped.
inline std::vector<StationRecord> resolve_stations(std::span<const RegistryEntry> registry,
                                                   std::span<const MonthlySample> samples) {
  std::unordered_map<std::string, std::pair<YearMonth, YearMonth>> seen;
  for (const auto& s : samples) {
    auto [it, inserted] = seen.try_emplace(s.station_id, s.month, s.month);
    if (!inserted) {
      it->second.first = std::min(it->second.first, s.month);
      it->second.second = std::max(it->second.second, s.month);
    }
  }
  std::vector<StationRecord> out;
  for (const auto& e : registry) {
    auto it = seen.find(e.id);
    if (!e.first_active_month && it == seen.end()) continue;
    StationRecord r{e.id, e.lat, e.lon, e.first_active_month ? *e.first_active_month : it->second.first,
                    e.last_active_month};
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

/// Stations with a sample in each month. A station-month without trips
/// yields no sample, so closed stations drop out of that month.
inline std::map<YearMonth, std::vector<std::string>> active_stations_by_month(std::span<const MonthlySample> samples) {
  std::map<YearMonth, std::vector<std::string>> out;
  for (const auto& s : samples) out[s.month].push_back(s.station_id);
  for (auto& [m, ids] : out) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample file

inline void write_samples(std::ostream& out, std::span<const MonthlySample> samples) {
  csv::write_row(out, {"station_id", "month", "y_out", "y_in", "active_days"});
  for (const auto& s : samples)
    csv::write_row(out, {s.station_id, s.month.to_string(), csv::format_double(s.y_out), csv::format_double(s.y_in),
                         std::to_string(s.active_days)});
}

inline std::vector<MonthlySample> read_samples(std::istream& in) {
  csv::Reader reader(in);
  const auto c_id = reader.column("station_id"), c_m = reader.column("month"), c_out = reader.column("y_out"),
             c_in = reader.column("y_in"), c_days = reader.column("active_days");
  std::vector<MonthlySample> out;
  std::vector<std::string> row;
  while (reader.next(row)) {
    if (row.size() <= std::max({c_id, c_m, c_out, c_in, c_days}))
      throw DataError("sample file line " + std::to_string(reader.line_number()) + ": too few fields");
    MonthlySample s{row[c_id], YearMonth::parse(row[c_m]), csv::parse_double(row[c_out]), csv::parse_double(row[c_in]),
                    static_cast<int>(csv::parse_double(row[c_days]))};
    if (s.active_days < 1 || s.active_days > s.month.days() || s.y_out < 0 || s.y_in < 0)
      throw DataError("sample " + s.station_id + "@" + s.month.to_string() + " violates sample invariants");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tripgen
