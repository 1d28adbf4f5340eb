#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "tripgen/data_pipeline.hpp"

using namespace tripgen;

namespace {

std::string trip_csv(const std::vector<std::array<std::string, 4>>& rows) {
  std::ostringstream out;
  out << "start_station_id,end_station_id,started_at,ended_at\n";
  for (const auto& r : rows) out << r[0] << ',' << r[1] << ',' << r[2] << ',' << r[3] << '\n';
  return out.str();
}

std::vector<TripRecord> ingest(const std::string& text, std::size_t* skipped = nullptr) {
  std::istringstream in(text);
  auto r = ingest_trips(in);
  if (skipped) *skipped = r.skipped;
  return r.trips;
}

std::string ts(int y, int m, int d, int h = 12, int mi = 0) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:00", y, m, d, h, mi);
  return buf;
}

}  // namespace

TEST(Ingest, WellFormedRowsAreAllKept) {
  std::size_t skipped = 99;
  const auto trips = ingest(trip_csv({{"A", "B", ts(2019, 7, 1), ts(2019, 7, 1, 13)},
                                      {"B", "C", ts(2019, 7, 2), ts(2019, 7, 2, 13)},
                                      {"C", "A", ts(2019, 7, 3), ts(2019, 7, 3, 13)}}),
                            &skipped);
  EXPECT_EQ(trips.size(), 3u);
  EXPECT_EQ(skipped, 0u);
}

TEST(Ingest, BadTimestampRowIsSkipped) {
  std::size_t skipped = 0;
  const auto trips = ingest(trip_csv({{"A", "B", ts(2019, 7, 1), ts(2019, 7, 1, 13)},
                                      {"A", "B", "not-a-time", ts(2019, 7, 1, 13)},
                                      {"A", "B", ts(2019, 7, 2), ts(2019, 7, 2, 13)},
                                      {"A", "B", ts(2019, 7, 3), ts(2019, 7, 3, 13)},
                                      {"A", "B", ts(2019, 7, 4), ts(2019, 7, 4, 13)}}),
                            &skipped);
  EXPECT_EQ(trips.size(), 4u);
  EXPECT_EQ(skipped, 1u);
}

TEST(Ingest, MissingColumnIsFatal) {
  std::istringstream in("start_station_id,end_station_id,started_at\nA,B,2019-07-01\n");
  EXPECT_THROW(ingest_trips(in), std::exception);
}

TEST(Ingest, RemappedColumnsAndOffsets) {
  std::istringstream in("from,to,t0,t1\nA,B,2019-07-01T03:30:00Z,7/1/2019 00:10:00\n");
  IngestConfig cfg;
  cfg.columns = {"from", "to", "t0", "t1"};
  const auto r = ingest_trips(in, cfg);
  ASSERT_EQ(r.trips.size(), 1u);
  // 03:30Z is 23:30 on June 30 in New York.
  EXPECT_EQ(YearMonth::of(r.trips[0].start_day), (YearMonth{2019, 6}));
  EXPECT_EQ(YearMonth::of(r.trips[0].end_day), (YearMonth{2019, 7}));
}

TEST(Ingest, RecordCountMatchesLineCountOracle) {
  Rng rng(11);
  std::ostringstream out;
  out << "start_station_id,end_station_id,started_at,ended_at\n";
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const int d = 1 + static_cast<int>(rng.below(28));
    const auto u = rng.uniform();
    if (u < 0.05) {
      out << "A,B,2019-13-01T00:00:00," << ts(2019, 7, d) << '\n';
      ++bad;
    } else if (u < 0.08) {
      out << ",B," << ts(2019, 7, d) << ',' << ts(2019, 7, d) << '\n';
      ++bad;
    } else {
      out << "S" << rng.below(20) << ",S" << rng.below(20) << ',' << ts(2019, 7, d, 8) << ',' << ts(2019, 7, d, 9)
          << '\n';
    }
  }
  const std::string text = out.str();
  const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 1;
  std::size_t skipped = 0;
  const auto trips = ingest(text, &skipped);
  EXPECT_EQ(skipped, bad);
  EXPECT_EQ(trips.size(), lines - skipped);
}

TEST(Timestamp, FormatsAndRejections) {
  for (const char* good : {"2019-07-01", "2019-07-01 08:15", "2019-07-01T08:15:00.123", "2019-07-01T08:15:00-04:00",
                           "7/1/2019 08:15:00"})
    EXPECT_TRUE(detail::parse_timestamp(good)) << good;
  for (const char* bad : {"", "2019-02-30", "2019-07-01X", "2019-07-01T25:00", "07/2019"})
    EXPECT_FALSE(detail::parse_timestamp(bad)) << bad;
}

TEST(Aggregate, WorkedExample) {
  // Departures on days 1,2 (4 total), arrivals on days 2,3 (2 total).
  const auto trips = ingest(trip_csv({{"S", "X", ts(2019, 7, 1), ts(2019, 7, 1, 13)},
                                      {"S", "X", ts(2019, 7, 1, 14), ts(2019, 7, 1, 15)},
                                      {"S", "X", ts(2019, 7, 2), ts(2019, 7, 2, 13)},
                                      {"S", "X", ts(2019, 7, 2, 14), ts(2019, 7, 2, 15)},
                                      {"X", "S", ts(2019, 7, 2, 16), ts(2019, 7, 2, 17)},
                                      {"X", "S", ts(2019, 7, 3), ts(2019, 7, 3, 13)}}));
  const auto samples = aggregate_monthly_demand(trips, {2019, 7});
  auto it = std::find_if(samples.begin(), samples.end(), [](const auto& s) { return s.station_id == "S"; });
  ASSERT_NE(it, samples.end());
  EXPECT_EQ(it->active_days, 3);
  EXPECT_DOUBLE_EQ(it->y_out, 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(it->y_in, 2.0 / 3.0);
}

TEST(Aggregate, DeparturesOnly) {
  std::vector<std::array<std::string, 4>> rows;
  for (int d = 1; d <= 5; ++d)
    for (int k = 0; k < 2; ++k) rows.push_back({"S", "X", ts(2019, 7, d, 8 + k), ts(2019, 7, d, 10 + k)});
  const auto samples = aggregate_monthly_demand(ingest(trip_csv(rows)), {2019, 7});
  const auto& s = *std::find_if(samples.begin(), samples.end(), [](const auto& s) { return s.station_id == "S"; });
  EXPECT_DOUBLE_EQ(s.y_out, 2.0);
  EXPECT_DOUBLE_EQ(s.y_in, 0.0);
}

TEST(Aggregate, EmptyMonthIsEmpty) {
  const auto trips = ingest(trip_csv({{"A", "B", ts(2019, 7, 1), ts(2019, 7, 1, 13)}}));
  EXPECT_TRUE(aggregate_monthly_demand(trips, {2019, 8}).empty());
}

TEST(Aggregate, CrossMonthTripCountsInBothMonths) {
  const auto trips = ingest(trip_csv({{"A", "B", ts(2019, 7, 31, 23, 50), ts(2019, 8, 1, 0, 20)}}));
  const auto all = aggregate_all_months(trips);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].station_id, "A");
  EXPECT_EQ(all[0].month, (YearMonth{2019, 7}));
  EXPECT_DOUBLE_EQ(all[0].y_out, 1.0);
  EXPECT_EQ(all[1].station_id, "B");
  EXPECT_EQ(all[1].month, (YearMonth{2019, 8}));
  EXPECT_DOUBLE_EQ(all[1].y_in, 1.0);
}

namespace {

std::vector<TripRecord> random_trips(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<std::array<std::string, 4>> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const int m = 6 + static_cast<int>(rng.below(3));
    const int d = 1 + static_cast<int>(rng.below(30));
    const int h = static_cast<int>(rng.below(23));
    rows.push_back({"S" + std::to_string(rng.below(15)), "S" + std::to_string(rng.below(15)), ts(2019, m, d, h),
                    ts(2019, m, d, h + 1)});
  }
  return ingest(trip_csv(rows));
}

// Brute force: for each station scan all trips, collecting day sets.
MonthlySample oracle(const std::vector<TripRecord>& trips, const std::string& id, YearMonth m) {
  std::set<long> days;
  double dep = 0, arr = 0;
  for (const auto& t : trips) {
    if (t.start_station_id == id && YearMonth::of(t.start_day) == m) {
      ++dep;
      days.insert(t.start_day.time_since_epoch().count());
    }
    if (t.end_station_id == id && YearMonth::of(t.end_day) == m) {
      ++arr;
      days.insert(t.end_day.time_since_epoch().count());
    }
  }
  const int n = static_cast<int>(days.size());
  return {id, m, n ? dep / n : 0, n ? arr / n : 0, n};
}

}  // namespace

TEST(Aggregate, MatchesBruteForceDaySetOracle) {
  const auto trips = random_trips(5, 500);
  const YearMonth m{2019, 7};
  const auto samples = aggregate_monthly_demand(trips, m);
  std::size_t oracle_count = 0;
  for (int s = 0; s < 15; ++s) {
    const auto want = oracle(trips, "S" + std::to_string(s), m);
    if (want.active_days == 0) continue;
    ++oracle_count;
    auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& x) { return x.station_id == want.station_id; });
    ASSERT_NE(it, samples.end());
    EXPECT_EQ(it->active_days, want.active_days);
    EXPECT_NEAR(it->y_out, want.y_out, 1e-9);
    EXPECT_NEAR(it->y_in, want.y_in, 1e-9);
  }
  EXPECT_EQ(samples.size(), oracle_count);
}

TEST(Aggregate, ConservationAndPermutationInvariance) {
  auto trips = random_trips(9, 400);
  const YearMonth m{2019, 8};
  const auto a = aggregate_monthly_demand(trips, m);
  double total = 0;
  for (const auto& s : a) total += s.y_out * s.active_days;
  const auto departures =
      std::count_if(trips.begin(), trips.end(), [&](const auto& t) { return YearMonth::of(t.start_day) == m; });
  EXPECT_NEAR(total, static_cast<double>(departures), 1e-9);
  Rng rng(3);
  rng.shuffle(trips);
  EXPECT_EQ(aggregate_monthly_demand(trips, m), a);
}

namespace {
std::vector<MonthlySample> toy_samples() {
  std::vector<MonthlySample> s;
  for (int m = 1; m <= 12; ++m)
    for (int i = 0; i < 4; ++i) s.push_back({"S" + std::to_string(i), {2018, m}, 1.0 * i, 2.0, 20});
  s.push_back({"NEW", {2018, 11}, 1, 1, 5});
  s.push_back({"NEW", {2018, 12}, 1, 1, 5});
  return s;
}
}  // namespace

TEST(Split, TenSamplesEightTwoAndDeterministic) {
  std::vector<MonthlySample> s;
  for (int i = 0; i < 10; ++i) s.push_back({"S" + std::to_string(i), {2018, 1}, 1, 1, 10});
  s.push_back({"S0", {2018, 3}, 1, 1, 10});
  const auto a = temporal_split(s, {2018, 1}, {2018, 2}, 0.2, 42);
  const auto b = temporal_split(s, {2018, 1}, {2018, 2}, 0.2, 42);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(a.validation.size(), 2u);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
}

TEST(Split, NewStationGoesToTestNew) {
  const auto split = temporal_split(toy_samples(), {2018, 9}, {2018, 10}, 0.2, 1);
  EXPECT_EQ(split.test_new.size(), 2u);
  for (const auto& s : split.test_new) EXPECT_EQ(s.station_id, "NEW");
  for (const auto& s : split.test_existing) EXPECT_TRUE(split.train_station_ids.contains(s.station_id));
}

TEST(Split, PartitionsAreDisjointAndCoverTheInput) {
  const auto input = toy_samples();
  const auto split = temporal_split(input, {2018, 9}, {2018, 10}, 0.25, 7);
  std::multiset<std::pair<std::string, int>> all, got;
  for (const auto& s : input) all.insert({s.station_id, s.month.index()});
  for (const auto* part : {&split.train, &split.validation, &split.test_existing, &split.test_new})
    for (const auto& s : *part) got.insert({s.station_id, s.month.index()});
  EXPECT_EQ(all, got);
}

TEST(Split, GapMonthsAreExcluded) {
  const auto split = temporal_split(toy_samples(), {2018, 6}, {2018, 10}, 0.2, 7);
  for (const auto* part : {&split.train, &split.validation})
    for (const auto& s : *part) EXPECT_LE(s.month, (YearMonth{2018, 6}));
  for (const auto* part : {&split.test_existing, &split.test_new})
    for (const auto& s : *part) EXPECT_GE(s.month, (YearMonth{2018, 10}));
}

TEST(Split, InvalidArguments) {
  const auto s = toy_samples();
  EXPECT_THROW(temporal_split(s, {2018, 10}, {2018, 10}, 0.2, 1), ConfigError);
  EXPECT_THROW(temporal_split(s, {2018, 9}, {2018, 10}, 1.0, 1), ConfigError);
  EXPECT_THROW(temporal_split(s, {2017, 1}, {2017, 2}, 0.2, 1), DataError);
  EXPECT_THROW(temporal_split(s, {2018, 12}, {2019, 1}, 0.2, 1), DataError);
}

TEST(Registry, FirstActiveMonthFromDataUnlessOverridden) {
  std::istringstream reg("id,lat,lon,first_active_month\nS0,40.7,-74.0,\nS1,40.71,-74.01,2017-01\nGHOST,40.7,-74.0,\n");
  const auto entries = read_station_registry(reg);
  const auto stations = resolve_stations(entries, toy_samples());
  ASSERT_EQ(stations.size(), 2u);
  EXPECT_EQ(stations[0].first_active_month, (YearMonth{2018, 1}));
  EXPECT_EQ(stations[1].first_active_month, (YearMonth{2017, 1}));
}

TEST(Registry, InvalidCoordinatesRejected) {
  std::istringstream reg("id,lat,lon\nS0,95,-74.0\n");
  EXPECT_THROW(read_station_registry(reg), DataError);
}

TEST(Samples, FileRoundTrip) {
  const auto input = toy_samples();
  std::stringstream io;
  write_samples(io, input);
  EXPECT_EQ(read_samples(io), input);
}

TEST(Samples, ClosedStationDropsOutOfMonth) {
  auto s = toy_samples();
  std::erase_if(s, [](const auto& x) { return x.station_id == "S2" && x.month == YearMonth{2018, 5}; });
  const auto active = active_stations_by_month(s);
  const auto& may = active.at({2018, 5});
  EXPECT_EQ(std::count(may.begin(), may.end(), "S2"), 0);
  EXPECT_EQ(std::count(active.at({2018, 6}).begin(), active.at({2018, 6}).end(), "S2"), 1);
}
