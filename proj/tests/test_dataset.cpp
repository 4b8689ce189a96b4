#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "transferhub/dataset.hpp"

using namespace transferhub;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// n_days whole days at hourly resolution starting at the given civil date.
TimeSeriesDataset make_ds(int n_days, int year = 2020, unsigned month = 1, unsigned day = 1,
                          int spd = 24) {
    TimeSeriesDataset ds;
    ds.park_id = "test-park";
    ds.samples_per_day = spd;
    ds.feature_names = {"f0", "f1"};
    const Eigen::Index n = static_cast<Eigen::Index>(n_days) * spd;
    ds.features.resize(n, 2);
    ds.power.resize(n);
    const std::int64_t t0 = days_from_civil(year, month, day) * 86400;
    const std::int64_t step = 86400 / spd;
    for (Eigen::Index i = 0; i < n; ++i) {
        ds.timestamps.push_back(t0 + i * step);
        ds.features(i, 0) = static_cast<double>(i);
        ds.features(i, 1) = static_cast<double>(i % spd);
        ds.power(i) = static_cast<double>(i % 7) / 10.0;
    }
    return ds;
}

}  // namespace

TEST_CASE("meteorological seasons by month") {
    CHECK(season_of_month(3) == Season::spring);
    CHECK(season_of_month(5) == Season::spring);
    CHECK(season_of_month(6) == Season::summer);
    CHECK(season_of_month(8) == Season::summer);
    CHECK(season_of_month(9) == Season::autumn);
    CHECK(season_of_month(11) == Season::autumn);
    CHECK(season_of_month(12) == Season::winter);
    CHECK(season_of_month(1) == Season::winter);
    CHECK(season_of_month(2) == Season::winter);
    CHECK(season_name(Season::spring) == "spring");
    CHECK(season_name(Season::winter) == "winter");
    CHECK(season_from_name("autumn") == Season::autumn);
    CHECK_THROWS_AS(season_from_name("Summer"), std::invalid_argument);
}

TEST_CASE("dataset geometry helpers") {
    const TimeSeriesDataset ds = make_ds(3);
    CHECK(ds.rows() == 72);
    CHECK(ds.dims() == 2);
    CHECK(ds.day_count() == 3);
    CHECK(ds.step_seconds() == 3600);
    CHECK(ds.horizon_of_row(0) == 1);
    CHECK(ds.horizon_of_row(23) == 24);
    CHECK(ds.horizon_of_row(24) == 1);
    CHECK(ds.month_of_day(0) == 1);
    const auto h = ds.horizons();
    CHECK(h.front() == 1);
    CHECK(h[24] == 1);
    CHECK(h.back() == 24);

    const DayFrame f = frame_at(ds, 25);
    CHECK(f.horizon == 2);
    CHECK(f.target == ds.power(25));
    CHECK(f.features == ds.features.row(25));
    CHECK(f.origin_day == ds.timestamps[24] / 86400);
}

TEST_CASE("train day grid and split spec validation") {
    CHECK(train_days_grid() == std::vector<int>{7, 14, 30, 60, 90});
    SplitSpec ok{Season::summer, 7, 0.25};
    CHECK_NOTHROW(validate_split_spec(ok));
    SplitSpec bad_days{Season::summer, 13, 0.25};
    CHECK_THROWS_AS(validate_split_spec(bad_days), std::invalid_argument);
    CHECK_NOTHROW(validate_split_spec(bad_days, true));
    SplitSpec bad_frac{Season::summer, 7, 0.0};
    CHECK_THROWS_AS(validate_split_spec(bad_frac), std::invalid_argument);
}

TEST_CASE("csv load round-trips a written dataset exactly") {
    const TimeSeriesDataset ds = make_ds(2);
    const std::string path = tmp_path("transferhub_ds_roundtrip.csv");
    write_csv(ds, path);
    const TimeSeriesDataset back = load_csv(path);
    CHECK(back.feature_names == ds.feature_names);
    CHECK(back.samples_per_day == 24);
    CHECK(back.timestamps == ds.timestamps);
    CHECK(back.features == ds.features);
    CHECK(back.power == ds.power);
    std::filesystem::remove(path);
}

TEST_CASE("csv load rejects malformed structure") {
    const std::string path = tmp_path("transferhub_ds_bad.csv");
    auto write = [&](const std::string& body) {
        std::ofstream out(path, std::ios::binary);
        out << body;
    };

    write("timestamp,wind\n2020-01-01T00:00:00Z,1\n");
    CHECK_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("power"));

    write("power,wind\n1,1\n");
    CHECK_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("timestamp"));

    write("timestamp,power\n2020-01-01T00:00:00Z,abc\n");
    CHECK_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("row 2"));

    write("timestamp,power\n2020-01-01T01:00:00Z,1\n2020-01-01T00:00:00Z,1\n");
    CHECK_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("non-monotonic"));

    write("timestamp,power\n2020-01-01T00:00:00Z,1\n2020-01-01T01:00:00Z,1\n2020-01-01T03:00:00Z,1\n");
    CHECK_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("irregular timestamp step at row 4"));
    std::filesystem::remove(path);
}

TEST_CASE("day-block loader accepts day gaps but enforces in-day steps") {
    TimeSeriesDataset ds = make_ds(4);
    const std::string path = tmp_path("transferhub_ds_blocks.csv");

    // keep days 0 and 2: a day-sized hole between blocks
    const TimeSeriesDataset subset = take_days(ds, {0, 2});
    write_csv(subset, path);
    CHECK_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("irregular"));
    const TimeSeriesDataset back = load_day_blocks_csv(path);
    CHECK(back.samples_per_day == 24);
    CHECK(back.day_count() == 2);
    CHECK(back.timestamps == subset.timestamps);
    CHECK(back.power == subset.power);

    // a gap inside a day block is still an error
    TimeSeriesDataset torn = subset;
    torn.timestamps[5] += 60;
    write_csv(torn, path);
    CHECK_THROWS_AS(load_day_blocks_csv(path), std::runtime_error);

    // partial day at the end
    {
        std::ofstream out(path, std::ios::binary);
        out << "timestamp,power\n2020-01-01T00:00:00Z,0\n2020-01-01T01:00:00Z,0\n";
    }
    CHECK_THROWS_WITH(load_day_blocks_csv(path), Catch::Matchers::ContainsSubstring("whole days"));
    std::filesystem::remove(path);
}

TEST_CASE("normalize_power scales and records nominal") {
    const TimeSeriesDataset ds = make_ds(1);
    const TimeSeriesDataset out = normalize_power(ds, 2.0);
    CHECK(out.nominal_power == 2.0);
    CHECK(out.power(3) == ds.power(3) / 2.0);
    CHECK_THROWS_AS(normalize_power(ds, 0.0), std::invalid_argument);
}

TEST_CASE("take_days keeps order and whole blocks") {
    const TimeSeriesDataset ds = make_ds(5);
    const TimeSeriesDataset out = take_days(ds, {3, 1});
    REQUIRE(out.rows() == 48);
    CHECK(out.features(0, 0) == 72.0);   // first row of day 3
    CHECK(out.features(24, 0) == 24.0);  // first row of day 1
    CHECK(out.timestamps[0] == ds.timestamps[72]);
}

TEST_CASE("split_test_days is deterministic, disjoint and exhaustive") {
    const TimeSeriesDataset ds = make_ds(12);
    const auto [train, test] = split_test_days(ds, 0.25, 99);
    CHECK(test.day_count() == 3);  // llround(0.25*12)
    CHECK(train.day_count() == 9);

    const auto [train2, test2] = split_test_days(ds, 0.25, 99);
    CHECK(train2.timestamps == train.timestamps);
    CHECK(test2.timestamps == test.timestamps);

    const auto [train3, test3] = split_test_days(ds, 0.25, 100);
    CHECK(test3.timestamps != test.timestamps);

    // disjoint + exhaustive on day starts, and each side sorted by time
    std::set<std::int64_t> starts;
    for (Eigen::Index d = 0; d < train.day_count(); ++d)
        starts.insert(train.timestamps[static_cast<std::size_t>(d) * 24]);
    for (Eigen::Index d = 0; d < test.day_count(); ++d)
        starts.insert(test.timestamps[static_cast<std::size_t>(d) * 24]);
    CHECK(starts.size() == 12);
    CHECK(std::is_sorted(train.timestamps.begin(), train.timestamps.end()));
    CHECK(std::is_sorted(test.timestamps.begin(), test.timestamps.end()));
}

TEST_CASE("split_test_days rejects degenerate requests") {
    const TimeSeriesDataset tiny = make_ds(3);
    CHECK_THROWS_WITH(split_test_days(tiny, 0.25, 0), Catch::Matchers::ContainsSubstring("at least 4"));
    const TimeSeriesDataset ds = make_ds(8);
    CHECK_THROWS_AS(split_test_days(ds, 0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_test_days(ds, 1.0, 0), std::invalid_argument);
    CHECK_THROWS_WITH(split_test_days(ds, 0.01, 0), Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("limit_training keeps the last in-season days") {
    // Feb 20 start, 30 days: 10 winter days (Feb 20-29, leap year) then March.
    const TimeSeriesDataset ds = make_ds(30, 2020, 2, 20);
    const TimeSeriesDataset w = limit_training(ds, Season::winter, 7);
    CHECK(w.day_count() == 7);
    // last 7 winter days are Feb 23..29
    CHECK(w.timestamps[0] == days_from_civil(2020, 2, 23) * 86400);
    CHECK(w.timestamps.back() == days_from_civil(2020, 2, 29) * 86400 + 23 * 3600);

    const TimeSeriesDataset s = limit_training(ds, Season::spring, 14);
    CHECK(s.timestamps[0] == days_from_civil(2020, 3, 7) * 86400);

    CHECK_THROWS_WITH(limit_training(ds, Season::winter, 11),
                      Catch::Matchers::ContainsSubstring("season winter has only 10 days, need 11"));
    CHECK_THROWS_WITH(limit_training(ds, Season::summer, 1),
                      Catch::Matchers::ContainsSubstring("season summer has only 0 days"));
    CHECK_THROWS_AS(limit_training(ds, Season::winter, 0), std::invalid_argument);
}

TEST_CASE("make_folds chunks parks contiguously and exhaustively") {
    const auto folds = make_folds(10, 3);
    REQUIRE(folds.size() == 3);
    CHECK(folds[0].targets == std::vector<std::size_t>{0, 1, 2});
    CHECK(folds[1].targets == std::vector<std::size_t>{3, 4, 5});
    CHECK(folds[2].targets == std::vector<std::size_t>{6, 7, 8, 9});
    for (const auto& f : folds) {
        CHECK(f.targets.size() + f.sources.size() == 10);
        std::set<std::size_t> all(f.targets.begin(), f.targets.end());
        all.insert(f.sources.begin(), f.sources.end());
        CHECK(all.size() == 10);
    }
    CHECK_THROWS_AS(make_folds(10, 1), std::invalid_argument);
    CHECK_THROWS_WITH(make_folds(3, 5), Catch::Matchers::ContainsSubstring("smaller than"));
}
