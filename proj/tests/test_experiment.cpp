#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "transferhub/experiment.hpp"

using namespace transferhub;

static_assert(std::is_base_of_v<std::runtime_error, ConfigError>);

namespace {

std::string tmp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

// n_days whole days starting at the given civil date, with a learnable
// feature -> power relation so source training converges.
TimeSeriesDataset make_ds(int n_days, int spd = 4, int year = 2020, unsigned month = 1,
                          unsigned day = 1, const std::string& park = "test-park") {
    TimeSeriesDataset ds;
    ds.park_id = park;
    ds.samples_per_day = spd;
    ds.feature_names = {"f0", "f1"};
    const Eigen::Index n = static_cast<Eigen::Index>(n_days) * spd;
    ds.features.resize(n, 2);
    ds.power.resize(n);
    const std::int64_t t0 = days_from_civil(year, month, day) * 86400;
    const std::int64_t step = 86400 / spd;
    for (Eigen::Index i = 0; i < n; ++i) {
        ds.timestamps.push_back(t0 + i * step);
        ds.features(i, 0) = std::sin(0.37 * static_cast<double>(i));
        ds.features(i, 1) = static_cast<double>(i % spd);
        ds.power(i) = 0.4 + 0.3 * std::sin(0.37 * static_cast<double>(i));
    }
    return ds;
}

bool same_dataset(const TimeSeriesDataset& a, const TimeSeriesDataset& b) {
    return a.park_id == b.park_id && a.samples_per_day == b.samples_per_day &&
           a.timestamps == b.timestamps && a.feature_names == b.feature_names &&
           a.features == b.features && a.power == b.power;
}

// A desk-scale configuration that keeps hub training in the millisecond range.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.hub_kind = HubKind::wind;
    cfg.n_parks = 2;
    cfg.n_days = 20;
    cfg.folds = 2;
    cfg.days_grid = {7};
    cfg.seasons = {Season::winter};
    cfg.mlp_k = 3;
    cfg.mlp_epochs = 3;
    cfg.belm_hidden = 10;
    cfg.gbrt_estimators = 25;
    cfg.csge_members = 2;
    return cfg;
}

std::vector<std::string> errors_row(const std::string& days, const std::string& method,
                                    const std::string& park, const std::string& season, double nr) {
    return {"wind", season, days, method, park, fmt_full(nr), "0"};
}

}  // namespace

TEST_CASE("method registry and errors header") {
    CHECK(method_registry() == std::vector<std::string>{"di", "dili", "online-belm", "wd", "wds",
                                                        "bt", "bma", "csge", "gbrt"});
    for (const auto& name : method_registry()) CHECK(method_known(name));
    CHECK_FALSE(method_known("DI"));
    CHECK_FALSE(method_known(""));
    CHECK_FALSE(method_known("boost"));
    CHECK(errors_header() == std::vector<std::string>{"dataset", "season", "days", "method", "park",
                                                      "nrmse", "crps"});
}

TEST_CASE("empty config text yields the documented defaults") {
    const ExperimentConfig cfg = parse_config("");
    CHECK(cfg.hub_kind == HubKind::wind);
    CHECK(cfg.n_parks == 20);
    CHECK(cfg.n_days == 730);
    CHECK(cfg.folds == 5);
    CHECK(cfg.days_grid == train_days_grid());
    CHECK(cfg.seasons == std::vector<Season>{Season::spring, Season::summer, Season::autumn,
                                             Season::winter});
    CHECK(cfg.methods == method_registry());
    CHECK(cfg.seed == 0);
    CHECK(cfg.out_dir.empty());
    CHECK(cfg.test_fraction == 0.25);
    CHECK(cfg.selection == SelectionStrategy::evidence);
    CHECK(cfg.gbrt_depths == std::vector<int>{4});
    CHECK(cfg.gbrt_learning_rates == std::vector<double>{0.1});
    CHECK(cfg.gbrt_estimators == 300);
    CHECK(cfg.csge_members == 4);
    CHECK(cfg.mlp_k == 4);
    CHECK(cfg.mlp_lr == 0.05);
    CHECK(cfg.mlp_epochs == 30);
    CHECK(cfg.belm_hidden == 64);
    CHECK(parse_config("# nothing here\n\n   \n").n_parks == 20);
}

TEST_CASE("config parses every key with comments and spacing") {
    const ExperimentConfig cfg = parse_config(
        "# full override\n"
        "hub_kind = pv\n"
        "n_parks = 6   # six parks\n"
        "n_days = 40\n"
        "folds = 3\n"
        "days_grid = 3, 7,60\n"
        "seasons = summer , winter\n"
        "methods = gbrt, di ,dili\n"
        "seed = 18446744073709551615\n"
        "out_dir = runs/a=b\n"
        "test_fraction = 0.2\n"
        "selection = nrmse\n"
        "gbrt_depths = 2,5\n"
        "gbrt_learning_rates = 0.05,0.2\n"
        "gbrt_estimators = 44\n"
        "csge_members = 3\n"
        "mlp_k = 6\n"
        "mlp_lr = 0.01\n"
        "mlp_epochs = 9\n"
        "belm_hidden = 32\n");
    CHECK(cfg.hub_kind == HubKind::pv);
    CHECK(cfg.n_parks == 6);
    CHECK(cfg.n_days == 40);
    CHECK(cfg.folds == 3);
    CHECK(cfg.days_grid == std::vector<int>{3, 7, 60});  // off-grid windows are an explicit override
    CHECK(cfg.seasons == std::vector<Season>{Season::summer, Season::winter});
    CHECK(cfg.methods == std::vector<std::string>{"gbrt", "di", "dili"});
    CHECK(cfg.seed == 18446744073709551615ull);
    CHECK(cfg.out_dir == "runs/a=b");  // only the first '=' separates key from value
    CHECK(cfg.test_fraction == 0.2);
    CHECK(cfg.selection == SelectionStrategy::nrmse);
    CHECK(cfg.gbrt_depths == std::vector<int>{2, 5});
    CHECK(cfg.gbrt_learning_rates == std::vector<double>{0.05, 0.2});
    CHECK(cfg.gbrt_estimators == 44);
    CHECK(cfg.csge_members == 3);
    CHECK(cfg.mlp_k == 6);
    CHECK(cfg.mlp_lr == 0.01);
    CHECK(cfg.mlp_epochs == 9);
    CHECK(cfg.belm_hidden == 32);
}

TEST_CASE("config rejection catalogue") {
    auto bad = [](const std::string& text, const std::string& what) {
        CHECK_THROWS_AS(parse_config(text), ConfigError);
        CHECK_THROWS_WITH(parse_config(text), Catch::Matchers::ContainsSubstring(what));
    };
    bad("zzz = 1\n", "unknown config key: zzz");
    bad("n_parks = 4\nn_parks = 5\n", "duplicate config key: n_parks");
    bad("# c\n\nnoequals\n", "config line 3: expected key = value");
    bad("= 4\n", "config line 1: missing key");
    bad("methods = di,flux\n", "unknown method: flux");
    bad("methods = di,di\n", "duplicate method: di");
    bad("days_grid = 7,,60\n", "empty list item");
    bad("days_grid =\n", "empty list");
    bad("n_parks = four\n", "expected integer, got 'four'");
    bad("n_parks = 4x\n", "expected integer");
    bad("seed = -1\n", "expected unsigned integer");
    bad("mlp_lr = fast\n", "expected number, got 'fast'");
    bad("hub_kind = tidal\n", "unknown hub kind: tidal");
    bad("seasons = monsoon\n", "unknown season: monsoon");
    bad("selection = magic\n", "unknown selection strategy");

    // range validation runs on the fully parsed configuration
    bad("n_parks = 1\n", "n_parks must be >= 2");
    bad("folds = 1\n", "folds must be >= 2");
    bad("n_parks = 4\n", "folds exceed n_parks");  // default folds = 5
    bad("n_days = 3\n", "n_days must be >= 4");
    bad("days_grid = 0\n", "days_grid entries must be >= 1");
    bad("test_fraction = 1\n", "test_fraction must be in (0, 1)");
    bad("test_fraction = 0\n", "test_fraction must be in (0, 1)");
    bad("gbrt_depths = 0\n", "gbrt_depths entries must be >= 1");
    bad("gbrt_learning_rates = 0\n", "gbrt_learning_rates entries must be > 0");
    bad("gbrt_estimators = 0\n", "gbrt_estimators must be >= 1");
    bad("csge_members = 0\n", "csge_members must be >= 1");
    bad("mlp_k = 0\n", "mlp_k must be >= 1");
    bad("mlp_lr = 0\n", "mlp_lr must be > 0");
    bad("mlp_epochs = 0\n", "mlp_epochs must be >= 1");
    bad("belm_hidden = 9\n", "belm_hidden must be in [10, 1000]");
    bad("belm_hidden = 1001\n", "belm_hidden must be in [10, 1000]");

    ExperimentConfig cfg;
    cfg.methods.clear();
    CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("methods is empty"));
    cfg = ExperimentConfig{};
    cfg.seasons.clear();
    CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("seasons is empty"));
    cfg = ExperimentConfig{};
    cfg.days_grid.clear();
    CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("days_grid is empty"));
    cfg = ExperimentConfig{};
    cfg.gbrt_learning_rates.clear();
    CHECK_THROWS_WITH(validate_config(cfg), Catch::Matchers::ContainsSubstring("gbrt grids"));
}

TEST_CASE("config file loading") {
    const std::string dir = tmp_dir("transferhub-test-config");
    std::ofstream(dir + "/run.cfg") << "n_parks = 8\nseed = 42\n";
    const ExperimentConfig cfg = load_config(dir + "/run.cfg");
    CHECK(cfg.n_parks == 8);
    CHECK(cfg.seed == 42);
    CHECK(cfg.folds == 5);
    CHECK_THROWS_AS(load_config(dir + "/nope.cfg"), ConfigError);
    CHECK_THROWS_WITH(load_config(dir + "/nope.cfg"),
                      Catch::Matchers::ContainsSubstring("missing expected file"));
}

TEST_CASE("thread budget respects the environment cap") {
    const char* old = std::getenv("TRANSFERHUB_THREADS");
    const bool had = old != nullptr;
    const std::string saved = had ? old : "";

    unsetenv("TRANSFERHUB_THREADS");
    CHECK(detail::thread_budget() >= 1);
    setenv("TRANSFERHUB_THREADS", "1", 1);
    CHECK(detail::thread_budget() == 1);
    setenv("TRANSFERHUB_THREADS", "0", 1);
    CHECK_THROWS_AS(detail::thread_budget(), ConfigError);
    CHECK_THROWS_WITH(detail::thread_budget(),
                      Catch::Matchers::ContainsSubstring("TRANSFERHUB_THREADS"));
    setenv("TRANSFERHUB_THREADS", "two", 1);
    CHECK_THROWS_AS(detail::thread_budget(), ConfigError);
    setenv("TRANSFERHUB_THREADS", "2x", 1);
    CHECK_THROWS_AS(detail::thread_budget(), ConfigError);
    setenv("TRANSFERHUB_THREADS", "-1", 1);
    CHECK_THROWS_AS(detail::thread_budget(), ConfigError);

    if (had)
        setenv("TRANSFERHUB_THREADS", saved.c_str(), 1);
    else
        unsetenv("TRANSFERHUB_THREADS");
}

TEST_CASE("parallel for visits every index exactly once") {
    const std::size_t n = 137;
    std::vector<int> hits(n, 0);
    std::vector<double> out(n, 0.0);
    detail::parallel_for(n, [&](std::size_t i) {
        ++hits[i];
        out[i] = 3.0 * static_cast<double>(i) + 1.0;
    });
    bool all_once = true, all_right = true;
    for (std::size_t i = 0; i < n; ++i) {
        all_once = all_once && hits[i] == 1;
        all_right = all_right && out[i] == 3.0 * static_cast<double>(i) + 1.0;
    }
    CHECK(all_once);
    CHECK(all_right);

    detail::parallel_for(std::size_t{0}, [](std::size_t) { FAIL("no work expected"); });

    int calls = 0;
    detail::parallel_for(std::size_t{1}, [&](std::size_t i) {
        CHECK(i == 0);
        ++calls;
    });
    CHECK(calls == 1);

    // the first worker exception is rethrown on the calling thread
    CHECK_THROWS_WITH(detail::parallel_for(std::size_t{12},
                                           [](std::size_t i) {
                                               if (i == 7) throw std::runtime_error("boom 7");
                                           }),
                      Catch::Matchers::ContainsSubstring("boom"));
}

TEST_CASE("trailing day validation split") {
    const TimeSeriesDataset ds = make_ds(8);
    const auto [tr, val] = detail::trailing_day_split(ds, 0.25);
    CHECK(same_dataset(tr, take_days(ds, {0, 1, 2, 3, 4, 5})));
    CHECK(same_dataset(val, take_days(ds, {6, 7})));

    // at least one validation day even for tiny fractions
    const auto [tr2, val2] = detail::trailing_day_split(ds, 0.01);
    CHECK(tr2.day_count() == 7);
    CHECK(val2.day_count() == 1);

    CHECK_THROWS_WITH(detail::trailing_day_split(make_ds(4), 0.9),
                      Catch::Matchers::ContainsSubstring("no training days"));
}

TEST_CASE("season filtering keeps whole in-season days") {
    // Feb 27..29 are winter, Mar 1..3 spring (2020 is a leap year).
    const TimeSeriesDataset ds = make_ds(6, 4, 2020, 2, 27);
    CHECK(same_dataset(filter_season(ds, Season::winter), take_days(ds, {0, 1, 2})));
    CHECK(same_dataset(filter_season(ds, Season::spring), take_days(ds, {3, 4, 5})));
    CHECK_THROWS_WITH(filter_season(ds, Season::summer),
                      Catch::Matchers::ContainsSubstring("no summer days in dataset test-park"));
}

TEST_CASE("target split is a pure function of park, season, and seed") {
    // Feb 24..29 winter, Mar 1..10 spring.
    const TimeSeriesDataset ds = make_ds(16, 4, 2020, 2, 24);
    const TargetSplit s = make_target_split(ds, Season::spring, 0.25, 77);

    const TimeSeriesDataset in_season = filter_season(ds, Season::spring);
    const std::uint64_t seed = derive_seed(77, "split|test-park|spring");
    const auto [pool, test] = split_test_days(in_season, 0.25, seed);
    CHECK(same_dataset(s.train_pool, pool));
    CHECK(same_dataset(s.test, test));
    CHECK(s.test.day_count() == 3);
    CHECK(s.train_pool.day_count() == 7);

    const TargetSplit again = make_target_split(ds, Season::spring, 0.25, 77);
    CHECK(same_dataset(again.test, s.test));
    CHECK(same_dataset(again.train_pool, s.train_pool));

    // the split is keyed on the park id, so every method sees the same days
    // but different parks do not
    TimeSeriesDataset other = ds;
    other.park_id = "other-park";
    const TargetSplit o = make_target_split(other, Season::spring, 0.25, 77);
    CHECK(o.test.timestamps != s.test.timestamps);
}

TEST_CASE("summary ranks methods and tests against the gbrt baseline") {
    CsvTable errors;
    errors.header = errors_header();
    for (int c = 0; c < 8; ++c) {
        const std::string park = "p" + std::to_string(c);
        errors.rows.push_back(errors_row("7", "dili", park, "summer", 0.10 + 0.001 * c));
        errors.rows.push_back(errors_row("7", "di", park, "summer", 0.20 + 0.001 * c));
        errors.rows.push_back(errors_row("7", "gbrt", park, "summer", 0.30 + 0.001 * c));
        errors.rows.push_back(errors_row("7", "wd", park, "summer", 0.40 + 0.001 * c));
    }
    const CsvTable s = summarize_errors(errors);
    CHECK(s.header == std::vector<std::string>{"dataset", "days", "method", "mean_rank", "verdict"});
    REQUIRE(s.rows.size() == 4);
    // appearance order, exact mean ranks, and two-sided significance at n = 8
    CHECK(s.rows[0] == std::vector<std::string>{"wind", "7", "dili", "1", "v"});
    CHECK(s.rows[1] == std::vector<std::string>{"wind", "7", "di", "2", "v"});
    CHECK(s.rows[2] == std::vector<std::string>{"wind", "7", "gbrt", "3", "o"});
    CHECK(s.rows[3] == std::vector<std::string>{"wind", "7", "wd", "4", "^"});
}

TEST_CASE("summary averages tied ranks and reports o on scarce pairs") {
    CsvTable errors;
    errors.header = errors_header();
    // the cell key is (park, season): same park, two seasons = two cells
    errors.rows.push_back(errors_row("7", "dili", "p0", "summer", 0.5));
    errors.rows.push_back(errors_row("7", "gbrt", "p0", "summer", 0.5));
    errors.rows.push_back(errors_row("7", "dili", "p0", "winter", 0.4));
    errors.rows.push_back(errors_row("7", "gbrt", "p0", "winter", 0.6));
    const CsvTable s = summarize_errors(errors);
    REQUIRE(s.rows.size() == 2);
    CHECK(parse_double(s.rows[0][3]) == 1.25);  // (1.5 + 1) / 2
    CHECK(parse_double(s.rows[1][3]) == 1.75);
    CHECK(s.rows[0][4] == "o");  // one informative pair cannot reach significance
    CHECK(s.rows[1][4] == "o");

    // identical columns leave zero informative pairs: p = 1, still "o"
    CsvTable eq;
    eq.header = errors_header();
    for (int c = 0; c < 6; ++c) {
        eq.rows.push_back(errors_row("7", "dili", "p" + std::to_string(c), "summer", 0.5));
        eq.rows.push_back(errors_row("7", "gbrt", "p" + std::to_string(c), "summer", 0.5));
    }
    const CsvTable s2 = summarize_errors(eq);
    REQUIRE(s2.rows.size() == 2);
    CHECK(parse_double(s2.rows[0][3]) == 1.5);
    CHECK(parse_double(s2.rows[1][3]) == 1.5);
    CHECK(s2.rows[0][4] == "o");
    CHECK(s2.rows[1][4] == "o");
}

TEST_CASE("summary baseline and table grouping rules") {
    // without gbrt the first method anchors the significance test
    CsvTable errors;
    errors.header = errors_header();
    for (int c = 0; c < 8; ++c) {
        const std::string park = "p" + std::to_string(c);
        errors.rows.push_back(errors_row("7", "dili", park, "winter", 0.3));
        errors.rows.push_back(errors_row("7", "di", park, "winter", 0.2 + 0.001 * c));
        errors.rows.push_back(errors_row("60", "dili", park, "winter", 0.3));
        errors.rows.push_back(errors_row("60", "di", park, "winter", 0.4 + 0.001 * c));
    }
    const CsvTable s = summarize_errors(errors);
    REQUIRE(s.rows.size() == 4);  // two (dataset, days) tables in appearance order
    CHECK(s.rows[0] == std::vector<std::string>{"wind", "7", "dili", "2", "o"});
    CHECK(s.rows[1] == std::vector<std::string>{"wind", "7", "di", "1", "v"});
    CHECK(s.rows[2] == std::vector<std::string>{"wind", "60", "dili", "1", "o"});
    CHECK(s.rows[3] == std::vector<std::string>{"wind", "60", "di", "2", "^"});
}

TEST_CASE("summary with a single method") {
    CsvTable errors;
    errors.header = errors_header();
    errors.rows.push_back(errors_row("7", "gbrt", "p0", "summer", 0.5));
    errors.rows.push_back(errors_row("7", "gbrt", "p1", "summer", 0.7));
    const CsvTable s = summarize_errors(errors);
    REQUIRE(s.rows.size() == 1);
    CHECK(s.rows[0] == std::vector<std::string>{"wind", "7", "gbrt", "1", "o"});
}

TEST_CASE("summary input validation") {
    CsvTable bad;
    bad.header = {"dataset", "days"};
    CHECK_THROWS_WITH(summarize_errors(bad),
                      Catch::Matchers::ContainsSubstring("unexpected errors.csv header"));

    CsvTable empty;
    empty.header = errors_header();
    CHECK_THROWS_WITH(summarize_errors(empty),
                      Catch::Matchers::ContainsSubstring("errors table is empty"));

    CsvTable ragged;
    ragged.header = errors_header();
    ragged.rows.push_back({"wind", "summer", "7", "di", "p0", "0.5"});
    CHECK_THROWS_WITH(summarize_errors(ragged),
                      Catch::Matchers::ContainsSubstring("malformed errors.csv row"));

    CsvTable dup;
    dup.header = errors_header();
    dup.rows.push_back(errors_row("7", "di", "p0", "summer", 0.5));
    dup.rows.push_back(errors_row("7", "di", "p0", "summer", 0.6));
    CHECK_THROWS_WITH(summarize_errors(dup),
                      Catch::Matchers::ContainsSubstring("duplicate errors.csv cell"));

    CsvTable holes;
    holes.header = errors_header();
    holes.rows.push_back(errors_row("7", "di", "p0", "summer", 0.5));
    holes.rows.push_back(errors_row("7", "gbrt", "p0", "summer", 0.6));
    holes.rows.push_back(errors_row("7", "di", "p1", "summer", 0.5));
    CHECK_THROWS_WITH(summarize_errors(holes),
                      Catch::Matchers::ContainsSubstring("incomplete errors table for days=7"));

    CsvTable nonnum;
    nonnum.header = errors_header();
    nonnum.rows.push_back({"wind", "summer", "7", "di", "p0", "soon", "0"});
    CHECK_THROWS_WITH(summarize_errors(nonnum),
                      Catch::Matchers::ContainsSubstring("unparseable numeric cell"));
}

TEST_CASE("report markers") {
    CHECK(report_marker("v") == "\xE2\x88\xA8");
    CHECK(report_marker("^") == "\xE2\x88\xA7");
    CHECK(report_marker("o") == "\xE2\x97\x87");
    CHECK(report_marker("anything else") == "\xE2\x97\x87");
}

TEST_CASE("report renders an aligned table") {
    CsvTable s;
    s.header = {"dataset", "days", "method", "mean_rank", "verdict"};
    s.rows.push_back({"wind", "7", "dili", "1.25", "v"});
    s.rows.push_back({"wind", "7", "gbrt", "2.5", "o"});
    s.rows.push_back({"wind", "60", "wd", "3", "^"});
    const std::string expected =
        "dataset  days  method  mean_rank  vs_baseline\n"
        "wind     7     dili    1.25       \xE2\x88\xA8\n"
        "wind     7     gbrt    2.50       \xE2\x97\x87\n"
        "wind     60    wd      3.00       \xE2\x88\xA7\n";
    CHECK(render_report(s) == expected);

    CsvTable bad;
    bad.header = {"dataset", "days"};
    CHECK_THROWS_WITH(render_report(bad),
                      Catch::Matchers::ContainsSubstring("unexpected summary.csv header"));

    CsvTable ragged;
    ragged.header = s.header;
    ragged.rows.push_back({"wind", "7", "dili", "1.0"});
    CHECK_THROWS_WITH(render_report(ragged),
                      Catch::Matchers::ContainsSubstring("malformed summary.csv row"));
}

TEST_CASE("hub training is deterministic and keeps dataset order") {
    ExperimentConfig cfg = tiny_config();
    cfg.n_days = 12;
    cfg.mlp_epochs = 2;
    const std::vector<TimeSeriesDataset> data = gen_hub(HubKind::wind, 2, cfg.n_days, 5);

    const TrainedHub hub = train_hub(data, cfg, true);
    REQUIRE(hub.mlp.size() == 2);
    REQUIRE(hub.belm.size() == 2);
    const Eigen::MatrixXd probe = data[0].features.topRows(24);
    for (int i = 0; i < 2; ++i) {
        CHECK(hub.mlp[i].park_id == data[i].park_id);
        CHECK(hub.belm[i].park_id == data[i].park_id);
        CHECK_FALSE(hub.mlp[i].is_belm());
        CHECK(hub.belm[i].is_belm());
        CHECK(std::isfinite(hub.mlp[i].val_nrmse));
        CHECK(hub.mlp[i].val_nrmse >= 0.0);
        CHECK(std::isfinite(hub.belm[i].val_nrmse));
    }

    const TrainedHub again = train_hub(data, cfg, true);
    for (int i = 0; i < 2; ++i) {
        CHECK(again.mlp[i].val_nrmse == hub.mlp[i].val_nrmse);
        CHECK(again.belm[i].val_nrmse == hub.belm[i].val_nrmse);
        CHECK(again.mlp[i].point_predict(probe) == hub.mlp[i].point_predict(probe));
        CHECK(again.belm[i].point_predict(probe) == hub.belm[i].point_predict(probe));
    }

    const TrainedHub lean = train_hub(data, cfg, false);
    CHECK(lean.mlp.size() == 2);
    CHECK(lean.belm.empty());
    CHECK(lean.flat().size() == 2);

    // flat() interleaves park by park; from_flat() reverses it
    const std::vector<SourceModel> flat = hub.flat();
    REQUIRE(flat.size() == 4);
    CHECK(flat[0].park_id == data[0].park_id);
    CHECK_FALSE(flat[0].is_belm());
    CHECK(flat[1].park_id == data[0].park_id);
    CHECK(flat[1].is_belm());
    CHECK(flat[2].park_id == data[1].park_id);
    CHECK_FALSE(flat[2].is_belm());
    CHECK(flat[3].is_belm());
    const TrainedHub re = TrainedHub::from_flat(flat);
    REQUIRE(re.mlp.size() == 2);
    REQUIRE(re.belm.size() == 2);
    CHECK(re.mlp[1].park_id == data[1].park_id);
    CHECK(re.belm[0].park_id == data[0].park_id);
}

TEST_CASE("mlp source training reports divergence after retries") {
    ExperimentConfig cfg = tiny_config();
    cfg.mlp_epochs = 2;

    TimeSeriesDataset broken = make_ds(4);
    broken.power.setConstant(1e200);  // squared loss overflows on the first batch
    CHECK_THROWS_WITH(train_mlp_source(broken, cfg, 1),
                      Catch::Matchers::ContainsSubstring("source training diverged for park test-park"));

    TimeSeriesDataset val_broken = make_ds(4);
    val_broken.power.tail(4).setConstant(1e200);  // training is fine, validation is not
    CHECK_THROWS_WITH(train_mlp_source(val_broken, cfg, 1),
                      Catch::Matchers::ContainsSubstring("source training diverged"));
}

TEST_CASE("small experiment produces a complete, deterministic table") {
    ExperimentConfig cfg = tiny_config();
    cfg.methods = {"di", "dili", "online-belm", "gbrt", "bma", "csge"};
    cfg.seed = 11;

    const ExperimentOutput out = run_experiment(cfg);
    CHECK(out.errors.header == errors_header());
    REQUIRE(out.errors.rows.size() == 12);  // 1 season x 1 window x 6 methods x 2 parks

    for (std::size_t i = 0; i < out.errors.rows.size(); ++i) {
        const auto& r = out.errors.rows[i];
        REQUIRE(r.size() == 7);
        CHECK(r[0] == "wind");
        CHECK(r[1] == "winter");
        CHECK(r[2] == "7");
        CHECK(r[3] == cfg.methods[i / 2]);
        CHECK(r[4] == (i % 2 == 0 ? "wind-000" : "wind-001"));
        const double nr = parse_double(r[5]);
        const double cr = parse_double(r[6]);
        CHECK(std::isfinite(nr));
        CHECK(nr >= 0.0);
        CHECK(std::isfinite(cr));
        CHECK(cr >= 0.0);
    }

    // with a lone source park, BMA and CSGE collapse onto the DILI member
    for (int p = 0; p < 2; ++p) {
        const std::string& dili_nr = out.errors.rows[2 + p][5];
        CHECK(out.errors.rows[8 + p][5] == dili_nr);   // bma mean == member mean
        CHECK(out.errors.rows[10 + p][5] == dili_nr);  // csge == member
        const double dili_cr = parse_double(out.errors.rows[2 + p][6]);
        const double bma_cr = parse_double(out.errors.rows[8 + p][6]);
        CHECK(std::abs(bma_cr - dili_cr) < 1e-9);  // mixture vs closed-form CRPS
    }

    REQUIRE(out.summary.rows.size() == 6);
    double rank_sum = 0.0;
    for (std::size_t mi = 0; mi < 6; ++mi) {
        const auto& r = out.summary.rows[mi];
        CHECK(r[0] == "wind");
        CHECK(r[1] == "7");
        CHECK(r[2] == cfg.methods[mi]);
        CHECK(r[4] == "o");  // two cells can never reach significance
        const double rank = parse_double(r[3]);
        CHECK(rank >= 1.0);
        CHECK(rank <= 6.0);
        rank_sum += rank;
    }
    CHECK(rank_sum == 21.0);  // tie averaging keeps the per-cell rank sum intact

    CHECK(out.report_text.rfind("dataset", 0) == 0);
    CHECK(out.report_text.find("vs_baseline\n") != std::string::npos);
    std::size_t glyphs = 0;
    for (std::size_t pos = out.report_text.find("\xE2\x97\x87"); pos != std::string::npos;
         pos = out.report_text.find("\xE2\x97\x87", pos + 1))
        ++glyphs;
    CHECK(glyphs == 6);

    const ExperimentOutput again = run_experiment(cfg);
    CHECK(again.errors.rows == out.errors.rows);
    CHECK(again.summary.rows == out.summary.rows);
    CHECK(again.report_text == out.report_text);
}

TEST_CASE("single-method experiment pins trivial ranks and covers fine-tuning") {
    ExperimentConfig cfg = tiny_config();
    cfg.methods = {"wds"};
    cfg.mlp_epochs = 2;
    cfg.seed = 3;

    const ExperimentOutput out = run_experiment(cfg);
    REQUIRE(out.errors.rows.size() == 2);
    CHECK(out.errors.rows[0][3] == "wds");
    CHECK(std::isfinite(parse_double(out.errors.rows[0][5])));
    CHECK(std::isfinite(parse_double(out.errors.rows[1][5])));
    REQUIRE(out.summary.rows.size() == 1);
    CHECK(out.summary.rows[0][3] == "1");
    CHECK(out.summary.rows[0][4] == "o");
}

TEST_CASE("monolithic dili cell equals the staged recomputation") {
    ExperimentConfig cfg = tiny_config();
    cfg.methods = {"dili"};
    cfg.seed = 29;

    const ExperimentOutput out = run_experiment(cfg);
    REQUIRE(out.errors.rows.size() == 2);
    REQUIRE(out.errors.rows[0][4] == "wind-000");

    // replay the protocol for park 0 from its public pieces
    const std::vector<TimeSeriesDataset> data = gen_hub(HubKind::wind, 2, cfg.n_days, cfg.seed);
    const TrainedHub hub = train_hub(data, cfg, false);
    const TargetSplit split = make_target_split(data[0], Season::winter, cfg.test_fraction, cfg.seed);
    const TimeSeriesDataset train = limit_training(split.train_pool, Season::winter, 7);

    const EvidenceScore ev = score_evidence(hub.mlp[1], train.features, train.power);
    Forecaster f;
    f.mode = AdaptMode::dili;
    BlrPredictor core;
    core.extractor = hub.mlp[1].extractor();
    core.heads.push_back(ev.head);
    f.core = std::move(core);

    const auto p = forecast_prob(f, split.test.features, split.test.horizons());
    REQUIRE(p.has_value());
    const double nr = nrmse(split.test.power, p->mu);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < split.test.power.size(); ++i)
        acc += crps_gaussian(p->mu(i), std::sqrt(p->sigma2(i)), split.test.power(i));
    const double crps = acc / static_cast<double>(split.test.power.size());

    CHECK(out.errors.rows[0][5] == fmt_full(nr));
    CHECK(out.errors.rows[0][6] == fmt_full(crps));
}

TEST_CASE("experiment surfaces season and window problems") {
    ExperimentConfig cfg = tiny_config();
    cfg.methods = {"di"};
    cfg.mlp_epochs = 2;

    cfg.seasons = {Season::summer};  // twenty January days hold no summer
    CHECK_THROWS_WITH(run_experiment(cfg), Catch::Matchers::ContainsSubstring("no summer days"));

    cfg.seasons = {Season::winter};
    cfg.days_grid = {90};  // the training pool holds at most 15 winter days
    CHECK_THROWS_WITH(run_experiment(cfg), Catch::Matchers::ContainsSubstring("has only"));
}

TEST_CASE("output directory is written once and never clobbered") {
    ExperimentOutput out;
    out.errors.header = errors_header();
    out.errors.rows.push_back(errors_row("7", "di", "p0", "summer", 0.25));
    out.errors.rows.push_back(errors_row("7", "di", "p1", "summer", 0.5));
    out.summary = summarize_errors(out.errors);
    out.report_text = render_report(out.summary);

    CHECK_THROWS_WITH(write_experiment_output("", out),
                      Catch::Matchers::ContainsSubstring("out_dir is required"));

    const std::string dir = tmp_dir("transferhub-test-outdir");
    write_experiment_output(dir, out);
    const CsvTable errs = read_csv_file(dir + "/errors.csv");
    CHECK(errs.header == out.errors.header);
    CHECK(errs.rows == out.errors.rows);
    const CsvTable summ = read_csv_file(dir + "/summary.csv");
    CHECK(summ.rows == out.summary.rows);
    std::ifstream rep(dir + "/report.txt", std::ios::binary);
    std::ostringstream ss;
    ss << rep.rdbuf();
    CHECK(ss.str() == out.report_text);

    CHECK_THROWS_WITH(write_experiment_output(dir, out),
                      Catch::Matchers::ContainsSubstring("already contains errors.csv"));

    const std::string dir2 = tmp_dir("transferhub-test-outdir2");
    std::ofstream(dir2 + "/report.txt") << "stale\n";
    CHECK_THROWS_WITH(write_experiment_output(dir2, out),
                      Catch::Matchers::ContainsSubstring("already contains report.txt"));
}

TEST_CASE("park dataset store round trip") {
    TimeSeriesDataset a = make_ds(3, 24, 2020, 5, 1, "alpha");
    a.nominal_power = 1.5;
    TimeSeriesDataset b = make_ds(2, 24, 2020, 6, 1, "beta");
    b.nominal_power = 2.25;

    const std::string dir = tmp_dir("transferhub-test-parks");
    save_datasets(dir, {a, b});
    CHECK(std::filesystem::exists(dir + "/parks.csv"));
    CHECK(std::filesystem::exists(dir + "/alpha.csv"));
    CHECK(std::filesystem::exists(dir + "/beta.csv"));

    const std::vector<TimeSeriesDataset> back = load_datasets(dir);
    REQUIRE(back.size() == 2);
    CHECK(same_dataset(back[0], a));
    CHECK(back[0].nominal_power == 1.5);
    CHECK(same_dataset(back[1], b));
    CHECK(back[1].nominal_power == 2.25);

    CsvTable manifest = read_csv_file(dir + "/parks.csv");
    manifest.rows[0] = {"alpha", "alpha.csv"};
    write_csv_file(dir + "/parks.csv", manifest);
    CHECK_THROWS_WITH(load_datasets(dir),
                      Catch::Matchers::ContainsSubstring("malformed parks.csv row"));
}

TEST_CASE("prediction files round trip and score correctly") {
    const TimeSeriesDataset ds = make_ds(2, 4, 2020, 7, 1);
    Eigen::VectorXd mu(8), sigma2(8);
    for (int i = 0; i < 8; ++i) {
        mu(i) = ds.power(i) + (i % 2 == 0 ? 0.05 : -0.03);
        sigma2(i) = 0.02 + 0.001 * i;
    }
    const std::string dir = tmp_dir("transferhub-test-preds");

    write_predictions(dir + "/point.csv", ds, mu, nullptr);
    const PredictionTable point = read_predictions(dir + "/point.csv");
    CHECK_FALSE(point.probabilistic);
    CHECK(point.mu == mu);
    CHECK(point.timestamps == ds.timestamps);
    CHECK(point.horizons == std::vector<int>{1, 2, 3, 4, 1, 2, 3, 4});
    const EvalScore ps = evaluate_predictions(point, ds);
    CHECK(ps.nrmse == nrmse(ds.power, mu));
    CHECK(ps.crps == (ds.power - mu).cwiseAbs().mean());  // point mass: absolute error

    write_predictions(dir + "/prob.csv", ds, mu, &sigma2);
    const PredictionTable prob = read_predictions(dir + "/prob.csv");
    CHECK(prob.probabilistic);
    CHECK(prob.mu == mu);
    CHECK(prob.sigma2 == sigma2);
    const EvalScore qs = evaluate_predictions(prob, ds);
    CHECK(qs.nrmse == ps.nrmse);
    double acc = 0.0;
    for (int i = 0; i < 8; ++i) acc += crps_gaussian(mu(i), std::sqrt(sigma2(i)), ds.power(i));
    CHECK(qs.crps == acc / 8.0);

    CHECK_THROWS_WITH(write_predictions(dir + "/bad.csv", ds, mu.head(3), nullptr),
                      Catch::Matchers::ContainsSubstring("prediction length mismatch"));

    std::ofstream(dir + "/badhead.csv") << "time,mu\n";
    CHECK_THROWS_WITH(read_predictions(dir + "/badhead.csv"),
                      Catch::Matchers::ContainsSubstring("unexpected predictions header"));
    std::ofstream(dir + "/ragged.csv")
        << "timestamp,horizon,mu\n2020-07-01T00:00:00Z,1,0.5\n2020-07-01T06:00:00Z,2\n";
    CHECK_THROWS_WITH(read_predictions(dir + "/ragged.csv"),
                      Catch::Matchers::ContainsSubstring("malformed predictions row 3"));

    TimeSeriesDataset shifted = ds;
    shifted.timestamps[1] += 60;
    CHECK_THROWS_WITH(evaluate_predictions(point, shifted),
                      Catch::Matchers::ContainsSubstring("prediction timestamp mismatch at row 3"));
    CHECK_THROWS_WITH(evaluate_predictions(point, take_days(ds, {0})),
                      Catch::Matchers::ContainsSubstring("predictions cover 8 rows, dataset has 4"));
}
