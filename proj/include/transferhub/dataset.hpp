#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "transferhub/common.hpp"
#include "transferhub/csv.hpp"

namespace transferhub {

//! Meteorological seasons by calendar month: MAM, JJA, SON, DJF.
enum class Season { spring, summer, autumn, winter };

inline Season season_of_month(unsigned month) {
    if (month >= 3 && month <= 5) return Season::spring;
    if (month >= 6 && month <= 8) return Season::summer;
    if (month >= 9 && month <= 11) return Season::autumn;
    return Season::winter;
}

inline std::string season_name(Season s) {
    switch (s) {
        case Season::spring: return "spring";
        case Season::summer: return "summer";
        case Season::autumn: return "autumn";
        default: return "winter";
    }
}

inline Season season_from_name(const std::string& name) {
    if (name == "spring") return Season::spring;
    if (name == "summer") return Season::summer;
    if (name == "autumn") return Season::autumn;
    if (name == "winter") return Season::winter;
    throw std::invalid_argument("unknown season: " + name);
}

//! A park's aligned NWP feature matrix and power series at fixed resolution.
//!
//! Rows are grouped into whole days of samples_per_day consecutive samples;
//! the horizon index of a row is its 1-based position within its day. A
//! freshly ingested dataset has strictly increasing timestamps at constant
//! step; day-subset datasets (train/test splits) keep the constant step only
//! within each day block.
struct TimeSeriesDataset {
    std::string park_id;
    double nominal_power = 1.0;
    std::vector<std::int64_t> timestamps;  // epoch seconds UTC
    std::vector<std::string> feature_names;
    Eigen::MatrixXd features;  // N x D
    Eigen::VectorXd power;     // length N
    int samples_per_day = 96;

    Eigen::Index rows() const { return power.size(); }
    Eigen::Index dims() const { return features.cols(); }

    std::int64_t step_seconds() const {
        if (timestamps.size() < 2) throw std::runtime_error("cannot infer step from fewer than 2 rows");
        return timestamps[1] - timestamps[0];
    }

    Eigen::Index day_count() const {
        if (rows() % samples_per_day != 0)
            throw std::runtime_error("dataset is not divisible into whole days");
        return rows() / samples_per_day;
    }

    //! 1-based lead-time slot of a row within its day.
    int horizon_of_row(Eigen::Index i) const {
        return static_cast<int>(i % samples_per_day) + 1;
    }

    //! Calendar month of a whole-day block (from its first timestamp).
    unsigned month_of_day(Eigen::Index day) const {
        return month_of(timestamps[static_cast<std::size_t>(day) * samples_per_day]);
    }

    std::vector<int> horizons() const {
        std::vector<int> h(static_cast<std::size_t>(rows()));
        for (Eigen::Index i = 0; i < rows(); ++i) h[static_cast<std::size_t>(i)] = horizon_of_row(i);
        return h;
    }
};

//! One day-ahead sample: a day identifier, the lead-time slot within the day,
//! and the (feature row, target) pair.
struct DayFrame {
    std::int64_t origin_day = 0;  // epoch day of the block's first timestamp
    int horizon = 0;              // 1..samples_per_day
    Eigen::RowVectorXd features;
    double target = 0.0;
};

inline DayFrame frame_at(const TimeSeriesDataset& ds, Eigen::Index i) {
    DayFrame f;
    const Eigen::Index day = i / ds.samples_per_day;
    f.origin_day = ds.timestamps[static_cast<std::size_t>(day) * ds.samples_per_day] / 86400;
    f.horizon = ds.horizon_of_row(i);
    f.features = ds.features.row(i);
    f.target = ds.power(i);
    return f;
}

struct SplitSpec {
    Season season = Season::summer;
    int train_days = 7;
    double test_fraction = 0.25;
    std::uint64_t seed = 0;
};

//! Documented training-window grid; other values require an explicit override.
inline const std::vector<int>& train_days_grid() {
    static const std::vector<int> grid{7, 14, 30, 60, 90};
    return grid;
}

inline void validate_split_spec(const SplitSpec& spec, bool allow_custom_days = false) {
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
        throw std::invalid_argument("test_fraction must be in (0, 1)");
    const auto& grid = train_days_grid();
    if (!allow_custom_days && std::find(grid.begin(), grid.end(), spec.train_days) == grid.end())
        throw std::invalid_argument("train_days " + std::to_string(spec.train_days) +
                                    " is not in the documented grid {7,14,30,60,90}");
}

//! Load `timestamp,power,<feature...>` CSV. Power is left unnormalized; the
//! sampling step is inferred from the first two rows and enforced throughout.
namespace detail {

inline TimeSeriesDataset parse_dataset_csv(const std::string& path) {
    const CsvTable t = read_csv_file(path);
    auto col_of = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < t.header.size(); ++i)
            if (t.header[i] == name) return i;
        throw std::runtime_error("missing column: " + name);
    };
    const std::size_t ts_col = col_of("timestamp");
    const std::size_t power_col = col_of("power");

    TimeSeriesDataset ds;
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (i != ts_col && i != power_col) ds.feature_names.push_back(t.header[i]);

    const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
    const Eigen::Index d = static_cast<Eigen::Index>(ds.feature_names.size());
    ds.timestamps.resize(t.rows.size());
    ds.features.resize(n, d);
    ds.power.resize(n);

    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "row " + std::to_string(r + 2);  // 1-based, after header
        if (row.size() != t.header.size())
            throw std::runtime_error(where + ": expected " + std::to_string(t.header.size()) +
                                     " cells, got " + std::to_string(row.size()));
        try {
            ds.timestamps[r] = parse_timestamp(row[ts_col]);
            Eigen::Index fc = 0;
            for (std::size_t c = 0; c < row.size(); ++c) {
                if (c == ts_col) continue;
                const double v = parse_double(row[c]);
                if (!std::isfinite(v)) throw std::runtime_error("non-finite value");
                if (c == power_col)
                    ds.power(static_cast<Eigen::Index>(r)) = v;
                else
                    ds.features(static_cast<Eigen::Index>(r), fc++) = v;
            }
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace detail

inline TimeSeriesDataset load_csv(const std::string& path) {
    TimeSeriesDataset ds = detail::parse_dataset_csv(path);
    if (ds.rows() >= 2) {
        const std::int64_t step = ds.timestamps[1] - ds.timestamps[0];
        if (step <= 0) throw std::runtime_error("non-monotonic timestamps at row 3");
        for (std::size_t r = 2; r < ds.timestamps.size(); ++r) {
            const std::int64_t dt = ds.timestamps[r] - ds.timestamps[r - 1];
            if (dt <= 0) throw std::runtime_error("non-monotonic timestamps at row " + std::to_string(r + 2));
            if (dt != step)
                throw std::runtime_error("irregular timestamp step at row " + std::to_string(r + 2) +
                                         " (expected " + std::to_string(step) + " s)");
        }
        if (86400 % step == 0) ds.samples_per_day = static_cast<int>(86400 / step);
    }
    return ds;
}

//! Loader for day-subset artifacts (train/test splits): the step is constant
//! within each whole-day block, but blocks need not be calendar-adjacent.
inline TimeSeriesDataset load_day_blocks_csv(const std::string& path) {
    TimeSeriesDataset ds = detail::parse_dataset_csv(path);
    if (ds.rows() < 2) return ds;
    const std::int64_t step = ds.timestamps[1] - ds.timestamps[0];
    if (step <= 0) throw std::runtime_error("non-monotonic timestamps at row 3");
    if (86400 % step != 0)
        throw std::runtime_error("cannot infer samples per day from step " + std::to_string(step) + " s");
    ds.samples_per_day = static_cast<int>(86400 / step);
    for (std::size_t r = 1; r < ds.timestamps.size(); ++r) {
        const std::int64_t dt = ds.timestamps[r] - ds.timestamps[r - 1];
        if (dt <= 0) throw std::runtime_error("non-monotonic timestamps at row " + std::to_string(r + 2));
        if (r % static_cast<std::size_t>(ds.samples_per_day) != 0 && dt != step)
            throw std::runtime_error("irregular timestamp step at row " + std::to_string(r + 2) +
                                     " (expected " + std::to_string(step) + " s)");
    }
    if (ds.rows() % ds.samples_per_day != 0)
        throw std::runtime_error("file does not contain whole days");
    return ds;
}

inline void write_csv(const TimeSeriesDataset& ds, const std::string& path) {
    CsvTable t;
    t.header.push_back("timestamp");
    t.header.push_back("power");
    for (const auto& f : ds.feature_names) t.header.push_back(f);
    t.rows.reserve(static_cast<std::size_t>(ds.rows()));
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(format_timestamp(ds.timestamps[static_cast<std::size_t>(i)]));
        row.push_back(fmt_full(ds.power(i)));
        for (Eigen::Index c = 0; c < ds.dims(); ++c) row.push_back(fmt_full(ds.features(i, c)));
        t.rows.push_back(std::move(row));
    }
    write_csv_file(path, t);
}

inline TimeSeriesDataset normalize_power(const TimeSeriesDataset& ds, double nominal) {
    if (!(nominal > 0.0)) throw std::invalid_argument("nominal power must be > 0");
    TimeSeriesDataset out = ds;
    out.power /= nominal;
    out.nominal_power = nominal;
    return out;
}

//! Keep the given whole days (indices into the day blocks), in order.
inline TimeSeriesDataset take_days(const TimeSeriesDataset& ds, const std::vector<Eigen::Index>& days) {
    const int spd = ds.samples_per_day;
    TimeSeriesDataset out;
    out.park_id = ds.park_id;
    out.nominal_power = ds.nominal_power;
    out.feature_names = ds.feature_names;
    out.samples_per_day = spd;
    out.features.resize(static_cast<Eigen::Index>(days.size()) * spd, ds.dims());
    out.power.resize(static_cast<Eigen::Index>(days.size()) * spd);
    out.timestamps.reserve(days.size() * static_cast<std::size_t>(spd));
    Eigen::Index at = 0;
    for (Eigen::Index day : days) {
        const Eigen::Index start = day * spd;
        out.features.middleRows(at, spd) = ds.features.middleRows(start, spd);
        out.power.segment(at, spd) = ds.power.segment(start, spd);
        for (int k = 0; k < spd; ++k)
            out.timestamps.push_back(ds.timestamps[static_cast<std::size_t>(start + k)]);
        at += spd;
    }
    return out;
}

//! Day-level test split: round(fraction * n_days) whole days sampled without
//! replacement, deterministic per seed. Train and test day sets are disjoint
//! and exhaustive.
inline std::pair<TimeSeriesDataset, TimeSeriesDataset>
split_test_days(const TimeSeriesDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("fraction must be in (0, 1)");
    const Eigen::Index n_days = ds.day_count();
    if (n_days < 4) throw std::invalid_argument("need at least 4 whole days, have " + std::to_string(n_days));
    const auto n_test = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(n_days)));
    if (n_test < 1 || n_test >= n_days)
        throw std::invalid_argument("fraction " + std::to_string(fraction) + " leaves a degenerate split");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_days));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<Eigen::Index> test(order.begin(), order.begin() + n_test);
    std::vector<Eigen::Index> train(order.begin() + n_test, order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {take_days(ds, train), take_days(ds, test)};
}

//! The last `train_days` whole days whose calendar month falls in the season.
inline TimeSeriesDataset limit_training(const TimeSeriesDataset& ds, Season season, int train_days) {
    if (train_days < 1) throw std::invalid_argument("train_days must be >= 1");
    const Eigen::Index n_days = ds.day_count();
    std::vector<Eigen::Index> in_season;
    for (Eigen::Index day = 0; day < n_days; ++day)
        if (season_of_month(ds.month_of_day(day)) == season) in_season.push_back(day);
    if (static_cast<int>(in_season.size()) < train_days)
        throw std::invalid_argument("season " + season_name(season) + " has only " +
                                    std::to_string(in_season.size()) + " days, need " +
                                    std::to_string(train_days));
    std::vector<Eigen::Index> keep(in_season.end() - train_days, in_season.end());
    return take_days(ds, keep);
}

inline TimeSeriesDataset limit_training(const TimeSeriesDataset& ds, const SplitSpec& spec) {
    return limit_training(ds, spec.season, spec.train_days);
}

//! One cross-validation fold: the parks acting as targets and the rest as
//! sources. Every park is a target in exactly one fold.
struct Fold {
    std::vector<std::size_t> targets;
    std::vector<std::size_t> sources;
};

inline std::vector<Fold> make_folds(std::size_t n_parks, int n_folds) {
    if (n_folds < 2) throw std::invalid_argument("need at least 2 folds");
    if (n_parks < static_cast<std::size_t>(n_folds))
        throw std::invalid_argument("hub of " + std::to_string(n_parks) + " parks is smaller than " +
                                    std::to_string(n_folds) + " folds");
    std::vector<Fold> folds(static_cast<std::size_t>(n_folds));
    for (int f = 0; f < n_folds; ++f) {
        const std::size_t lo = n_parks * static_cast<std::size_t>(f) / static_cast<std::size_t>(n_folds);
        const std::size_t hi = n_parks * (static_cast<std::size_t>(f) + 1) / static_cast<std::size_t>(n_folds);
        for (std::size_t p = 0; p < n_parks; ++p) {
            if (p >= lo && p < hi)
                folds[static_cast<std::size_t>(f)].targets.push_back(p);
            else
                folds[static_cast<std::size_t>(f)].sources.push_back(p);
        }
    }
    return folds;
}

}  // namespace transferhub
