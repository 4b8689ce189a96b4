#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "transferhub/common.hpp"
#include "transferhub/dataset.hpp"

namespace transferhub {

// Synthetic stand-in for the proprietary park datasets: the generating
// recipe is invented (AR(1) weather + parametric power curves), chosen so
// that day-ahead forecast error dominates and hubs are heterogeneous.

constexpr std::int64_t kSynthStartEpoch = 18262LL * 86400LL;  // 2020-01-01T00:00:00Z

struct WindParkSpec {
    std::string park_id = "wind-000";
    double v0 = 6.5;                // logistic midpoint, m/s
    double steepness = 1.0;
    double mean_wind = 6.5;         // AR(1) mean-reverting level
    double ar_rho = 0.97;
    double ar_sd = 0.6;
    double feature_noise_sd = 0.8;  // NWP error on wind speed
    double drop_prob = 0.01;        // feed-in management event per day
    double nominal_power = 1.0;
    std::uint64_t seed = 0;
};

struct PvParkSpec {
    std::string park_id = "pv-000";
    double amplitude = 0.9;       // clear-sky peak radiation, (0,1]
    double peak_hour = 12.5;      // solar noon
    double width = 3.2;           // hours
    double cloud_noise_sd = 0.08; // NWP error on radiation
    double gain = 1.1;            // monotone radiation -> power slope
    double nominal_power = 1.0;
    std::uint64_t seed = 0;
};

inline void validate(const WindParkSpec& s) {
    if (!(s.steepness > 0)) throw std::invalid_argument("steepness must be > 0");
    if (!(s.drop_prob >= 0 && s.drop_prob < 1)) throw std::invalid_argument("drop_prob must be in [0,1)");
    if (!(s.feature_noise_sd >= 0)) throw std::invalid_argument("feature_noise_sd must be >= 0");
    if (!(s.nominal_power > 0)) throw std::invalid_argument("nominal_power must be > 0");
}

inline void validate(const PvParkSpec& s) {
    if (!(s.amplitude > 0 && s.amplitude <= 1)) throw std::invalid_argument("amplitude must be in (0,1]");
    if (!(s.width > 0)) throw std::invalid_argument("width must be > 0");
    if (!(s.cloud_noise_sd >= 0)) throw std::invalid_argument("cloud_noise_sd must be >= 0");
    if (!(s.gain > 0)) throw std::invalid_argument("gain must be > 0");
}

//! Logistic power curve evaluated at a true wind speed, clipped to [0,1].
inline double logistic_power(const WindParkSpec& spec, double v_true) {
    const double p = 1.0 / (1.0 + std::exp(-spec.steepness * (v_true - spec.v0)));
    return std::min(1.0, std::max(0.0, p));
}

//! Clear-sky radiation bell, zero outside peak_hour +/- 3 width (night).
inline double clear_sky_radiation(const PvParkSpec& spec, double hour) {
    const double d = hour - spec.peak_hour;
    if (std::abs(d) > 3.0 * spec.width) return 0.0;
    return spec.amplitude * std::exp(-d * d / (2.0 * spec.width * spec.width));
}

inline TimeSeriesDataset gen_wind(const WindParkSpec& spec, int n_days,
                                  std::int64_t start_epoch = kSynthStartEpoch,
                                  int samples_per_day = 96) {
    validate(spec);
    if (n_days < 1) throw std::invalid_argument("n_days must be >= 1");
    const std::int64_t step = 86400 / samples_per_day;
    const Eigen::Index n = static_cast<Eigen::Index>(n_days) * samples_per_day;

    TimeSeriesDataset ds;
    ds.park_id = spec.park_id;
    ds.nominal_power = 1.0;  // already normalized
    ds.samples_per_day = samples_per_day;
    ds.feature_names = {"forecast_wind_speed", "wind_direction", "pressure"};
    ds.features.resize(n, 3);
    ds.power.resize(n);
    ds.timestamps.resize(static_cast<std::size_t>(n));

    Rng rng(spec.seed);
    double v = spec.mean_wind;           // true wind, hidden from features
    double dir = rng.uniform(0.0, 360.0);
    double pres = 1013.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        v = spec.mean_wind + spec.ar_rho * (v - spec.mean_wind) + spec.ar_sd * rng.normal();
        v = std::max(0.0, v);
        const double forecast = std::max(0.0, v + rng.normal(0.0, spec.feature_noise_sd));
        dir = std::fmod(dir + rng.normal(0.0, 12.0) + 360.0, 360.0);
        pres = 1013.0 + 0.995 * (pres - 1013.0) + rng.normal(0.0, 0.3);

        ds.timestamps[static_cast<std::size_t>(i)] = start_epoch + i * step;
        ds.features(i, 0) = forecast;
        ds.features(i, 1) = dir;
        ds.features(i, 2) = pres;
        ds.power(i) = logistic_power(spec, v);
    }
    // Feed-in management: zero a contiguous block of the day's power while
    // the forecast features keep their undisturbed values.
    for (int day = 0; day < n_days; ++day) {
        if (rng.uniform() >= spec.drop_prob) continue;
        const int len = static_cast<int>(rng.uniform_int(8, 32));
        const int lo = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(samples_per_day - len)));
        for (int k = 0; k < len; ++k)
            ds.power(static_cast<Eigen::Index>(day) * samples_per_day + lo + k) = 0.0;
    }
    return ds;
}

inline TimeSeriesDataset gen_pv(const PvParkSpec& spec, int n_days,
                                std::int64_t start_epoch = kSynthStartEpoch,
                                int samples_per_day = 96) {
    validate(spec);
    if (n_days < 1) throw std::invalid_argument("n_days must be >= 1");
    const std::int64_t step = 86400 / samples_per_day;
    const Eigen::Index n = static_cast<Eigen::Index>(n_days) * samples_per_day;

    TimeSeriesDataset ds;
    ds.park_id = spec.park_id;
    ds.nominal_power = 1.0;
    ds.samples_per_day = samples_per_day;
    ds.feature_names = {"forecast_radiation", "temperature", "humidity"};
    ds.features.resize(n, 3);
    ds.power.resize(n);
    ds.timestamps.resize(static_cast<std::size_t>(n));

    Rng rng(spec.seed);
    double cloud = 0.85;  // slow attenuation process, hidden from features
    double temp_anom = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double hour = static_cast<double>(i % samples_per_day) * (24.0 / samples_per_day);
        const double bell = clear_sky_radiation(spec, hour);
        cloud = 0.85 + 0.95 * (cloud - 0.85) + rng.normal(0.0, 0.05);
        cloud = std::min(1.0, std::max(0.3, cloud));
        const double rad_true = bell * cloud;

        // Day-ahead radiation forecast: clear-sky bell plus clipped noise;
        // stays positive whenever the bell is (so night is exactly zero).
        double rad_fc = 0.0;
        const double noise = rng.normal(0.0, spec.cloud_noise_sd);
        if (bell > 0.0) rad_fc = std::max(bell + noise, 1e-4);

        temp_anom = 0.98 * temp_anom + rng.normal(0.0, 0.2);
        const double temp = 12.0 + 8.0 * bell / spec.amplitude + temp_anom;
        const double hum = std::min(100.0, std::max(0.0, 85.0 - 40.0 * bell / spec.amplitude + rng.normal(0.0, 3.0)));

        ds.timestamps[static_cast<std::size_t>(i)] = start_epoch + i * step;
        ds.features(i, 0) = rad_fc;
        ds.features(i, 1) = temp;
        ds.features(i, 2) = hum;
        ds.power(i) = std::min(1.0, std::max(0.0, spec.gain * rad_true));
    }
    return ds;
}

enum class HubKind { wind, pv };

inline HubKind hub_kind_from_name(const std::string& name) {
    if (name == "wind") return HubKind::wind;
    if (name == "pv") return HubKind::pv;
    throw std::invalid_argument("unknown hub kind: " + name);
}

inline std::string hub_kind_name(HubKind k) { return k == HubKind::wind ? "wind" : "pv"; }

inline std::string park_name(HubKind kind, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%03zu", hub_kind_name(kind).c_str(), index);
    return buf;
}

//! Park specs drawn deterministically from the master seed. The parameter
//! ranges are deliberately dense so that any target has several plausible
//! source parks — heterogeneous but related, like a real fleet.
inline WindParkSpec sample_wind_spec(std::uint64_t master_seed, std::size_t index) {
    WindParkSpec s;
    s.park_id = park_name(HubKind::wind, index);
    s.seed = derive_seed(master_seed, index);
    Rng rng(derive_seed(s.seed, "wind-spec"));
    s.v0 = rng.uniform(5.0, 8.0);
    s.steepness = rng.uniform(0.8, 1.2);
    s.mean_wind = s.v0 + rng.uniform(-0.5, 1.0);
    s.ar_rho = rng.uniform(0.95, 0.98);
    s.ar_sd = rng.uniform(0.5, 0.7);
    s.feature_noise_sd = rng.uniform(0.7, 0.9);
    s.drop_prob = 0.01;
    return s;
}

inline PvParkSpec sample_pv_spec(std::uint64_t master_seed, std::size_t index) {
    PvParkSpec s;
    s.park_id = park_name(HubKind::pv, index);
    s.seed = derive_seed(master_seed, index);
    Rng rng(derive_seed(s.seed, "pv-spec"));
    s.amplitude = rng.uniform(0.75, 1.0);
    s.peak_hour = rng.uniform(12.0, 13.5);
    s.width = rng.uniform(2.6, 3.8);
    s.cloud_noise_sd = rng.uniform(0.05, 0.11);
    s.gain = rng.uniform(0.9, 1.3);
    return s;
}

struct HubParams {
    HubKind kind = HubKind::wind;
    std::vector<WindParkSpec> wind;  // one of the two is populated
    std::vector<PvParkSpec> pv;
    std::size_t size() const { return kind == HubKind::wind ? wind.size() : pv.size(); }
};

inline HubParams sample_hub(HubKind kind, std::size_t n_parks, std::uint64_t master_seed) {
    if (n_parks < 2) throw std::invalid_argument("a hub needs at least 2 parks");
    HubParams h;
    h.kind = kind;
    for (std::size_t i = 0; i < n_parks; ++i) {
        if (kind == HubKind::wind)
            h.wind.push_back(sample_wind_spec(master_seed, i));
        else
            h.pv.push_back(sample_pv_spec(master_seed, i));
    }
    return h;
}

inline std::vector<TimeSeriesDataset> gen_hub(HubKind kind, std::size_t n_parks, int n_days,
                                              std::uint64_t master_seed) {
    const HubParams h = sample_hub(kind, n_parks, master_seed);
    std::vector<TimeSeriesDataset> out;
    out.reserve(n_parks);
    for (std::size_t i = 0; i < n_parks; ++i)
        out.push_back(kind == HubKind::wind ? gen_wind(h.wind[i], n_days) : gen_pv(h.pv[i], n_days));
    return out;
}

}  // namespace transferhub
