#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "transferhub/adaptation.hpp"
#include "transferhub/belm.hpp"
#include "transferhub/blr.hpp"
#include "transferhub/common.hpp"
#include "transferhub/csv.hpp"
#include "transferhub/dataset.hpp"
#include "transferhub/ensembles.hpp"
#include "transferhub/eval.hpp"
#include "transferhub/gbrt.hpp"
#include "transferhub/selection.hpp"
#include "transferhub/synth.hpp"

namespace transferhub {

//! Configuration / usage errors (CLI exit code 2); genuine runtime failures
//! stay plain std::runtime_error (exit code 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& method_registry() {
    static const std::vector<std::string> names{"di",  "dili", "online-belm", "wd",  "wds",
                                                "bt",  "bma",  "csge",        "gbrt"};
    return names;
}

inline bool method_known(const std::string& name) {
    const auto& reg = method_registry();
    return std::find(reg.begin(), reg.end(), name) != reg.end();
}

struct ExperimentConfig {
    HubKind hub_kind = HubKind::wind;
    int n_parks = 20;
    int n_days = 730;
    int folds = 5;
    std::vector<int> days_grid = train_days_grid();
    std::vector<Season> seasons{Season::spring, Season::summer, Season::autumn, Season::winter};
    std::vector<std::string> methods = method_registry();
    std::uint64_t seed = 0;
    std::string out_dir;

    // Tunables with documented defaults; all overridable from the config file.
    double test_fraction = 0.25;
    SelectionStrategy selection = SelectionStrategy::evidence;
    std::vector<int> gbrt_depths{4};
    std::vector<double> gbrt_learning_rates{0.1};
    int gbrt_estimators = 300;
    int csge_members = 4;
    int mlp_k = 4;
    double mlp_lr = 0.05;
    int mlp_epochs = 30;
    int belm_hidden = 64;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_list(const std::string& key, const std::string& value) {
    std::vector<std::string> items;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("config key " + key + ": empty list item");
        items.push_back(item);
    }
    if (items.empty()) throw ConfigError("config key " + key + ": empty list");
    return items;
}

inline long cfg_long(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected integer, got '" + value + "'");
    }
}

inline std::uint64_t cfg_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size() || !value.empty() && value[0] == '-') throw std::invalid_argument(value);
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected unsigned integer, got '" + value + "'");
    }
}

inline double cfg_double(const std::string& key, const std::string& value) {
    try {
        return parse_double(value);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got '" + value + "'");
    }
}

}  // namespace detail

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.n_parks < 2) throw ConfigError("n_parks must be >= 2");
    if (cfg.folds < 2) throw ConfigError("folds must be >= 2");
    if (cfg.folds > cfg.n_parks) throw ConfigError("folds exceed n_parks");
    if (cfg.n_days < 4) throw ConfigError("n_days must be >= 4");
    if (cfg.days_grid.empty()) throw ConfigError("days_grid is empty");
    for (const int d : cfg.days_grid)
        if (d < 1) throw ConfigError("days_grid entries must be >= 1");
    if (cfg.seasons.empty()) throw ConfigError("seasons is empty");
    if (cfg.methods.empty()) throw ConfigError("methods is empty");
    for (const auto& m : cfg.methods)
        if (!method_known(m)) throw ConfigError("unknown method: " + m);
    if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0, 1)");
    if (cfg.gbrt_depths.empty() || cfg.gbrt_learning_rates.empty())
        throw ConfigError("gbrt grids must be non-empty");
    for (const int d : cfg.gbrt_depths)
        if (d < 1) throw ConfigError("gbrt_depths entries must be >= 1");
    for (const double lr : cfg.gbrt_learning_rates)
        if (!(lr > 0.0)) throw ConfigError("gbrt_learning_rates entries must be > 0");
    if (cfg.gbrt_estimators < 1) throw ConfigError("gbrt_estimators must be >= 1");
    if (cfg.csge_members < 1) throw ConfigError("csge_members must be >= 1");
    if (cfg.mlp_k < 1) throw ConfigError("mlp_k must be >= 1");
    if (!(cfg.mlp_lr > 0.0)) throw ConfigError("mlp_lr must be > 0");
    if (cfg.mlp_epochs < 1) throw ConfigError("mlp_epochs must be >= 1");
    if (cfg.belm_hidden < 10 || cfg.belm_hidden > 1000)
        throw ConfigError("belm_hidden must be in [10, 1000]");
}

//! Flat `key = value` configuration with `#` comments. Unknown keys, unknown
//! methods, duplicate keys, and malformed values all fail fast.
inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(ln) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(ln) + ": missing key");
        if (!seen.insert(key).second) throw ConfigError("duplicate config key: " + key);

        if (key == "hub_kind") {
            try {
                cfg.hub_kind = hub_kind_from_name(value);
            } catch (const std::exception& e) {
                throw ConfigError(std::string("config key hub_kind: ") + e.what());
            }
        } else if (key == "n_parks") {
            cfg.n_parks = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "n_days") {
            cfg.n_days = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "folds") {
            cfg.folds = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "days_grid") {
            cfg.days_grid.clear();
            for (const auto& item : detail::split_list(key, value))
                cfg.days_grid.push_back(static_cast<int>(detail::cfg_long(key, item)));
        } else if (key == "seasons") {
            cfg.seasons.clear();
            for (const auto& item : detail::split_list(key, value)) {
                try {
                    cfg.seasons.push_back(season_from_name(item));
                } catch (const std::exception& e) {
                    throw ConfigError(std::string("config key seasons: ") + e.what());
                }
            }
        } else if (key == "methods") {
            cfg.methods.clear();
            for (const auto& item : detail::split_list(key, value)) {
                if (!method_known(item)) throw ConfigError("unknown method: " + item);
                if (std::find(cfg.methods.begin(), cfg.methods.end(), item) != cfg.methods.end())
                    throw ConfigError("duplicate method: " + item);
                cfg.methods.push_back(item);
            }
        } else if (key == "seed") {
            cfg.seed = detail::cfg_u64(key, value);
        } else if (key == "out_dir") {
            cfg.out_dir = value;
        } else if (key == "test_fraction") {
            cfg.test_fraction = detail::cfg_double(key, value);
        } else if (key == "selection") {
            try {
                cfg.selection = selection_from_name(value);
            } catch (const std::exception& e) {
                throw ConfigError(std::string("config key selection: ") + e.what());
            }
        } else if (key == "gbrt_depths") {
            cfg.gbrt_depths.clear();
            for (const auto& item : detail::split_list(key, value))
                cfg.gbrt_depths.push_back(static_cast<int>(detail::cfg_long(key, item)));
        } else if (key == "gbrt_learning_rates") {
            cfg.gbrt_learning_rates.clear();
            for (const auto& item : detail::split_list(key, value))
                cfg.gbrt_learning_rates.push_back(detail::cfg_double(key, item));
        } else if (key == "gbrt_estimators") {
            cfg.gbrt_estimators = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "csge_members") {
            cfg.csge_members = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "mlp_k") {
            cfg.mlp_k = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "mlp_lr") {
            cfg.mlp_lr = detail::cfg_double(key, value);
        } else if (key == "mlp_epochs") {
            cfg.mlp_epochs = static_cast<int>(detail::cfg_long(key, value));
        } else if (key == "belm_hidden") {
            cfg.belm_hidden = static_cast<int>(detail::cfg_long(key, value));
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("missing expected file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---- parallel work queue -----------------------------------------------

namespace detail {

inline int thread_budget() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("TRANSFERHUB_THREADS")) {
        const std::string s(env);
        int v = 0;
        try {
            std::size_t pos = 0;
            v = std::stoi(s, &pos);
            if (pos != s.size() || v < 1) throw std::invalid_argument(s);
        } catch (const std::exception&) {
            throw ConfigError("TRANSFERHUB_THREADS must be a positive integer, got '" + s + "'");
        }
        hw = std::min(hw, v);
    }
    return hw;
}

//! Index work queue with slot-indexed results at the call site, so thread
//! count never changes any output. The first exception wins and is rethrown
//! on the calling thread.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t T = std::min<std::size_t>(static_cast<std::size_t>(thread_budget()), n);
    if (T <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr err;
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (err) return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(T);
    for (std::size_t t = 0; t < T; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace detail

// ---- hub training --------------------------------------------------------

struct TrainedHub {
    std::vector<SourceModel> mlp;   // one per park, dataset order
    std::vector<SourceModel> belm;  // one per park, dataset order

    std::vector<SourceModel> flat() const {
        std::vector<SourceModel> all;
        for (std::size_t i = 0; i < mlp.size(); ++i) {
            all.push_back(mlp[i]);
            if (i < belm.size()) all.push_back(belm[i]);
        }
        return all;
    }

    static TrainedHub from_flat(const std::vector<SourceModel>& models) {
        TrainedHub hub;
        for (const auto& s : models)
            (s.is_belm() ? hub.belm : hub.mlp).push_back(s);
        return hub;
    }
};

namespace detail {

inline std::pair<TimeSeriesDataset, TimeSeriesDataset> trailing_day_split(const TimeSeriesDataset& ds,
                                                                          double val_fraction) {
    const Eigen::Index n_days = ds.day_count();
    const auto n_val = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(val_fraction * static_cast<double>(n_days))));
    if (n_val >= n_days) throw std::invalid_argument("validation split leaves no training days");
    std::vector<Eigen::Index> tr, val;
    for (Eigen::Index d = 0; d < n_days; ++d)
        (d < n_days - n_val ? tr : val).push_back(d);
    return {take_days(ds, tr), take_days(ds, val)};
}

}  // namespace detail

//! Network source: standardize, train by plain SGD; validation nRMSE on the
//! trailing quarter of days, then a retrain on the full history with the same
//! seeds. A diverging learning rate is retried at lr/4 and lr/16.
inline SourceModel train_mlp_source(const TimeSeriesDataset& ds, const ExperimentConfig& cfg,
                                    std::uint64_t seed) {
    const auto [tr, val] = detail::trailing_day_split(ds, 0.25);
    const Eigen::Index batch = 256;
    LossSpec task;  // plain squared loss
    for (const double lr : {cfg.mlp_lr, cfg.mlp_lr / 4.0, cfg.mlp_lr / 16.0}) {
        try {
            const Mlp net0 = mlp_init(static_cast<int>(ds.dims()), cfg.mlp_k, derive_seed(seed, "init"));
            const Standardizer std_tr = Standardizer::fit(tr.features);
            const Mlp net_tr = sgd_train(net0, std_tr.apply(tr.features), tr.power, task, lr,
                                         cfg.mlp_epochs, batch, derive_seed(seed, "sgd"));
            const double v = nrmse(val.power, mlp_forward(net_tr, std_tr.apply(val.features)).predictions);
            if (!std::isfinite(v)) throw std::runtime_error("nonfinite validation error");

            const Standardizer std_all = Standardizer::fit(ds.features);
            const Mlp net_all = sgd_train(net0, std_all.apply(ds.features), ds.power, task, lr,
                                          cfg.mlp_epochs, batch, derive_seed(seed, "sgd"));
            SourceModel s;
            s.park_id = ds.park_id;
            s.impl = MlpSource{std_all, net_all};
            s.val_nrmse = v;
            return s;
        } catch (const std::runtime_error&) {
            continue;  // halve twice before giving up
        }
    }
    throw std::runtime_error("source training diverged for park " + ds.park_id);
}

inline SourceModel train_belm_source(const TimeSeriesDataset& ds, const ExperimentConfig& cfg,
                                     std::uint64_t seed) {
    const auto [tr, val] = detail::trailing_day_split(ds, 0.25);
    BelmSpec spec;
    spec.hidden = cfg.belm_hidden;
    const Belm b_tr = belm_fit(tr.features, tr.power, spec, derive_seed(seed, "belm"));
    const double v = nrmse(val.power, b_tr.predict(val.features).mu);
    const Belm b_all = belm_fit(ds.features, ds.power, spec, derive_seed(seed, "belm"));
    SourceModel s;
    s.park_id = ds.park_id;
    s.impl = BelmSource{b_all};
    s.val_nrmse = v;
    return s;
}

inline TrainedHub train_hub(const std::vector<TimeSeriesDataset>& data, const ExperimentConfig& cfg,
                            bool with_belm = true) {
    TrainedHub hub;
    hub.mlp.resize(data.size());
    if (with_belm) hub.belm.resize(data.size());
    detail::parallel_for(data.size(), [&](std::size_t i) {
        const std::uint64_t s = derive_seed(cfg.seed, "train|" + data[i].park_id);
        hub.mlp[i] = train_mlp_source(data[i], cfg, derive_seed(s, "mlp"));
        if (with_belm) hub.belm[i] = train_belm_source(data[i], cfg, derive_seed(s, "belm"));
    });
    return hub;
}

// ---- per-cell protocol -----------------------------------------------------

inline TimeSeriesDataset filter_season(const TimeSeriesDataset& ds, Season season) {
    std::vector<Eigen::Index> keep;
    const Eigen::Index n_days = ds.day_count();
    for (Eigen::Index d = 0; d < n_days; ++d)
        if (season_of_month(ds.month_of_day(d)) == season) keep.push_back(d);
    if (keep.empty())
        throw std::invalid_argument("no " + season_name(season) + " days in dataset " + ds.park_id);
    return take_days(ds, keep);
}

//! Season-filtered target data split once per (park, season): the same test
//! days serve every training window and method.
struct TargetSplit {
    TimeSeriesDataset train_pool;
    TimeSeriesDataset test;
};

inline TargetSplit make_target_split(const TimeSeriesDataset& ds, Season season, double test_fraction,
                                     std::uint64_t master_seed) {
    const TimeSeriesDataset in_season = filter_season(ds, season);
    const std::uint64_t seed = derive_seed(master_seed, "split|" + ds.park_id + "|" + season_name(season));
    auto [pool, test] = split_test_days(in_season, test_fraction, seed);
    return {std::move(pool), std::move(test)};
}

namespace detail {

struct CellScore {
    double nrmse = std::numeric_limits<double>::quiet_NaN();
    double crps = std::numeric_limits<double>::quiet_NaN();
};

inline CellScore point_score(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    CellScore r;
    r.nrmse = nrmse(y, mu);
    r.crps = (y - mu).cwiseAbs().mean();  // CRPS of a point mass is the absolute error
    return r;
}

inline CellScore gaussian_score(const Eigen::VectorXd& y, const PredictiveGaussian& p) {
    CellScore r;
    r.nrmse = nrmse(y, p.mu);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        acc += crps_gaussian(p.mu(i), std::sqrt(p.sigma2(i)), y(i));
    r.crps = acc / static_cast<double>(y.size());
    return r;
}

//! All method cells of one (target park, season, training window): shares the
//! test split, the training window, and the evidence scores across methods.
inline std::vector<CellScore> run_group(const ExperimentConfig& cfg,
                                        const std::vector<TimeSeriesDataset>& data,
                                        const TrainedHub& hub,
                                        const std::vector<std::size_t>& source_parks,
                                        std::size_t park, Season season, int days) {
    const TimeSeriesDataset& ds = data[park];
    const TargetSplit split = make_target_split(ds, season, cfg.test_fraction, cfg.seed);
    const TimeSeriesDataset train = limit_training(split.train_pool, season, days);
    const Eigen::MatrixXd& X_t = train.features;
    const Eigen::VectorXd& y_t = train.power;
    const Eigen::MatrixXd& X_te = split.test.features;
    const Eigen::VectorXd& y_te = split.test.power;
    const std::vector<int> h_t = train.horizons();
    const std::vector<int> h_te = split.test.horizons();
    const int spd = train.samples_per_day;
    const std::string cell_tag = ds.park_id + "|" + season_name(season) + "|" + std::to_string(days);
    const std::uint64_t sel_seed = derive_seed(cfg.seed, "select|" + cell_tag);

    std::vector<SourceModel> hub_mlp, hub_belm;
    for (const std::size_t p : source_parks) {
        hub_mlp.push_back(hub.mlp[p]);
        if (p < hub.belm.size()) hub_belm.push_back(hub.belm[p]);
    }
    if (hub_mlp.empty()) throw std::runtime_error("park " + ds.park_id + " has no source parks");

    // Lazy per-group caches shared by the methods.
    std::vector<EvidenceScore> mlp_ev;
    bool have_mlp_ev = false;
    auto ensure_mlp_ev = [&]() {
        if (have_mlp_ev) return;
        mlp_ev.resize(hub_mlp.size());
        for (std::size_t j = 0; j < hub_mlp.size(); ++j) mlp_ev[j] = score_evidence(hub_mlp[j], X_t, y_t);
        have_mlp_ev = true;
    };
    std::vector<double> mlp_sel;
    bool have_mlp_sel = false;
    auto ensure_mlp_sel = [&]() {
        if (have_mlp_sel) return;
        mlp_sel.resize(hub_mlp.size());
        if (cfg.selection == SelectionStrategy::evidence) {
            ensure_mlp_ev();
            for (std::size_t j = 0; j < hub_mlp.size(); ++j) mlp_sel[j] = mlp_ev[j].log_ev;
        } else {
            for (std::size_t j = 0; j < hub_mlp.size(); ++j)
                mlp_sel[j] = score_nrmse(hub_mlp[j], X_t, y_t, spd, sel_seed);
        }
        have_mlp_sel = true;
    };
    std::vector<double> belm_sel;
    bool have_belm_sel = false;
    auto ensure_belm_sel = [&]() {
        if (have_belm_sel) return;
        belm_sel.resize(hub_belm.size());
        for (std::size_t j = 0; j < hub_belm.size(); ++j)
            belm_sel[j] = cfg.selection == SelectionStrategy::evidence
                              ? score_evidence(hub_belm[j], X_t, y_t).log_ev
                              : score_nrmse(hub_belm[j], X_t, y_t, spd, sel_seed);
        have_belm_sel = true;
    };
    // DILI from the cached evidence head: the selection fit IS the adapted head.
    auto make_dili = [&](std::size_t j) {
        Forecaster f;
        f.mode = AdaptMode::dili;
        f.target_samples_used = X_t.rows();
        BlrPredictor core;
        core.extractor = hub_mlp[j].extractor();
        core.heads.push_back(mlp_ev[j].head);
        f.core = std::move(core);
        return f;
    };

    std::vector<CellScore> out(cfg.methods.size());
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const std::string& method = cfg.methods[mi];
        const std::uint64_t task_seed = derive_seed(cfg.seed, cell_tag + "|" + method);

        if (method == "di") {
            ensure_mlp_sel();
            const Forecaster f = adapt_direct(hub_mlp[select(mlp_sel, cfg.selection)]);
            out[mi] = point_score(y_te, forecast_point(f, X_te, h_te));
        } else if (method == "dili") {
            ensure_mlp_ev();
            ensure_mlp_sel();
            const Forecaster f = make_dili(select(mlp_sel, cfg.selection));
            out[mi] = gaussian_score(y_te, *forecast_prob(f, X_te, h_te));
        } else if (method == "online-belm") {
            if (hub_belm.empty()) throw std::runtime_error("hub has no BELM sources");
            ensure_belm_sel();
            const Forecaster f = adapt_belm_online(hub_belm[select(belm_sel, cfg.selection)], X_t, y_t);
            out[mi] = gaussian_score(y_te, *forecast_prob(f, X_te, h_te));
        } else if (method == "wd" || method == "wds" || method == "bt") {
            ensure_mlp_sel();
            const FinetuneKind kind = method == "wd"    ? FinetuneKind::wd
                                      : method == "wds" ? FinetuneKind::wds
                                                        : FinetuneKind::bt;
            FinetuneOptions opt;
            opt.seed = task_seed;
            const FinetuneResult r =
                finetune(hub_mlp[select(mlp_sel, cfg.selection)], hub_mlp, X_t, y_t, spd, kind, opt);
            out[mi] = point_score(y_te, forecast_point(r.forecaster, X_te, h_te));
        } else if (method == "gbrt") {
            double lr = cfg.gbrt_learning_rates.front();
            int depth = cfg.gbrt_depths.front();
            if (cfg.gbrt_learning_rates.size() > 1 || cfg.gbrt_depths.size() > 1) {
                const GbrtCvChoice c = gbrt_cv_select(X_t, y_t, cfg.gbrt_learning_rates,
                                                      cfg.gbrt_depths, cfg.gbrt_estimators);
                lr = c.learning_rate;
                depth = c.max_depth;
            }
            const Gbrt model = gbrt_fit(X_t, y_t, cfg.gbrt_estimators, lr, depth, task_seed);
            out[mi] = point_score(y_te, gbrt_predict(model, X_te));
        } else if (method == "bma") {
            ensure_mlp_ev();
            std::vector<Forecaster> members;
            for (std::size_t j = 0; j < hub_mlp.size(); ++j) members.push_back(make_dili(j));
            const BmaModel m = bma_fit(std::move(members), X_t, y_t);
            const BmaForward fw = bma_predict(m, X_te, h_te);
            CellScore r;
            const Eigen::VectorXd mean = fw.mu * fw.weights;
            r.nrmse = nrmse(y_te, mean);
            double acc = 0.0;
            for (Eigen::Index i = 0; i < y_te.size(); ++i) acc += crps_mixture(fw.row(i), y_te(i));
            r.crps = acc / static_cast<double>(y_te.size());
            out[mi] = r;
        } else if (method == "csge") {
            ensure_mlp_ev();
            std::vector<std::pair<double, std::size_t>> ranked;
            for (std::size_t j = 0; j < hub_mlp.size(); ++j) ranked.emplace_back(-mlp_ev[j].log_ev, j);
            std::sort(ranked.begin(), ranked.end());
            const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(cfg.csge_members),
                                                        ranked.size());
            std::vector<Forecaster> members;
            for (std::size_t j = 0; j < m; ++j) members.push_back(make_dili(ranked[j].second));
            CsgeModel best;
            double best_nr = std::numeric_limits<double>::infinity();
            for (const double eta : {1.0, 2.0}) {
                CsgeModel cand = csge_fit(members, X_t, y_t, h_t, eta, eta, eta);
                const double nr = nrmse(y_t, csge_predict(cand, X_t, h_t));
                if (nr < best_nr) {
                    best_nr = nr;
                    best = std::move(cand);
                }
            }
            out[mi] = point_score(y_te, csge_predict(best, X_te, h_te));
        } else {
            throw ConfigError("unknown method: " + method);
        }
    }
    return out;
}

}  // namespace detail

// ---- results, summary, report ----------------------------------------------

struct ExperimentOutput {
    CsvTable errors;
    CsvTable summary;
    std::string report_text;
};

inline const std::vector<std::string>& errors_header() {
    static const std::vector<std::string> h{"dataset", "season", "days", "method", "park",
                                            "nrmse",   "crps"};
    return h;
}

//! Aggregate an errors table into summary rows: mean rank per (dataset, days,
//! method) over the (park, season) cells, and a Wilcoxon verdict against the
//! baseline (gbrt when present, else the first method). Fewer than five
//! informative pairs cannot reach significance and report "o".
inline CsvTable summarize_errors(const CsvTable& errors) {
    if (errors.header != errors_header()) throw std::runtime_error("unexpected errors.csv header");
    struct Row {
        std::string dataset, season, days, method, park;
        double nrmse = 0.0;
    };
    std::vector<Row> rows;
    for (const auto& r : errors.rows) {
        if (r.size() != 7) throw std::runtime_error("malformed errors.csv row");
        rows.push_back({r[0], r[1], r[2], r[3], r[4], parse_double(r[5])});
    }
    if (rows.empty()) throw std::runtime_error("errors table is empty");

    auto order_of = [](std::vector<std::string>& seen, const std::string& v) {
        if (std::find(seen.begin(), seen.end(), v) == seen.end()) seen.push_back(v);
    };
    std::vector<std::string> methods;
    std::vector<std::pair<std::string, std::string>> tables;  // (dataset, days), appearance order
    for (const auto& r : rows) {
        order_of(methods, r.method);
        const std::pair<std::string, std::string> key{r.dataset, r.days};
        if (std::find(tables.begin(), tables.end(), key) == tables.end()) tables.push_back(key);
    }
    std::size_t baseline = 0;
    const auto gbrt_it = std::find(methods.begin(), methods.end(), "gbrt");
    if (gbrt_it != methods.end()) baseline = static_cast<std::size_t>(gbrt_it - methods.begin());

    CsvTable out;
    out.header = {"dataset", "days", "method", "mean_rank", "verdict"};
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [dataset, days] : tables) {
        std::vector<std::string> cells;  // park|season, appearance order
        for (const auto& r : rows)
            if (r.dataset == dataset && r.days == days) order_of(cells, r.park + "|" + r.season);
        std::vector<std::vector<double>> table(cells.size(), std::vector<double>(methods.size(), nan));
        for (const auto& r : rows) {
            if (r.dataset != dataset || r.days != days) continue;
            const auto ci = static_cast<std::size_t>(
                std::find(cells.begin(), cells.end(), r.park + "|" + r.season) - cells.begin());
            const auto mi = static_cast<std::size_t>(
                std::find(methods.begin(), methods.end(), r.method) - methods.begin());
            if (!std::isnan(table[ci][mi])) throw std::runtime_error("duplicate errors.csv cell");
            table[ci][mi] = r.nrmse;
        }
        for (const auto& row : table)
            for (const double v : row)
                if (std::isnan(v)) throw std::runtime_error("incomplete errors table for days=" + days);

        const std::vector<double> mean_rank = rank_table(table);
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            std::string marker = "o";
            if (mi != baseline) {
                std::vector<double> a(cells.size()), b(cells.size());
                for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                    a[ci] = table[ci][mi];
                    b[ci] = table[ci][baseline];
                }
                try {
                    marker = verdict_marker(wilcoxon_signed_rank(a, b).verdict);
                } catch (const std::invalid_argument&) {
                    marker = "o";  // too few informative pairs
                }
            }
            out.rows.push_back({dataset, days, methods[mi], fmt_full(mean_rank[mi]), marker});
        }
    }
    return out;
}

inline std::string report_marker(const std::string& verdict) {
    if (verdict == "v") return "\xE2\x88\xA8";  // better than baseline
    if (verdict == "^") return "\xE2\x88\xA7";  // worse than baseline
    return "\xE2\x97\x87";                      // no significant difference
}

//! Aligned text rendering of a summary table.
inline std::string render_report(const CsvTable& summary) {
    if (summary.header != std::vector<std::string>{"dataset", "days", "method", "mean_rank", "verdict"})
        throw std::runtime_error("unexpected summary.csv header");
    std::vector<std::vector<std::string>> lines;
    lines.push_back({"dataset", "days", "method", "mean_rank", "vs_baseline"});
    for (const auto& r : summary.rows) {
        if (r.size() != 5) throw std::runtime_error("malformed summary.csv row");
        char rank[32];
        std::snprintf(rank, sizeof rank, "%.2f", parse_double(r[3]));
        lines.push_back({r[0], r[1], r[2], rank, report_marker(r[4])});
    }
    std::vector<std::size_t> width(5, 0);
    for (const auto& l : lines)
        for (std::size_t c = 0; c + 1 < l.size(); ++c)  // last column needs no padding
            width[c] = std::max(width[c], l[c].size());
    std::ostringstream os;
    for (const auto& l : lines) {
        for (std::size_t c = 0; c < l.size(); ++c) {
            if (c) os << "  ";
            os << l[c];
            if (c + 1 < l.size()) os << std::string(width[c] - l[c].size(), ' ');
        }
        os << '\n';
    }
    return os.str();
}

// ---- the monolithic run ------------------------------------------------------

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);
    const std::vector<TimeSeriesDataset> data =
        gen_hub(cfg.hub_kind, static_cast<std::size_t>(cfg.n_parks), cfg.n_days, cfg.seed);
    const bool need_belm = std::find(cfg.methods.begin(), cfg.methods.end(), "online-belm") !=
                           cfg.methods.end();
    const TrainedHub hub = train_hub(data, cfg, need_belm);

    const std::vector<Fold> folds = make_folds(static_cast<std::size_t>(cfg.n_parks), cfg.folds);
    std::vector<std::vector<std::size_t>> sources_of(static_cast<std::size_t>(cfg.n_parks));
    for (const auto& f : folds)
        for (const std::size_t t : f.targets) sources_of[t] = f.sources;

    const std::size_t S = cfg.seasons.size();
    const std::size_t D = cfg.days_grid.size();
    const std::size_t P = static_cast<std::size_t>(cfg.n_parks);
    std::vector<std::vector<detail::CellScore>> results(P * S * D);
    detail::parallel_for(results.size(), [&](std::size_t g) {
        const std::size_t p = g / (S * D);
        const std::size_t si = g / D % S;
        const std::size_t di = g % D;
        results[g] = detail::run_group(cfg, data, hub, sources_of[p], p, cfg.seasons[si],
                                       cfg.days_grid[di]);
    });

    ExperimentOutput out;
    out.errors.header = errors_header();
    const std::string dataset = hub_kind_name(cfg.hub_kind);
    for (std::size_t si = 0; si < S; ++si)
        for (std::size_t di = 0; di < D; ++di)
            for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
                for (std::size_t p = 0; p < P; ++p) {
                    const detail::CellScore& c = results[(p * S + si) * D + di][mi];
                    out.errors.rows.push_back({dataset, season_name(cfg.seasons[si]),
                                               std::to_string(cfg.days_grid[di]), cfg.methods[mi],
                                               data[p].park_id, fmt_full(c.nrmse), fmt_full(c.crps)});
                }
    out.summary = summarize_errors(out.errors);
    out.report_text = render_report(out.summary);
    return out;
}

//! Write errors.csv, summary.csv, and report.txt. Partial-run resume is not
//! supported: existing result files in out_dir are refused.
inline void write_experiment_output(const std::string& out_dir, const ExperimentOutput& out) {
    if (out_dir.empty()) throw ConfigError("out_dir is required");
    std::filesystem::create_directories(out_dir);
    for (const char* name : {"errors.csv", "summary.csv", "report.txt"}) {
        const std::filesystem::path p = std::filesystem::path(out_dir) / name;
        if (std::filesystem::exists(p))
            throw ConfigError("out_dir already contains " + std::string(name) +
                              "; partial-run resume is not supported, use a clean directory");
    }
    write_csv_file(out_dir + "/errors.csv", out.errors);
    write_csv_file(out_dir + "/summary.csv", out.summary);
    std::ofstream rep(out_dir + "/report.txt", std::ios::binary);
    if (!rep) throw std::runtime_error("cannot write file: " + out_dir + "/report.txt");
    rep << out.report_text;
}

// ---- stage-wise plumbing ------------------------------------------------------

inline void save_datasets(const std::string& dir, const std::vector<TimeSeriesDataset>& parks) {
    std::filesystem::create_directories(dir);
    CsvTable manifest;
    manifest.header = {"park_id", "file", "nominal_power"};
    for (const auto& ds : parks) {
        const std::string file = ds.park_id + ".csv";
        write_csv(ds, dir + "/" + file);
        manifest.rows.push_back({ds.park_id, file, fmt_full(ds.nominal_power)});
    }
    write_csv_file(dir + "/parks.csv", manifest);
}

inline std::vector<TimeSeriesDataset> load_datasets(const std::string& dir) {
    const CsvTable manifest = read_csv_file(dir + "/parks.csv");
    std::vector<TimeSeriesDataset> parks;
    for (const auto& row : manifest.rows) {
        if (row.size() != 3) throw std::runtime_error("malformed parks.csv row");
        TimeSeriesDataset ds = load_csv(dir + "/" + row[1]);
        ds.park_id = row[0];
        ds.nominal_power = parse_double(row[2]);
        parks.push_back(std::move(ds));
    }
    return parks;
}

struct PredictionTable {
    std::vector<std::int64_t> timestamps;
    std::vector<int> horizons;
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma2;
    bool probabilistic = false;
};

inline void write_predictions(const std::string& path, const TimeSeriesDataset& ds,
                              const Eigen::VectorXd& mu, const Eigen::VectorXd* sigma2) {
    if (mu.size() != ds.rows()) throw std::invalid_argument("prediction length mismatch");
    CsvTable t;
    t.header = {"timestamp", "horizon", "mu"};
    if (sigma2) t.header.push_back("sigma2");
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        std::vector<std::string> row{format_timestamp(ds.timestamps[static_cast<std::size_t>(i)]),
                                     std::to_string(ds.horizon_of_row(i)), fmt_full(mu(i))};
        if (sigma2) row.push_back(fmt_full((*sigma2)(i)));
        t.rows.push_back(std::move(row));
    }
    write_csv_file(path, t);
}

inline PredictionTable read_predictions(const std::string& path) {
    const CsvTable t = read_csv_file(path);
    const std::vector<std::string> point{"timestamp", "horizon", "mu"};
    const std::vector<std::string> prob{"timestamp", "horizon", "mu", "sigma2"};
    PredictionTable p;
    if (t.header == prob)
        p.probabilistic = true;
    else if (t.header != point)
        throw std::runtime_error("unexpected predictions header in " + path);
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    p.mu.resize(n);
    if (p.probabilistic) p.sigma2.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = t.rows[static_cast<std::size_t>(i)];
        if (row.size() != t.header.size())
            throw std::runtime_error("malformed predictions row " + std::to_string(i + 2));
        p.timestamps.push_back(parse_timestamp(row[0]));
        p.horizons.push_back(static_cast<int>(detail::cfg_long("horizon", row[1])));
        p.mu(i) = parse_double(row[2]);
        if (p.probabilistic) p.sigma2(i) = parse_double(row[3]);
    }
    return p;
}

struct EvalScore {
    double nrmse = 0.0;
    double crps = 0.0;
};

//! Score a prediction file against the truth rows it was issued for.
inline EvalScore evaluate_predictions(const PredictionTable& pred, const TimeSeriesDataset& truth) {
    if (pred.mu.size() != truth.rows())
        throw std::runtime_error("predictions cover " + std::to_string(pred.mu.size()) +
                                 " rows, dataset has " + std::to_string(truth.rows()));
    for (std::size_t i = 0; i < pred.timestamps.size(); ++i)
        if (pred.timestamps[i] != truth.timestamps[i])
            throw std::runtime_error("prediction timestamp mismatch at row " + std::to_string(i + 2));
    EvalScore s;
    s.nrmse = nrmse(truth.power, pred.mu);
    if (pred.probabilistic) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < pred.mu.size(); ++i)
            acc += crps_gaussian(pred.mu(i), std::sqrt(pred.sigma2(i)), truth.power(i));
        s.crps = acc / static_cast<double>(pred.mu.size());
    } else {
        s.crps = (truth.power - pred.mu).cwiseAbs().mean();
    }
    return s;
}

}  // namespace transferhub
