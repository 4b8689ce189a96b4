// Command-line front end: the full experiment protocol as one `run`, plus the
// individual pipeline stages for stepwise use. Exit codes: 0 ok, 1 runtime
// error, 2 usage or configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "transferhub/experiment.hpp"
#include "transferhub/model_io.hpp"

namespace fs = std::filesystem;
using namespace transferhub;

namespace {

struct SynthArgs {
    std::string kind = "wind";
    int parks = 20;
    int days = 730;
    std::uint64_t seed = 0;
    std::string out;
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    int mlp_k = 4;
    double mlp_lr = 0.05;
    int mlp_epochs = 30;
    int belm_hidden = 64;
};

struct SelectArgs {
    std::string data;
    std::string hub;
    std::string park;
    std::string season = "summer";
    int days = 7;
    double test_fraction = 0.25;
    std::uint64_t seed = 0;
    std::string kind = "all";
    std::string out;
};

struct AdaptArgs {
    std::string data;
    std::string hub;
    std::string park;
    std::string strategy = "dili";
    std::string season = "summer";
    int days = 7;
    double test_fraction = 0.25;
    std::string selection = "evidence";
    bool per_horizon = false;
    std::uint64_t seed = 0;
    std::string out;
};

struct ForecastArgs {
    std::string model;
    std::string data;
    std::string out;
};

struct EvaluateArgs {
    std::string pred;
    std::string data;
    std::string append;
    std::string dataset, season, days, method, park;
};

struct ReportArgs {
    std::string errors;
    std::string out;
};

struct RunArgs {
    std::string config;
    std::string out;
};

std::string park_id_of(const std::string& override_id, const std::string& data_path) {
    if (!override_id.empty()) return override_id;
    return fs::path(data_path).stem().string();
}

//! The target's training window and test days, derived exactly as in the
//! monolithic run so the stepwise pipeline reproduces it.
struct StagedTarget {
    TimeSeriesDataset train;
    TimeSeriesDataset test;
    std::string cell_tag;
};

StagedTarget stage_target(const std::string& data_path, const std::string& park,
                          const std::string& season_str, int days, double test_fraction,
                          std::uint64_t seed) {
    TimeSeriesDataset ds = load_csv(data_path);
    ds.park_id = park;
    const Season season = season_from_name(season_str);
    TargetSplit split = make_target_split(ds, season, test_fraction, seed);
    StagedTarget t;
    t.train = limit_training(split.train_pool, season, days);
    t.test = std::move(split.test);
    t.cell_tag = park + "|" + season_str + "|" + std::to_string(days);
    return t;
}

std::vector<SourceModel> load_hub_filtered(const std::string& dir, const std::string& kind,
                                           const std::string& exclude_park) {
    std::vector<SourceModel> all = load_hub(dir);
    std::vector<SourceModel> keep;
    for (auto& s : all) {
        if (s.park_id == exclude_park) continue;
        if (kind != "all" && s.kind_name() != kind) continue;
        keep.push_back(std::move(s));
    }
    if (keep.empty()) throw std::runtime_error("no usable source models in " + dir);
    return keep;
}

int cmd_synth_gen(const SynthArgs& a) {
    const std::vector<TimeSeriesDataset> parks =
        gen_hub(hub_kind_from_name(a.kind), static_cast<std::size_t>(a.parks), a.days, a.seed);
    save_datasets(a.out, parks);
    std::cout << "wrote " << parks.size() << " parks to " << a.out << "\n";
    return 0;
}

int cmd_train_hub(const TrainArgs& a) {
    ExperimentConfig cfg;
    cfg.seed = a.seed;
    cfg.mlp_k = a.mlp_k;
    cfg.mlp_lr = a.mlp_lr;
    cfg.mlp_epochs = a.mlp_epochs;
    cfg.belm_hidden = a.belm_hidden;
    const std::vector<TimeSeriesDataset> data = load_datasets(a.data);
    const TrainedHub hub = train_hub(data, cfg);
    save_hub(a.out, hub.flat());
    std::cout << "trained " << hub.mlp.size() << " network and " << hub.belm.size()
              << " BELM sources into " << a.out << "\n";
    return 0;
}

int cmd_select(const SelectArgs& a) {
    const std::string park = park_id_of(a.park, a.data);
    const StagedTarget t = stage_target(a.data, park, a.season, a.days, a.test_fraction, a.seed);
    const std::vector<SourceModel> hub = load_hub_filtered(a.hub, a.kind, park);
    const std::uint64_t sel_seed = derive_seed(a.seed, "select|" + t.cell_tag);
    const std::vector<SelectionRow> rows =
        score_hub(hub, t.train.features, t.train.power, t.train.samples_per_day, sel_seed);

    CsvTable out;
    out.header = {"source_park", "kind", "log_evidence", "nrmse_70_30", "selected_by_evidence",
                  "selected_by_nrmse"};
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.rows.push_back({rows[i].source_park, hub[i].kind_name(), fmt_full(rows[i].evidence),
                            fmt_full(rows[i].nrmse_score), rows[i].selected_by_evidence ? "1" : "0",
                            rows[i].selected_by_nrmse ? "1" : "0"});
    if (a.out.empty()) {
        std::cout << "source_park,kind,log_evidence,nrmse_70_30,selected_by_evidence,selected_by_nrmse\n";
        for (const auto& r : out.rows) {
            for (std::size_t c = 0; c < r.size(); ++c) std::cout << (c ? "," : "") << r[c];
            std::cout << "\n";
        }
    } else {
        write_csv_file(a.out, out);
        std::cout << "wrote " << out.rows.size() << " selection rows to " << a.out << "\n";
    }
    return 0;
}

int cmd_adapt(const AdaptArgs& a) {
    static const std::map<std::string, std::string> method_of{
        {"di", "di"}, {"dili", "dili"}, {"online", "online-belm"},
        {"wd", "wd"}, {"wds", "wds"},   {"bt", "bt"}};
    const auto mit = method_of.find(a.strategy);
    if (mit == method_of.end())
        throw ConfigError("unknown adaptation strategy: " + a.strategy +
                          " (expected di|dili|online|wd|wds|bt)");
    if (a.per_horizon && a.strategy != "dili")
        throw ConfigError("--per-horizon applies to the dili strategy only");

    const std::string park = park_id_of(a.park, a.data);
    const StagedTarget t = stage_target(a.data, park, a.season, a.days, a.test_fraction, a.seed);
    const std::string kind = a.strategy == "online" ? "belm" : "mlp";
    const std::vector<SourceModel> hub = load_hub_filtered(a.hub, kind, park);
    const SelectionStrategy strategy = selection_from_name(a.selection);
    const Eigen::MatrixXd& X_t = t.train.features;
    const Eigen::VectorXd& y_t = t.train.power;
    const int spd = t.train.samples_per_day;
    const std::uint64_t sel_seed = derive_seed(a.seed, "select|" + t.cell_tag);
    const std::uint64_t task_seed = derive_seed(a.seed, t.cell_tag + "|" + mit->second);

    std::vector<double> scores(hub.size());
    for (std::size_t j = 0; j < hub.size(); ++j)
        scores[j] = strategy == SelectionStrategy::evidence
                        ? score_evidence(hub[j], X_t, y_t).log_ev
                        : score_nrmse(hub[j], X_t, y_t, spd, sel_seed);
    const std::size_t best = select(scores, strategy);
    const SourceModel& src = hub[best];

    Forecaster f;
    std::vector<FinetuneCandidate> candidates;
    if (a.strategy == "di") {
        f = adapt_direct(src);
    } else if (a.strategy == "dili") {
        f = adapt_direct_linear(src, X_t, y_t, a.per_horizon, t.train.horizons());
    } else if (a.strategy == "online") {
        f = adapt_belm_online(src, X_t, y_t);
    } else {
        const FinetuneKind kind_ft = a.strategy == "wd"    ? FinetuneKind::wd
                                     : a.strategy == "wds" ? FinetuneKind::wds
                                                           : FinetuneKind::bt;
        FinetuneOptions opt;
        opt.seed = task_seed;
        FinetuneResult r = finetune(src, hub, X_t, y_t, spd, kind_ft, opt);
        f = std::move(r.forecaster);
        candidates = std::move(r.candidates);
    }

    fs::create_directories(a.out);
    save_forecaster_file(a.out + "/model.forecaster", f);
    write_csv(t.train, a.out + "/train.csv");
    write_csv(t.test, a.out + "/test.csv");

    CsvTable log;
    log.header = {"source_park", "score", "selected"};
    for (std::size_t j = 0; j < hub.size(); ++j)
        log.rows.push_back({hub[j].park_id, fmt_full(scores[j]), j == best ? "1" : "0"});
    write_csv_file(a.out + "/selection.csv", log);
    if (!candidates.empty()) {
        CsvTable grid;
        grid.header = {"lr", "lambda", "val_nrmse", "diverged"};
        for (const auto& c : candidates)
            grid.rows.push_back(
                {fmt_full(c.lr), fmt_full(c.lambda), fmt_full(c.val_nrmse), c.diverged ? "1" : "0"});
        write_csv_file(a.out + "/candidates.csv", grid);
    }
    std::cout << "adapted " << src.park_id << " -> " << adapt_mode_name(f.mode) << " ("
              << f.target_samples_used << " target samples";
    if (f.pooled_fallback) std::cout << ", pooled fallback";
    if (f.di_fallback) std::cout << ", DI fallback";
    std::cout << "); model in " << a.out << "\n";
    return 0;
}

int cmd_forecast(const ForecastArgs& a) {
    const Forecaster f = load_forecaster_file(a.model);
    const TimeSeriesDataset ds = load_day_blocks_csv(a.data);
    const std::vector<int> horizons = ds.horizons();
    if (f.probabilistic()) {
        const auto p = forecast_prob(f, ds.features, horizons);
        write_predictions(a.out, ds, p->mu, &p->sigma2);
    } else {
        write_predictions(a.out, ds, forecast_point(f, ds.features, horizons), nullptr);
    }
    std::cout << "wrote " << ds.rows() << " predictions to " << a.out << "\n";
    return 0;
}

int cmd_evaluate(const EvaluateArgs& a) {
    const PredictionTable pred = read_predictions(a.pred);
    const TimeSeriesDataset truth = load_day_blocks_csv(a.data);
    const EvalScore s = evaluate_predictions(pred, truth);
    std::cout << "nrmse=" << fmt_full(s.nrmse) << " crps=" << fmt_full(s.crps) << "\n";
    if (!a.append.empty()) {
        if (a.dataset.empty() || a.season.empty() || a.days.empty() || a.method.empty() ||
            a.park.empty())
            throw ConfigError("--append needs --dataset, --season, --days, --method, and --park");
        const bool fresh = !fs::exists(a.append);
        std::ofstream os(a.append, std::ios::binary | std::ios::app);
        if (!os) throw std::runtime_error("cannot write file: " + a.append);
        if (fresh) os << "dataset,season,days,method,park,nrmse,crps\n";
        os << a.dataset << ',' << a.season << ',' << a.days << ',' << a.method << ',' << a.park
           << ',' << fmt_full(s.nrmse) << ',' << fmt_full(s.crps) << "\n";
    }
    return 0;
}

int cmd_report(const ReportArgs& a) {
    const CsvTable errors = read_csv_file(a.errors);
    const CsvTable summary = summarize_errors(errors);
    const std::string text = render_report(summary);
    const std::string dir = a.out.empty() ? fs::path(a.errors).parent_path().string() : a.out;
    if (!dir.empty()) fs::create_directories(dir);
    const std::string prefix = dir.empty() ? std::string() : dir + "/";
    write_csv_file(prefix + "summary.csv", summary);
    std::ofstream rep(prefix + "report.txt", std::ios::binary);
    if (!rep) throw std::runtime_error("cannot write file: " + prefix + "report.txt");
    rep << text;
    std::cout << text;
    return 0;
}

int cmd_run(const RunArgs& a) {
    ExperimentConfig cfg = load_config(a.config);
    if (!a.out.empty()) cfg.out_dir = a.out;
    if (cfg.out_dir.empty()) throw ConfigError("out_dir is required (config key out_dir or --out)");
    const ExperimentOutput out = run_experiment(cfg);
    write_experiment_output(cfg.out_dir, out);
    std::cout << out.report_text;
    std::cout << "results in " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model hub transfer for renewable power forecasting"};
    app.require_subcommand(1);

    SynthArgs sg;
    auto* synth = app.add_subcommand("synth-gen", "generate a synthetic park hub");
    synth->add_option("--kind", sg.kind, "hub kind: wind|pv")->capture_default_str();
    synth->add_option("--parks", sg.parks, "number of parks")->capture_default_str();
    synth->add_option("--days", sg.days, "days of history per park")->capture_default_str();
    synth->add_option("--seed", sg.seed, "master seed")->capture_default_str();
    synth->add_option("--out", sg.out, "output directory")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train-hub", "train source models for every park");
    train->add_option("--data", tr.data, "park directory (from synth-gen)")->required();
    train->add_option("--out", tr.out, "hub output directory")->required();
    train->add_option("--seed", tr.seed, "master seed")->capture_default_str();
    train->add_option("--mlp-k", tr.mlp_k, "first hidden layer width multiple")->capture_default_str();
    train->add_option("--mlp-lr", tr.mlp_lr, "SGD learning rate")->capture_default_str();
    train->add_option("--mlp-epochs", tr.mlp_epochs, "SGD epochs")->capture_default_str();
    train->add_option("--belm-hidden", tr.belm_hidden, "BELM hidden units per branch")
        ->capture_default_str();

    SelectArgs se;
    auto* sel = app.add_subcommand("select", "score hub models against a target park");
    sel->add_option("--data", se.data, "target park CSV")->required();
    sel->add_option("--hub", se.hub, "hub directory (from train-hub)")->required();
    sel->add_option("--park", se.park, "target park id (default: file stem)");
    sel->add_option("--season", se.season, "season: spring|summer|autumn|winter")
        ->capture_default_str();
    sel->add_option("--days", se.days, "training window in days")->capture_default_str();
    sel->add_option("--test-fraction", se.test_fraction, "held-out day fraction")
        ->capture_default_str();
    sel->add_option("--seed", se.seed, "master seed")->capture_default_str();
    sel->add_option("--kind", se.kind, "score only this source kind: mlp|belm|all")
        ->capture_default_str();
    sel->add_option("--out", se.out, "scores CSV (default: stdout)");

    AdaptArgs ad;
    auto* adapt = app.add_subcommand("adapt", "select a source and adapt it to a target");
    adapt->add_option("--data", ad.data, "target park CSV")->required();
    adapt->add_option("--hub", ad.hub, "hub directory")->required();
    adapt->add_option("--park", ad.park, "target park id (default: file stem)");
    adapt->add_option("--strategy", ad.strategy, "di|dili|online|wd|wds|bt")->capture_default_str();
    adapt->add_option("--season", ad.season, "season")->capture_default_str();
    adapt->add_option("--days", ad.days, "training window in days")->capture_default_str();
    adapt->add_option("--test-fraction", ad.test_fraction, "held-out day fraction")
        ->capture_default_str();
    adapt->add_option("--selection", ad.selection, "source selection: evidence|nrmse")
        ->capture_default_str();
    adapt->add_flag("--per-horizon", ad.per_horizon, "one BLR head per forecast horizon (dili)");
    adapt->add_option("--seed", ad.seed, "master seed")->capture_default_str();
    adapt->add_option("--out", ad.out, "output directory")->required();

    ForecastArgs fc;
    auto* fore = app.add_subcommand("forecast", "apply an adapted model to a dataset");
    fore->add_option("--model", fc.model, "forecaster file (from adapt)")->required();
    fore->add_option("--data", fc.data, "dataset CSV to forecast")->required();
    fore->add_option("--out", fc.out, "predictions CSV")->required();

    EvaluateArgs ev;
    auto* eval = app.add_subcommand("evaluate", "score predictions against the truth");
    eval->add_option("--pred", ev.pred, "predictions CSV (from forecast)")->required();
    eval->add_option("--data", ev.data, "truth dataset CSV")->required();
    eval->add_option("--append", ev.append, "errors CSV to append a labeled row to");
    eval->add_option("--dataset", ev.dataset, "label: dataset name");
    eval->add_option("--season", ev.season, "label: season");
    eval->add_option("--days", ev.days, "label: training window");
    eval->add_option("--method", ev.method, "label: method name");
    eval->add_option("--park", ev.park, "label: park id");

    ReportArgs rp;
    auto* rep = app.add_subcommand("report", "aggregate an errors CSV into summary and report");
    rep->add_option("--errors", rp.errors, "errors CSV")->required();
    rep->add_option("--out", rp.out, "output directory (default: next to the errors CSV)");

    RunArgs rn;
    auto* run = app.add_subcommand("run", "run a full experiment from a config file");
    run->add_option("--config", rn.config, "experiment config file")->required();
    run->add_option("--out", rn.out, "override the config's out_dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_gen(sg);
        if (train->parsed()) return cmd_train_hub(tr);
        if (sel->parsed()) return cmd_select(se);
        if (adapt->parsed()) return cmd_adapt(ad);
        if (fore->parsed()) return cmd_forecast(fc);
        if (eval->parsed()) return cmd_evaluate(ev);
        if (rep->parsed()) return cmd_report(rp);
        if (run->parsed()) return cmd_run(rn);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
