#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "transferhub/selection.hpp"

namespace transferhub {

enum class AdaptMode { di, dili, online_belm, ft_wd, ft_wds, ft_bt };

inline std::string adapt_mode_name(AdaptMode m) {
    switch (m) {
        case AdaptMode::di: return "DI";
        case AdaptMode::dili: return "DILI";
        case AdaptMode::online_belm: return "ONLINE";
        case AdaptMode::ft_wd: return "FT-WD";
        case AdaptMode::ft_wds: return "FT-WDS";
        default: return "FT-BT";
    }
}

//! Point predictor backed by a (possibly fine-tuned) network.
struct NetPredictor {
    Standardizer standardizer;
    Mlp net;
};

//! Frozen extractor with one pooled BLR head, or one head per horizon.
struct BlrPredictor {
    Extractor extractor;
    std::vector<GaussianLinear> heads;  // size 1, or K when per-horizon
    bool per_horizon = false;
};

struct BelmPredictor {
    Belm model;
};

using PredictorCore = std::variant<NetPredictor, BlrPredictor, BelmPredictor>;

struct Forecaster {
    AdaptMode mode = AdaptMode::di;
    PredictorCore core;
    long target_samples_used = 0;   // audit: how much target data adaptation consumed
    bool pooled_fallback = false;   // a per-horizon head lacked data and reused the pooled head
    bool di_fallback = false;       // fine-tuning diverged everywhere

    bool probabilistic() const { return !std::holds_alternative<NetPredictor>(core); }
};

namespace detail {

inline PredictiveGaussian blr_core_predict(const BlrPredictor& p, const Eigen::MatrixXd& X,
                                           const std::vector<int>& horizons) {
    const Eigen::MatrixXd phi = extract(p.extractor, X);
    if (!p.per_horizon) return blr_predict(p.heads.front(), phi);
    if (static_cast<Eigen::Index>(horizons.size()) != X.rows())
        throw std::invalid_argument("per-horizon prediction needs a horizon per row");
    PredictiveGaussian out;
    out.mu.resize(X.rows());
    out.sigma2.resize(X.rows());
    const int K = static_cast<int>(p.heads.size());
    for (int k = 1; k <= K; ++k) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            if (horizons[static_cast<std::size_t>(i)] == k) rows.push_back(i);
        if (rows.empty()) continue;
        const PredictiveGaussian part =
            blr_predict(p.heads[static_cast<std::size_t>(k - 1)], take_rows(phi, rows));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.mu(rows[i]) = part.mu(static_cast<Eigen::Index>(i));
            out.sigma2(rows[i]) = part.sigma2(static_cast<Eigen::Index>(i));
        }
    }
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const int h = horizons[static_cast<std::size_t>(i)];
        if (h < 1 || h > K) throw std::invalid_argument("horizon out of range: " + std::to_string(h));
    }
    return out;
}

}  // namespace detail

//! Deterministic point forecast. `horizons` is only consulted by per-horizon
//! heads (1-based slot per row).
inline Eigen::VectorXd forecast_point(const Forecaster& f, const Eigen::MatrixXd& X,
                                      const std::vector<int>& horizons = {}) {
    if (const auto* net = std::get_if<NetPredictor>(&f.core))
        return mlp_forward(net->net, net->standardizer.apply(X)).predictions;
    if (const auto* belm = std::get_if<BelmPredictor>(&f.core)) return belm->model.predict(X).mu;
    return detail::blr_core_predict(std::get<BlrPredictor>(f.core), X, horizons).mu;
}

//! Predictive Gaussians where the head supports them (BLR and BELM cores).
inline std::optional<PredictiveGaussian> forecast_prob(const Forecaster& f, const Eigen::MatrixXd& X,
                                                       const std::vector<int>& horizons = {}) {
    if (std::holds_alternative<NetPredictor>(f.core)) return std::nullopt;
    if (const auto* belm = std::get_if<BelmPredictor>(&f.core)) return belm->model.predict(X);
    return detail::blr_core_predict(std::get<BlrPredictor>(f.core), X, horizons);
}

//! DI: the selected source applied verbatim; consumes zero target samples.
inline Forecaster adapt_direct(const SourceModel& source) {
    Forecaster f;
    f.mode = AdaptMode::di;
    f.target_samples_used = 0;
    if (source.is_belm())
        f.core = BelmPredictor{std::get<BelmSource>(source.impl).model};
    else
        f.core = NetPredictor{std::get<MlpSource>(source.impl).standardizer,
                              std::get<MlpSource>(source.impl).net};
    return f;
}

//! DILI: keep the source extractor, refit the head(s) by empirical Bayes on
//! target data. A horizon with fewer than out_dim+1 samples falls back to
//! the pooled head.
inline Forecaster adapt_direct_linear(const SourceModel& source, const Eigen::MatrixXd& X_t,
                                      const Eigen::VectorXd& y_t, bool per_horizon = false,
                                      const std::vector<int>& horizons = {}) {
    BlrPredictor core;
    core.extractor = source.extractor();
    const Eigen::MatrixXd phi = extract(core.extractor, X_t);
    const Eigen::Index need = phi.cols() + 1;
    if (!per_horizon && X_t.rows() < need)
        throw std::invalid_argument("need at least " + std::to_string(need) + " target samples");
    const GaussianLinear pooled = empirical_bayes(phi, y_t).model;

    Forecaster f;
    f.mode = AdaptMode::dili;
    f.target_samples_used = X_t.rows();
    if (!per_horizon) {
        core.heads.push_back(pooled);
        f.core = std::move(core);
        return f;
    }

    if (static_cast<Eigen::Index>(horizons.size()) != X_t.rows())
        throw std::invalid_argument("per-horizon adaptation needs a horizon per row");
    int K = 0;
    for (const int h : horizons) K = std::max(K, h);
    core.per_horizon = true;
    for (int k = 1; k <= K; ++k) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < X_t.rows(); ++i)
            if (horizons[static_cast<std::size_t>(i)] == k) rows.push_back(i);
        if (static_cast<Eigen::Index>(rows.size()) < need) {
            core.heads.push_back(pooled);
            f.pooled_fallback = true;
        } else {
            core.heads.push_back(
                empirical_bayes(detail::take_rows(phi, rows), detail::take_rows(y_t, rows)).model);
        }
    }
    f.core = std::move(core);
    return f;
}

//! Online BELM: absorb target data into the source head; (alpha, beta) stay
//! at their source-optimized values.
inline Forecaster adapt_belm_online(const SourceModel& source, const Eigen::MatrixXd& X_t,
                                    const Eigen::VectorXd& y_t) {
    if (!source.is_belm()) throw std::invalid_argument("online update needs a BELM source");
    Belm model = std::get<BelmSource>(source.impl).model;
    model.head = blr_update(model.head, model.transform(X_t), y_t);
    Forecaster f;
    f.mode = AdaptMode::online_belm;
    f.target_samples_used = X_t.rows();
    f.core = BelmPredictor{std::move(model)};
    return f;
}

//! Fine-tuning penalty kinds, mapped onto the network loss machinery.
enum class FinetuneKind { wd, wds, bt };

inline PenaltyKind penalty_of(FinetuneKind k) {
    switch (k) {
        case FinetuneKind::wd: return PenaltyKind::wd;
        case FinetuneKind::wds: return PenaltyKind::wds;
        default: return PenaltyKind::bt;
    }
}

inline AdaptMode mode_of(FinetuneKind k) {
    switch (k) {
        case FinetuneKind::wd: return AdaptMode::ft_wd;
        case FinetuneKind::wds: return AdaptMode::ft_wds;
        default: return AdaptMode::ft_bt;
    }
}

inline std::vector<double> log_spaced(double lo, double hi, int n) {
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        g[static_cast<std::size_t>(i)] =
            std::pow(10.0, std::log10(lo) + (std::log10(hi) - std::log10(lo)) * i / (n - 1));
    return g;
}

inline std::vector<double> finetune_lr_grid() { return log_spaced(1e-4, 1e-1, 7); }

inline std::vector<double> finetune_lambda_grid(FinetuneKind k) {
    switch (k) {
        case FinetuneKind::wd: return log_spaced(1e-6, 1e-3, 7);
        case FinetuneKind::wds: return {0.1, 1.0};
        default: return {0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
    }
}

struct FinetuneOptions {
    std::vector<double> lr_grid = finetune_lr_grid();
    std::vector<double> lambda_grid;  // empty => default grid for the kind
    double val_fraction = 0.3;        // whole-day validation split
    int bt_top_m = 10;                // evidence-top sources for the BT consensus
    std::uint64_t seed = 0;
};

struct FinetuneCandidate {
    double lr = 0.0;
    double lambda = 0.0;
    double val_nrmse = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
};

struct FinetuneResult {
    Forecaster forecaster;
    std::vector<FinetuneCandidate> candidates;
    double best_lr = 0.0;
    double best_lambda = 0.0;
};

//! Grid-searched single-epoch SGD fine-tuning of all network parameters.
//! The hub is consulted only for the BT consensus (evidence-top sources'
//! empirical-Bayes heads, averaged). All candidates diverging yields a DI
//! fallback rather than an error.
inline FinetuneResult finetune(const SourceModel& source, const std::vector<SourceModel>& hub,
                               const Eigen::MatrixXd& X_t, const Eigen::VectorXd& y_t,
                               int samples_per_day, FinetuneKind kind, FinetuneOptions opt = {}) {
    if (source.is_belm()) throw std::invalid_argument("fine-tuning needs a network source");
    if (X_t.rows() < 10) throw std::invalid_argument("need at least 10 target samples");
    const auto& src = std::get<MlpSource>(source.impl);

    const DaySplit split =
        split_days_70_30(X_t.rows(), samples_per_day, derive_seed(opt.seed, "ft-split"), 1.0 - opt.val_fraction);
    const Eigen::MatrixXd X_tr = detail::take_rows(X_t, split.train_rows);
    const Eigen::VectorXd y_tr = detail::take_rows(y_t, split.train_rows);
    const Eigen::MatrixXd X_val = detail::take_rows(X_t, split.holdout_rows);
    const Eigen::VectorXd y_val = detail::take_rows(y_t, split.holdout_rows);
    const Eigen::MatrixXd X_tr_std = src.standardizer.apply(X_tr);

    LossSpec spec;
    spec.kind = penalty_of(kind);
    if (kind == FinetuneKind::wds) {
        spec.W0 = src.net.W;
        spec.b0 = src.net.b;
    } else if (kind == FinetuneKind::bt) {
        // Consensus: mean prediction of the evidence-top source heads on the
        // fine-tuning rows.
        std::vector<std::pair<double, std::size_t>> ranked;
        std::vector<EvidenceScore> scores(hub.size());
        for (std::size_t i = 0; i < hub.size(); ++i) {
            if (hub[i].is_belm()) continue;
            scores[i] = score_evidence(hub[i], X_t, y_t);
            ranked.emplace_back(-scores[i].log_ev, i);
        }
        if (ranked.empty()) throw std::invalid_argument("BT needs at least one network source in the hub");
        std::sort(ranked.begin(), ranked.end());
        const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(opt.bt_top_m), ranked.size());
        Eigen::VectorXd consensus = Eigen::VectorXd::Zero(X_tr.rows());
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t i = ranked[j].second;
            const Eigen::MatrixXd phi = extract(hub[i].extractor(), X_tr);
            consensus += blr_predict(scores[i].head, phi).mu;
        }
        spec.bt_consensus = consensus / static_cast<double>(m);
    }

    const std::vector<double> lambdas =
        opt.lambda_grid.empty() ? finetune_lambda_grid(kind) : opt.lambda_grid;
    const Eigen::Index batch =
        static_cast<Eigen::Index>((X_tr.rows() + 9) / 10);  // about ten iterations per epoch
    const std::uint64_t sgd_seed = derive_seed(opt.seed, "ft-sgd");

    FinetuneResult res;
    bool have_best = false;
    double best_val = 0.0;
    Mlp best_net;
    for (const double lr : opt.lr_grid) {
        for (const double lambda : lambdas) {
            FinetuneCandidate cand;
            cand.lr = lr;
            cand.lambda = lambda;
            LossSpec s = spec;
            s.lambda = lambda;
            try {
                const Mlp tuned = sgd_train(src.net, X_tr_std, y_tr, s, lr, 1, batch, sgd_seed);
                const Eigen::VectorXd pred =
                    mlp_forward(tuned, src.standardizer.apply(X_val)).predictions;
                if (!pred.allFinite()) throw std::runtime_error("nonfinite validation predictions");
                cand.val_nrmse = nrmse(y_val, pred);
                if (!std::isfinite(cand.val_nrmse)) throw std::runtime_error("nonfinite validation nRMSE");
                if (!have_best || cand.val_nrmse < best_val) {
                    have_best = true;
                    best_val = cand.val_nrmse;
                    best_net = tuned;
                    res.best_lr = lr;
                    res.best_lambda = lambda;
                }
            } catch (const std::runtime_error&) {
                cand.diverged = true;
            }
            res.candidates.push_back(cand);
        }
    }

    if (!have_best) {
        res.forecaster = adapt_direct(source);
        res.forecaster.di_fallback = true;
        return res;
    }
    res.forecaster.mode = mode_of(kind);
    res.forecaster.core = NetPredictor{src.standardizer, std::move(best_net)};
    res.forecaster.target_samples_used = X_t.rows();
    return res;
}

}  // namespace transferhub
