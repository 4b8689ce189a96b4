#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "transferhub/belm.hpp"
#include "transferhub/blr.hpp"
#include "transferhub/common.hpp"
#include "transferhub/eval.hpp"
#include "transferhub/feature_extractor.hpp"
#include "transferhub/mlp.hpp"

namespace transferhub {

constexpr double kEvidenceFloor = -std::numeric_limits<double>::infinity();

//! A pre-trained hub member: a network or a BELM, plus bookkeeping for the
//! hub manifest.
struct MlpSource {
    Standardizer standardizer;
    Mlp net;
};

struct BelmSource {
    Belm model;
};

struct SourceModel {
    std::string park_id;
    std::variant<MlpSource, BelmSource> impl;
    double val_nrmse = std::numeric_limits<double>::quiet_NaN();

    bool is_belm() const { return std::holds_alternative<BelmSource>(impl); }
    std::string kind_name() const { return is_belm() ? "belm" : "mlp"; }

    Extractor extractor() const {
        if (is_belm()) return std::get<BelmSource>(impl).model.features;
        const auto& m = std::get<MlpSource>(impl);
        return MlpFeatures{m.standardizer, m.net};
    }

    Eigen::VectorXd point_predict(const Eigen::MatrixXd& X) const {
        if (is_belm()) return std::get<BelmSource>(impl).model.predict(X).mu;
        const auto& m = std::get<MlpSource>(impl);
        return mlp_forward(m.net, m.standardizer.apply(X)).predictions;
    }
};

struct EvidenceScore {
    double log_ev = kEvidenceFloor;
    bool degenerate = false;
    double alpha = 1.0;
    double beta = 1.0;
    GaussianLinear head;  // the empirical-Bayes head, reusable for adaptation
};

//! Transferability by marginal likelihood: empirical-Bayes BLR on the source
//! extractor's features of ALL available target data.
inline EvidenceScore score_evidence(const SourceModel& source, const Eigen::MatrixXd& X_t,
                                    const Eigen::VectorXd& y_t) {
    if (X_t.rows() == 0) throw std::invalid_argument("target data is empty");
    const Eigen::MatrixXd phi = extract(source.extractor(), X_t);
    const EmpiricalBayesResult eb = empirical_bayes(phi, y_t);
    EvidenceScore s;
    s.head = eb.model;
    s.alpha = eb.alpha;
    s.beta = eb.beta;
    s.degenerate = eb.degenerate;
    s.log_ev = eb.degenerate ? kEvidenceFloor : log_evidence(eb.alpha, eb.beta, phi, y_t);
    return s;
}

//! Deterministic 70/30 whole-day split used by nRMSE scoring and fine-tuning.
struct DaySplit {
    std::vector<Eigen::Index> train_rows;
    std::vector<Eigen::Index> holdout_rows;
};

inline DaySplit split_days_70_30(Eigen::Index n_rows, int samples_per_day, std::uint64_t seed,
                                 double train_fraction = 0.7) {
    if (n_rows % samples_per_day != 0) throw std::invalid_argument("rows not divisible into whole days");
    const Eigen::Index n_days = n_rows / samples_per_day;
    if (n_days < 2) throw std::invalid_argument("need at least 2 whole days, have " + std::to_string(n_days));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_days));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(order);
    auto n_train = static_cast<Eigen::Index>(std::llround(train_fraction * static_cast<double>(n_days)));
    n_train = std::max<Eigen::Index>(1, std::min(n_days - 1, n_train));

    DaySplit s;
    std::vector<Eigen::Index> train_days(order.begin(), order.begin() + n_train);
    std::vector<Eigen::Index> hold_days(order.begin() + n_train, order.end());
    std::sort(train_days.begin(), train_days.end());
    std::sort(hold_days.begin(), hold_days.end());
    for (const Eigen::Index d : train_days)
        for (int k = 0; k < samples_per_day; ++k) s.train_rows.push_back(d * samples_per_day + k);
    for (const Eigen::Index d : hold_days)
        for (int k = 0; k < samples_per_day; ++k) s.holdout_rows.push_back(d * samples_per_day + k);
    return s;
}

namespace detail {
inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
}
inline Eigen::VectorXd take_rows(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(rows[i]);
    return out;
}
}  // namespace detail

//! Inverse-similarity score: 70% of the target days update the source head
//! (online BLR update for a BELM; fixed models are scored directly), nRMSE
//! on the remaining 30%.
inline double score_nrmse(const SourceModel& source, const Eigen::MatrixXd& X_t,
                          const Eigen::VectorXd& y_t, int samples_per_day, std::uint64_t seed) {
    const DaySplit split = split_days_70_30(X_t.rows(), samples_per_day, seed);
    const Eigen::MatrixXd X_hold = detail::take_rows(X_t, split.holdout_rows);
    const Eigen::VectorXd y_hold = detail::take_rows(y_t, split.holdout_rows);

    Eigen::VectorXd pred;
    if (source.is_belm()) {
        const Belm& b = std::get<BelmSource>(source.impl).model;
        const Eigen::MatrixXd phi_up = b.transform(detail::take_rows(X_t, split.train_rows));
        const GaussianLinear head = blr_update(b.head, phi_up, detail::take_rows(y_t, split.train_rows));
        pred = blr_predict(head, b.transform(X_hold)).mu;
    } else {
        pred = source.point_predict(X_hold);
    }
    return nrmse(y_hold, pred);
}

enum class SelectionStrategy { evidence, nrmse };

inline SelectionStrategy selection_from_name(const std::string& name) {
    if (name == "evidence") return SelectionStrategy::evidence;
    if (name == "nrmse") return SelectionStrategy::nrmse;
    throw std::invalid_argument("unknown selection strategy: " + name);
}

//! Argmax for evidence, argmin for nRMSE; ties -> lowest index.
inline std::size_t select(const std::vector<double>& scores, SelectionStrategy strategy) {
    if (scores.empty()) throw std::invalid_argument("no scores to select from");
    std::size_t best = 0;
    bool any_finite = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isfinite(scores[i])) any_finite = true;
        const bool improves = strategy == SelectionStrategy::evidence ? scores[i] > scores[best]
                                                                      : scores[i] < scores[best];
        if (improves) best = i;
    }
    if (strategy == SelectionStrategy::evidence && !any_finite)
        throw std::runtime_error("all evidence scores are degenerate");
    return best;
}

//! One row of the `select` subcommand's CSV.
struct SelectionRow {
    std::string source_park;
    double evidence = kEvidenceFloor;
    double nrmse_score = std::numeric_limits<double>::quiet_NaN();
    bool selected_by_evidence = false;
    bool selected_by_nrmse = false;
};

inline std::vector<SelectionRow> score_hub(const std::vector<SourceModel>& hub,
                                           const Eigen::MatrixXd& X_t, const Eigen::VectorXd& y_t,
                                           int samples_per_day, std::uint64_t seed) {
    if (hub.empty()) throw std::invalid_argument("empty hub");
    std::vector<SelectionRow> rows(hub.size());
    std::vector<double> ev(hub.size()), nr(hub.size());
    for (std::size_t i = 0; i < hub.size(); ++i) {
        rows[i].source_park = hub[i].park_id;
        rows[i].evidence = ev[i] = score_evidence(hub[i], X_t, y_t).log_ev;
        rows[i].nrmse_score = nr[i] = score_nrmse(hub[i], X_t, y_t, samples_per_day, seed);
    }
    rows[select(ev, SelectionStrategy::evidence)].selected_by_evidence = true;
    rows[select(nr, SelectionStrategy::nrmse)].selected_by_nrmse = true;
    return rows;
}

}  // namespace transferhub
