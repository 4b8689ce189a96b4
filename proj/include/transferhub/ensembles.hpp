#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "transferhub/adaptation.hpp"
#include "transferhub/blr.hpp"
#include "transferhub/eval.hpp"

namespace transferhub {

constexpr double kSoftGateEps = 1e-9;

//! Coopetitive soft gating: varsigma'_j = (sum errors) / (errors_j^eta + eps),
//! normalized. eta = 0 gives uniform weights, large eta approaches hard
//! gating on the best member.
inline Eigen::VectorXd soft_gate(const Eigen::VectorXd& errors, double eta, double eps = kSoftGateEps) {
    if (errors.size() == 0) throw std::invalid_argument("empty error list");
    if (!(eta >= 0) || !(eps > 0)) throw std::invalid_argument("need eta >= 0 and eps > 0");
    if ((errors.array() < 0).any()) throw std::invalid_argument("errors must be nonnegative");
    const double total = errors.sum();
    if (total == 0.0)  // every member is perfect: nothing to gate on
        return Eigen::VectorXd::Constant(errors.size(), 1.0 / static_cast<double>(errors.size()));
    Eigen::VectorXd w(errors.size());
    for (Eigen::Index j = 0; j < errors.size(); ++j)
        w(j) = total / (std::pow(errors(j), eta) + eps);
    return w / w.sum();
}

//! Two-component PCA with a deterministic sign convention: the
//! largest-magnitude entry of each component is positive.
struct PcaBasis {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;  // D x n_components
    bool degenerate = false;     // zero-variance input; basis is an arbitrary completion
};

inline PcaBasis pca_fit(const Eigen::MatrixXd& X, int n_components = 2) {
    if (X.rows() < 2) throw std::invalid_argument("need at least 2 rows");
    if (n_components < 1 || n_components > X.cols())
        throw std::invalid_argument("n_components out of range");
    PcaBasis b;
    b.mean = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - b.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(X.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.eigenvalues().maxCoeff() <= 1e-24) b.degenerate = true;

    b.components.resize(X.cols(), n_components);
    for (int c = 0; c < n_components; ++c) {
        // SelfAdjointEigenSolver sorts ascending; take from the top.
        Eigen::VectorXd v = eig.eigenvectors().col(X.cols() - 1 - c);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        b.components.col(c) = v;
    }
    return b;
}

inline Eigen::MatrixXd pca_transform(const PcaBasis& basis, const Eigen::MatrixXd& X) {
    if (X.cols() != basis.mean.size()) throw std::invalid_argument("pca width mismatch");
    return (X.rowwise() - basis.mean.transpose()) * basis.components;
}

//! Indices of the k nearest stored points (Euclidean; exact distance ties
//! resolved by lowest index).
inline std::vector<Eigen::Index> knn_indices(const Eigen::MatrixXd& points,
                                             const Eigen::RowVectorXd& query, int k) {
    if (points.rows() < k || k < 1) throw std::invalid_argument("need at least k stored points");
    std::vector<std::pair<double, Eigen::Index>> d(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        d[static_cast<std::size_t>(i)] = {(points.row(i) - query).squaredNorm(), i};
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(i)].second;
    return idx;
}

//! Mean of the values at the k nearest stored points.
inline double knn_mean(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                       const Eigen::RowVectorXd& query, int k = 3) {
    if (points.rows() != values.size()) throw std::invalid_argument("points/values length mismatch");
    double acc = 0.0;
    for (const Eigen::Index i : knn_indices(points, query, k)) acc += values(i);
    return acc / k;
}

//! CSGE: members weighted by soft-gated global, local (PCA + kNN of stored
//! absolute errors), and forecast-horizon error statistics.
struct CsgeModel {
    std::vector<Forecaster> members;
    Eigen::VectorXd global_errors;   // M
    Eigen::MatrixXd horizon_errors;  // M x K
    std::vector<bool> horizon_backfilled;  // horizon had no training rows
    PcaBasis pca;
    Eigen::MatrixXd local_points;    // N x 2
    Eigen::MatrixXd local_abs_err;   // N x M
    double eta_g = 1.0;
    double eta_l = 1.0;
    double eta_h = 1.0;
    double eps = kSoftGateEps;
    int n_horizons = 1;
    int knn_k = 3;
};

inline CsgeModel csge_fit(std::vector<Forecaster> members, const Eigen::MatrixXd& X_train,
                          const Eigen::VectorXd& y_train, const std::vector<int>& horizons,
                          double eta_g = 1.0, double eta_l = 1.0, double eta_h = 1.0) {
    if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
    if (static_cast<Eigen::Index>(horizons.size()) != X_train.rows())
        throw std::invalid_argument("need a horizon per training row");
    CsgeModel m;
    m.eta_g = eta_g;
    m.eta_l = eta_l;
    m.eta_h = eta_h;
    const auto M = static_cast<Eigen::Index>(members.size());
    int K = 0;
    for (const int h : horizons) {
        if (h < 1) throw std::invalid_argument("horizons are 1-based");
        K = std::max(K, h);
    }
    m.n_horizons = K;

    m.local_abs_err.resize(X_train.rows(), M);
    for (Eigen::Index j = 0; j < M; ++j) {
        const Eigen::VectorXd pred = forecast_point(members[static_cast<std::size_t>(j)], X_train, horizons);
        m.local_abs_err.col(j) = (pred - y_train).cwiseAbs();
    }
    m.global_errors = m.local_abs_err.colwise().mean();

    m.horizon_errors.resize(M, K);
    m.horizon_backfilled.assign(static_cast<std::size_t>(K), false);
    for (int k = 1; k <= K; ++k) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < X_train.rows(); ++i)
            if (horizons[static_cast<std::size_t>(i)] == k) rows.push_back(i);
        if (rows.empty()) {
            m.horizon_errors.col(k - 1) = m.global_errors;
            m.horizon_backfilled[static_cast<std::size_t>(k - 1)] = true;
            continue;
        }
        for (Eigen::Index j = 0; j < M; ++j) {
            double acc = 0.0;
            for (const Eigen::Index r : rows) acc += m.local_abs_err(r, j);
            m.horizon_errors(j, k - 1) = acc / static_cast<double>(rows.size());
        }
    }

    m.pca = pca_fit(X_train, std::min<int>(2, static_cast<int>(X_train.cols())));
    m.local_points = pca_transform(m.pca, X_train);
    m.knn_k = std::min<int>(3, static_cast<int>(X_train.rows()));
    m.members = std::move(members);
    return m;
}

//! Per-query member weights: normalized product of the three soft gates.
inline Eigen::VectorXd csge_weights(const CsgeModel& m, const Eigen::RowVectorXd& x, int k) {
    if (k < 1 || k > m.n_horizons) throw std::invalid_argument("horizon out of range");
    const auto M = static_cast<Eigen::Index>(m.members.size());
    const Eigen::RowVectorXd q = pca_transform(m.pca, x);
    // Neighbors depend only on the query, so find them once for all members.
    const std::vector<Eigen::Index> nn = knn_indices(m.local_points, q, m.knn_k);
    Eigen::VectorXd local = Eigen::VectorXd::Zero(M);
    for (const Eigen::Index i : nn) local += m.local_abs_err.row(i).transpose();
    local /= static_cast<double>(m.knn_k);
    const Eigen::VectorXd wg = soft_gate(m.global_errors, m.eta_g, m.eps);
    const Eigen::VectorXd wl = soft_gate(local, m.eta_l, m.eps);
    const Eigen::VectorXd wh = soft_gate(m.horizon_errors.col(k - 1), m.eta_h, m.eps);
    Eigen::VectorXd w = wg.array() * wl.array() * wh.array();
    return w / w.sum();
}

inline double csge_predict_row(const CsgeModel& m, const Eigen::RowVectorXd& x, int k) {
    const Eigen::VectorXd w = csge_weights(m, x, k);
    double out = 0.0;
    for (std::size_t j = 0; j < m.members.size(); ++j)
        out += w(static_cast<Eigen::Index>(j)) * forecast_point(m.members[j], x, {k})(0);
    return out;
}

inline Eigen::VectorXd csge_predict(const CsgeModel& m, const Eigen::MatrixXd& X,
                                    const std::vector<int>& horizons) {
    if (static_cast<Eigen::Index>(horizons.size()) != X.rows())
        throw std::invalid_argument("need a horizon per row");
    // Member forecasts are computed in batch; weights per row.
    const auto M = static_cast<Eigen::Index>(m.members.size());
    Eigen::MatrixXd preds(X.rows(), M);
    for (Eigen::Index j = 0; j < M; ++j)
        preds.col(j) = forecast_point(m.members[static_cast<std::size_t>(j)], X, horizons);
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Eigen::VectorXd w = csge_weights(m, X.row(i), horizons[static_cast<std::size_t>(i)]);
        out(i) = w.dot(preds.row(i).transpose());
    }
    return out;
}

//! Gaussian mixture returned by BMA prediction.
struct GaussianMixture {
    Eigen::VectorXd weights;
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma2;

    double mean() const { return weights.dot(mu); }
    double variance() const {
        const double m1 = mean();
        return (weights.array() * (sigma2.array() + mu.array().square())).sum() - m1 * m1;
    }
    double cdf(double x) const {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < weights.size(); ++j)
            acc += weights(j) * normal_cdf((x - mu(j)) / std::sqrt(sigma2(j)));
        return acc;
    }
};

//! Bayesian model averaging over probabilistic members: equal prior plus the
//! member head's log evidence on the target data, normalized in log space.
struct BmaModel {
    std::vector<Forecaster> members;
    Eigen::VectorXd log_weights;
    bool degenerate = false;  // every member evidence was degenerate
};

namespace detail {

//! Log evidence of an adapted member's own head(s) on target data: pooled
//! heads score directly, per-horizon heads average across horizons.
inline double member_log_evidence(const Forecaster& f, const Eigen::MatrixXd& X_t,
                                  const Eigen::VectorXd& y_t, const std::vector<int>& horizons) {
    const BlrPredictor* p = std::get_if<BlrPredictor>(&f.core);
    const BelmPredictor* bp = std::get_if<BelmPredictor>(&f.core);
    if (!p && !bp) throw std::invalid_argument("BMA needs probabilistic (BLR-headed) members");
    if (bp) {
        const Belm& b = bp->model;
        return log_evidence(b.head.alpha, b.head.beta, b.transform(X_t), y_t);
    }
    const Eigen::MatrixXd phi = extract(p->extractor, X_t);
    if (!p->per_horizon)
        return log_evidence(p->heads.front().alpha, p->heads.front().beta, phi, y_t);
    if (static_cast<Eigen::Index>(horizons.size()) != X_t.rows())
        throw std::invalid_argument("per-horizon members need a horizon per row");
    double acc = 0.0;
    int used = 0;
    for (int k = 1; k <= static_cast<int>(p->heads.size()); ++k) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < X_t.rows(); ++i)
            if (horizons[static_cast<std::size_t>(i)] == k) rows.push_back(i);
        if (rows.empty()) continue;
        const auto& h = p->heads[static_cast<std::size_t>(k - 1)];
        acc += log_evidence(h.alpha, h.beta, take_rows(phi, rows), take_rows(y_t, rows));
        ++used;
    }
    return used > 0 ? acc / used : kEvidenceFloor;
}

}  // namespace detail

inline BmaModel bma_fit(std::vector<Forecaster> members, const Eigen::MatrixXd& X_t,
                        const Eigen::VectorXd& y_t, const std::vector<int>& horizons = {}) {
    if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
    BmaModel m;
    const auto M = static_cast<Eigen::Index>(members.size());
    Eigen::VectorXd lw(M);
    const double log_prior = -std::log(static_cast<double>(M));  // equal prior
    for (Eigen::Index j = 0; j < M; ++j)
        lw(j) = log_prior + detail::member_log_evidence(members[static_cast<std::size_t>(j)], X_t, y_t, horizons);

    const double top = lw.maxCoeff();
    if (!std::isfinite(top)) {
        m.degenerate = true;
        lw.setConstant(-std::log(static_cast<double>(M)));
    } else {
        const double lse = top + std::log((lw.array() - top).exp().sum());
        lw.array() -= lse;
    }
    m.log_weights = lw;
    m.members = std::move(members);
    return m;
}

inline GaussianMixture bma_predict_row(const BmaModel& m, const Eigen::RowVectorXd& x, int horizon) {
    GaussianMixture mix;
    const auto M = static_cast<Eigen::Index>(m.members.size());
    mix.weights = m.log_weights.array().exp();
    mix.mu.resize(M);
    mix.sigma2.resize(M);
    for (Eigen::Index j = 0; j < M; ++j) {
        const auto p = forecast_prob(m.members[static_cast<std::size_t>(j)], x, {horizon});
        mix.mu(j) = p->mu(0);
        mix.sigma2(j) = p->sigma2(0);
    }
    return mix;
}

//! Batched per-member predictive moments: mu and sigma2 are N x M.
struct BmaForward {
    Eigen::VectorXd weights;
    Eigen::MatrixXd mu;
    Eigen::MatrixXd sigma2;

    GaussianMixture row(Eigen::Index i) const {
        return GaussianMixture{weights, mu.row(i).transpose(), sigma2.row(i).transpose()};
    }
};

inline BmaForward bma_predict(const BmaModel& m, const Eigen::MatrixXd& X,
                              const std::vector<int>& horizons) {
    BmaForward out;
    const auto M = static_cast<Eigen::Index>(m.members.size());
    out.weights = m.log_weights.array().exp();
    out.mu.resize(X.rows(), M);
    out.sigma2.resize(X.rows(), M);
    for (Eigen::Index j = 0; j < M; ++j) {
        const auto p = forecast_prob(m.members[static_cast<std::size_t>(j)], X, horizons);
        if (!p) throw std::invalid_argument("ensemble member has no predictive distribution");
        out.mu.col(j) = p->mu;
        out.sigma2.col(j) = p->sigma2;
    }
    return out;
}

namespace detail {
//! E|X - y| for X ~ N(mu_d, s2) with mu_d the mean of the difference.
inline double gaussian_abs_moment(double mu_d, double s2) {
    if (!(s2 > 0.0)) return std::abs(mu_d);
    const double s = std::sqrt(s2);
    const double z = mu_d / s;
    return mu_d * (2.0 * normal_cdf(z) - 1.0) + 2.0 * s * normal_pdf(z);
}
}  // namespace detail

//! Closed-form CRPS of a Gaussian mixture:
//!   sum_j w_j E|X_j - y| - 1/2 sum_{j,k} w_j w_k E|X_j - X_k|.
inline double crps_mixture(const GaussianMixture& mix, double y) {
    const Eigen::Index M = mix.weights.size();
    double first = 0.0;
    for (Eigen::Index j = 0; j < M; ++j)
        first += mix.weights(j) * detail::gaussian_abs_moment(y - mix.mu(j), mix.sigma2(j));
    double second = 0.0;
    for (Eigen::Index j = 0; j < M; ++j) {
        second += mix.weights(j) * mix.weights(j) *
                  detail::gaussian_abs_moment(0.0, 2.0 * mix.sigma2(j));
        for (Eigen::Index k = j + 1; k < M; ++k)
            second += 2.0 * mix.weights(j) * mix.weights(k) *
                      detail::gaussian_abs_moment(mix.mu(j) - mix.mu(k), mix.sigma2(j) + mix.sigma2(k));
    }
    return first - 0.5 * second;
}

}  // namespace transferhub
