#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace transferhub {

//! Axis-aligned regression tree with exhaustive split search. Rows with
//! feature <= threshold go left; leaf value is the residual mean.
struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict_row(const Eigen::RowVectorXd& x) const {
        int at = 0;
        while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
            const TreeNode& n = nodes[static_cast<std::size_t>(at)];
            at = x(n.feature) <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(at)].value;
    }
};

namespace detail {

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double reduction = 0.0;
};

//! Best variance-reduction split over all features; ties broken by lowest
//! feature index, then lowest threshold (first strict improvement wins).
inline SplitChoice best_split(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const std::vector<Eigen::Index>& rows) {
    SplitChoice best;
    const auto n = static_cast<double>(rows.size());
    double sum = 0.0, sum2 = 0.0;
    for (const Eigen::Index r : rows) {
        sum += y(r);
        sum2 += y(r) * y(r);
    }
    const double parent_sse = sum2 - sum * sum / n;

    std::vector<std::pair<double, double>> vals(rows.size());  // (feature value, target)
    for (int f = 0; f < X.cols(); ++f) {
        for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = {X(rows[i], f), y(rows[i])};
        std::sort(vals.begin(), vals.end());
        double left_sum = 0.0, left_sum2 = 0.0;
        for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
            left_sum += vals[i].second;
            left_sum2 += vals[i].second * vals[i].second;
            if (vals[i].first == vals[i + 1].first) continue;
            const auto nl = static_cast<double>(i + 1);
            const double nr = n - nl;
            const double right_sum = sum - left_sum;
            const double right_sum2 = sum2 - left_sum2;
            const double sse = (left_sum2 - left_sum * left_sum / nl) +
                               (right_sum2 - right_sum * right_sum / nr);
            const double reduction = parent_sse - sse;
            if (reduction > best.reduction + 1e-12) {
                best.found = true;
                best.feature = f;
                best.threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                best.reduction = reduction;
            }
        }
    }
    return best;
}

inline int grow_tree(RegressionTree& tree, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     std::vector<Eigen::Index>& rows, int depth, int max_depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double mean = 0.0;
    for (const Eigen::Index r : rows) mean += y(r);
    mean /= static_cast<double>(rows.size());
    tree.nodes[static_cast<std::size_t>(id)].value = mean;

    if (depth >= max_depth || rows.size() < 2) return id;
    const SplitChoice s = best_split(X, y, rows);
    if (!s.found) return id;

    std::vector<Eigen::Index> left, right;
    for (const Eigen::Index r : rows)
        (X(r, s.feature) <= s.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    const int l = grow_tree(tree, X, y, left, depth + 1, max_depth);
    const int r = grow_tree(tree, X, y, right, depth + 1, max_depth);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = l;
    node.right = r;
    return id;
}

}  // namespace detail

inline RegressionTree fit_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const std::vector<Eigen::Index>& rows, int max_depth) {
    RegressionTree t;
    std::vector<Eigen::Index> r = rows;
    detail::grow_tree(t, X, y, r, 0, max_depth);
    return t;
}

//! Stagewise squared-loss boosting on residuals.
struct Gbrt {
    double base_prediction = 0.0;
    double learning_rate = 0.1;
    int max_depth = 4;
    std::vector<RegressionTree> trees;
};

inline Eigen::VectorXd gbrt_predict(const Gbrt& model, const Eigen::MatrixXd& X) {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(X.rows(), model.base_prediction);
    for (const auto& t : model.trees)
        for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) += model.learning_rate * t.predict_row(X.row(i));
    return out;
}

//! The seed is accepted for interface stability; fitting itself is
//! deterministic (exhaustive CART needs no randomness).
inline Gbrt gbrt_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int n_estimators,
                     double learning_rate, int max_depth, std::uint64_t /*seed*/ = 0) {
    if (X.rows() < 2) throw std::invalid_argument("need at least 2 rows");
    if (n_estimators < 1 || max_depth < 1) throw std::invalid_argument("n_estimators and max_depth must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");

    Gbrt model;
    model.learning_rate = learning_rate;
    model.max_depth = max_depth;
    model.base_prediction = y.mean();

    std::vector<Eigen::Index> all(static_cast<std::size_t>(X.rows()));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    Eigen::VectorXd residual = y.array() - model.base_prediction;
    for (int t = 0; t < n_estimators; ++t) {
        RegressionTree tree = fit_tree(X, residual, all, max_depth);
        for (Eigen::Index i = 0; i < X.rows(); ++i)
            residual(i) -= learning_rate * tree.predict_row(X.row(i));
        model.trees.push_back(std::move(tree));
    }
    return model;
}

//! Appendix-style hyperparameter grids.
inline const std::vector<double>& gbrt_lr_grid() {
    static const std::vector<double> g{1e-6, 3.1e-6, 1e-5, 3.1e-5, 1e-4, 3.1e-4, 1e-3,
                                       3.1e-3, 1e-2, 3.1e-2, 1e-1, 3.1e-1, 1.0};
    return g;
}

inline const std::vector<int>& gbrt_depth_grid() {
    static const std::vector<int> g{2, 4, 6, 8};
    return g;
}

struct GbrtCvChoice {
    double learning_rate = 0.1;
    int max_depth = 4;
    double cv_mse = 0.0;
};

//! 3-fold contiguous-chunk cross validation over (lr, depth); ties keep the
//! lexicographically smallest (lr, depth). Rows are assumed time-ordered so
//! contiguous chunks respect day grouping.
inline GbrtCvChoice gbrt_cv_select(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<double>& lrs, const std::vector<int>& depths,
                                   int n_estimators = 300, int n_folds = 3) {
    if (lrs.empty() || depths.empty()) throw std::invalid_argument("empty hyperparameter grid");
    if (X.rows() < n_folds * 2) throw std::invalid_argument("too few rows for cross validation");

    GbrtCvChoice best;
    bool have = false;
    for (const double lr : lrs) {
        for (const int depth : depths) {
            double sse = 0.0;
            long count = 0;
            for (int f = 0; f < n_folds; ++f) {
                const Eigen::Index lo = X.rows() * f / n_folds;
                const Eigen::Index hi = X.rows() * (f + 1) / n_folds;
                const Eigen::Index n_val = hi - lo;
                Eigen::MatrixXd Xtr(X.rows() - n_val, X.cols());
                Eigen::VectorXd ytr(X.rows() - n_val);
                Xtr.topRows(lo) = X.topRows(lo);
                ytr.head(lo) = y.head(lo);
                Xtr.bottomRows(X.rows() - hi) = X.bottomRows(X.rows() - hi);
                ytr.tail(X.rows() - hi) = y.tail(X.rows() - hi);
                const Gbrt m = gbrt_fit(Xtr, ytr, n_estimators, lr, depth);
                const Eigen::VectorXd pred = gbrt_predict(m, X.middleRows(lo, n_val));
                sse += (pred - y.segment(lo, n_val)).squaredNorm();
                count += n_val;
            }
            const double mse = sse / static_cast<double>(count);
            if (!have || mse < best.cv_mse) {
                have = true;
                best = {lr, depth, mse};
            }
        }
    }
    return best;
}

}  // namespace transferhub
