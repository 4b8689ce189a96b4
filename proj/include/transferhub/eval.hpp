#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace transferhub {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double nrmse(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
    if (y.size() == 0) throw std::invalid_argument("empty input");
    if (y.size() != y_hat.size()) throw std::invalid_argument("length mismatch");
    return std::sqrt((y - y_hat).squaredNorm() / static_cast<double>(y.size()));
}

//! Closed-form CRPS of a Gaussian forecast: sigma*[z(2*Phi(z)-1) + 2*phi(z) - 1/sqrt(pi)].
inline double crps_gaussian(double mu, double sigma, double y) {
    if (!(sigma > 0)) throw std::invalid_argument("sigma must be > 0");
    const double z = (y - mu) / sigma;
    return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(M_PI));
}

//! Trapezoid integration of (F(x) - 1{x>=y})^2, split exactly at y so each
//! branch integrates a smooth function. cdf monotonicity is verified on the
//! sampled grid.
inline double crps_numeric(const std::function<double(double)>& cdf, double y, double lo, double hi,
                           int n_cells = 16384) {
    if (!(lo < hi)) throw std::invalid_argument("bad integration range");
    if (n_cells < 4) throw std::invalid_argument("too few cells");
    const double clamped_y = std::min(hi, std::max(lo, y));

    double last = -1e-12;
    auto eval = [&](double x) {
        const double f = cdf(x);
        if (f < last - 1e-12) throw std::invalid_argument("cdf samples are not monotone");
        last = std::max(last, f);
        return f;
    };

    auto branch = [&](double a, double b, bool upper) {
        if (!(b > a)) return 0.0;
        const int n = std::max(2, static_cast<int>(std::llround(n_cells * (b - a) / (hi - lo))));
        const double h = (b - a) / n;
        double acc = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double f = eval(a + h * static_cast<double>(i));
            const double g = upper ? (f - 1.0) * (f - 1.0) : f * f;
            acc += (i == 0 || i == n) ? 0.5 * g : g;
        }
        return acc * h;
    };

    const double left = branch(lo, clamped_y, false);
    last = -1e-12;  // the two branches are sampled independently
    const double right = branch(clamped_y, hi, true);
    return left + right;
}

//! Positive values favor b; "values below zero indicate an improvement" of a.
inline double skill(double nrmse_a, double nrmse_b) {
    if (nrmse_a < 0 || nrmse_b < 0) throw std::invalid_argument("nrmse must be >= 0");
    return nrmse_a - nrmse_b;
}

//! Ascending ranks with average ranks for exact ties.
inline std::vector<double> rank_ascending(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

//! Rows are parks, columns methods; returns the per-method mean rank.
inline std::vector<double> rank_table(const std::vector<std::vector<double>>& errors) {
    if (errors.empty()) throw std::invalid_argument("empty error table");
    const std::size_t m = errors.front().size();
    std::vector<double> mean_rank(m, 0.0);
    for (const auto& row : errors) {
        if (row.size() != m) throw std::invalid_argument("ragged error table");
        for (const double v : row)
            if (std::isnan(v)) throw std::invalid_argument("NaN in error table");
        const std::vector<double> r = rank_ascending(row);
        for (std::size_t j = 0; j < m; ++j) mean_rank[j] += r[j];
    }
    for (double& v : mean_rank) v /= static_cast<double>(errors.size());
    return mean_rank;
}

enum class Verdict { better, worse, no_diff };

inline std::string verdict_marker(Verdict v) {
    switch (v) {
        case Verdict::better: return "v";
        case Verdict::worse: return "^";
        default: return "o";
    }
}

struct WilcoxonResult {
    double p = 1.0;
    Verdict verdict = Verdict::no_diff;
    std::size_t n = 0;       // pairs after dropping zero differences
    double w_plus = 0.0;
};

//! Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
//! dropped, average ranks for ties; exact enumeration of all sign
//! assignments for n <= 20, normal approximation with tie correction and
//! continuity correction beyond. Verdict: a better/worse than b by the sign
//! of the median difference when p < alpha.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                           double alpha = 0.01) {
    if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);

    WilcoxonResult res;
    res.n = d.size();
    if (d.empty()) return res;  // all differences zero: p = 1, no_diff
    if (d.size() < 5) throw std::invalid_argument("need >= 5 nonzero differences, have " +
                                                  std::to_string(d.size()));

    std::vector<double> abs_d(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) abs_d[i] = std::abs(d[i]);
    const std::vector<double> ranks = rank_ascending(abs_d);

    double w_plus = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) w_plus += ranks[i];
    res.w_plus = w_plus;

    const std::size_t n = d.size();
    const double mu = std::accumulate(ranks.begin(), ranks.end(), 0.0) / 2.0;  // n(n+1)/4
    const double dev = std::abs(w_plus - mu);

    if (n <= 20) {
        // Exact null: all 2^n sign assignments of the observed ranks.
        const std::uint64_t total = 1ULL << n;
        std::uint64_t hits = 0;
        for (std::uint64_t mask = 0; mask < total; ++mask) {
            double w = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (1ULL << i)) w += ranks[i];
            if (std::abs(w - mu) >= dev - 1e-12) ++hits;
        }
        res.p = static_cast<double>(hits) / static_cast<double>(total);
    } else {
        double sigma2 = 0.0;
        for (const double r : ranks) sigma2 += r * r;  // sum r^2 = n(n+1)(2n+1)/24*4, ties absorbed
        sigma2 /= 4.0;
        const double cc = std::min(0.5, dev);  // continuity correction toward the mean
        const double z = (dev - cc) / std::sqrt(sigma2);
        res.p = std::min(1.0, 2.0 * normal_cdf(-z));
    }

    if (res.p < alpha) {
        std::vector<double> sorted = d;
        std::sort(sorted.begin(), sorted.end());
        const double med = sorted.size() % 2 == 1
                               ? sorted[sorted.size() / 2]
                               : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
        if (med < 0)
            res.verdict = Verdict::better;
        else if (med > 0)
            res.verdict = Verdict::worse;
    }
    return res;
}

}  // namespace transferhub
