#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace transferhub {

constexpr double kAlphaMax = 1e6;   // clamp for degenerate (no-signal) targets
constexpr double kBetaMax = 1e12;   // clamp for interpolating (noise-free) fits

//! Gaussian posterior over linear weights, stored in precision form so the
//! online update is an addition. Immutable by convention: update() returns a
//! new value.
struct GaussianLinear {
    double alpha = 1.0;  // prior precision
    double beta = 1.0;   // noise precision
    Eigen::VectorXd m;       // posterior mean, length D
    Eigen::MatrixXd S_inv;   // posterior precision, D x D
    long n_obs = 0;
    bool degenerate = false;    // empirical Bayes hit the alpha clamp
    bool beta_skipped = false;  // empirical Bayes could not update beta (N <= gamma)

    Eigen::Index dims() const { return m.size(); }
};

struct PredictiveGaussian {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma2;  // >= 1/beta everywhere
};

namespace detail {
inline void check_finite(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (!X.allFinite() || !y.allFinite()) throw std::invalid_argument("nonfinite values in regression data");
    if (X.rows() != y.size()) throw std::invalid_argument("X rows and y length differ");
}
}  // namespace detail

inline GaussianLinear blr_prior(Eigen::Index dims, double alpha, double beta) {
    if (!(alpha > 0) || !(beta > 0)) throw std::invalid_argument("alpha and beta must be > 0");
    GaussianLinear g;
    g.alpha = alpha;
    g.beta = beta;
    g.m = Eigen::VectorXd::Zero(dims);
    g.S_inv = alpha * Eigen::MatrixXd::Identity(dims, dims);
    g.n_obs = 0;
    return g;
}

inline GaussianLinear blr_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              double alpha, double beta) {
    detail::check_finite(X, y);
    GaussianLinear g = blr_prior(X.cols(), alpha, beta);
    if (X.rows() == 0) return g;
    g.S_inv += beta * (X.transpose() * X);
    g.m = g.S_inv.llt().solve(beta * (X.transpose() * y));
    g.n_obs = static_cast<long>(X.rows());
    return g;
}

inline GaussianLinear blr_update(const GaussianLinear& model, const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& y) {
    detail::check_finite(X, y);
    if (X.cols() != model.dims()) throw std::invalid_argument("feature width does not match model");
    if (X.rows() == 0) return model;
    GaussianLinear g = model;
    const Eigen::VectorXd rhs = model.S_inv * model.m + model.beta * (X.transpose() * y);
    g.S_inv = model.S_inv + model.beta * (X.transpose() * X);
    g.m = g.S_inv.llt().solve(rhs);
    g.n_obs = model.n_obs + static_cast<long>(X.rows());
    return g;
}

inline PredictiveGaussian blr_predict(const GaussianLinear& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.dims()) throw std::invalid_argument("feature width does not match model");
    PredictiveGaussian p;
    p.mu = X * model.m;
    const auto llt = model.S_inv.llt();
    const Eigen::MatrixXd V = llt.solve(X.transpose());  // S * X^T
    p.sigma2.resize(X.rows());
    const double floor = 1.0 / model.beta;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        p.sigma2(i) = std::max(floor, floor + X.row(i).dot(V.col(i)));
    return p;
}

//! Log marginal likelihood ln p(y | X, alpha, beta).
inline double log_evidence(double alpha, double beta, const Eigen::MatrixXd& X,
                           const Eigen::VectorXd& y) {
    if (!(alpha > 0) || !(beta > 0)) throw std::invalid_argument("alpha and beta must be > 0");
    detail::check_finite(X, y);
    const auto N = static_cast<double>(X.rows());
    const auto D = static_cast<double>(X.cols());
    if (X.rows() == 0) return 0.0;

    const GaussianLinear g = blr_fit(X, y, alpha, beta);
    const double e_m = 0.5 * beta * (y - X * g.m).squaredNorm() + 0.5 * alpha * g.m.squaredNorm();
    const Eigen::MatrixXd L = g.S_inv.llt().matrixL();
    const double log_det_S_inv = 2.0 * L.diagonal().array().log().sum();
    return 0.5 * D * std::log(alpha) + 0.5 * N * std::log(beta) - e_m - 0.5 * log_det_S_inv -
           0.5 * N * std::log(2.0 * M_PI);
}

struct EmpiricalBayesResult {
    double alpha = 1.0;
    double beta = 1.0;
    GaussianLinear model;
    double gamma = 0.0;  // effective number of parameters
    int iterations = 0;
    bool converged = false;
    bool degenerate = false;    // ||m||^2 vanished; alpha clamped at kAlphaMax
    bool beta_skipped = false;  // N <= gamma; beta left untouched
};

//! Fixed-point optimization of (alpha, beta): gamma = sum_i lambda_i/(alpha+lambda_i)
//! over eigenvalues lambda_i of beta*X^T X; alpha <- gamma/(m^T m);
//! 1/beta <- ||y - X m||^2 / (N - gamma). Runs in the eigenbasis of X^T X so
//! each sweep is O(D).
inline EmpiricalBayesResult empirical_bayes(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                            double alpha0 = 1.0, double beta0 = 1.0,
                                            double tol = 1e-4, int max_iter = 200) {
    if (!(alpha0 > 0) || !(beta0 > 0)) throw std::invalid_argument("alpha0 and beta0 must be > 0");
    detail::check_finite(X, y);
    const auto N = static_cast<double>(X.rows());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(X.transpose() * X);
    const Eigen::VectorXd e = eig.eigenvalues().cwiseMax(0.0);
    const Eigen::VectorXd c = eig.eigenvectors().transpose() * (X.transpose() * y);
    const double yty = y.squaredNorm();

    EmpiricalBayesResult r;
    r.alpha = alpha0;
    r.beta = beta0;
    for (int it = 0; it < max_iter; ++it) {
        r.iterations = it + 1;
        const Eigen::ArrayXd w = r.beta * c.array() / (r.alpha + r.beta * e.array());
        const double mtm = w.matrix().squaredNorm();
        const double xmtxm = (e.array() * w.square()).sum();
        const double residual = std::max(0.0, yty - 2.0 * w.matrix().dot(c) + xmtxm);
        r.gamma = (r.beta * e.array() / (r.alpha + r.beta * e.array())).sum();

        if (mtm < 1e-12) {
            r.alpha = kAlphaMax;
            r.degenerate = true;
            break;
        }
        const double alpha_new = std::min(kAlphaMax, r.gamma / mtm);
        double beta_new = r.beta;
        if (N > r.gamma) {
            const double var = residual / (N - r.gamma);
            beta_new = var > 1.0 / kBetaMax ? 1.0 / var : kBetaMax;
        } else {
            r.beta_skipped = true;
        }

        const double da = std::abs(alpha_new - r.alpha) / std::max(r.alpha, 1e-300);
        const double db = std::abs(beta_new - r.beta) / std::max(r.beta, 1e-300);
        if (da < tol && db < tol) {
            // The very next sweep would move both by < tol relative, so the
            // current iterate is returned as the stationary point.
            r.converged = true;
            break;
        }
        r.alpha = alpha_new;
        r.beta = beta_new;
        if (alpha_new == kAlphaMax) {
            r.degenerate = true;
            break;
        }
    }

    r.model = blr_fit(X, y, r.alpha, r.beta);
    r.model.degenerate = r.degenerate;
    r.model.beta_skipped = r.beta_skipped;
    return r;
}

}  // namespace transferhub
