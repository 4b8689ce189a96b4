#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "transferhub/common.hpp"

namespace transferhub {

//! Fully connected net with relu hidden layers and a linear scalar output.
//! The last two layers are always 3 -> 1; the width-3 activations double as
//! the transfer feature space.
struct Mlp {
    std::vector<Eigen::MatrixXd> W;  // W[l]: n_out x n_in
    std::vector<Eigen::VectorXd> b;

    std::size_t n_layers() const { return W.size(); }
    Eigen::Index in_dim() const { return W.front().cols(); }

    std::vector<int> layer_sizes() const {
        std::vector<int> s{static_cast<int>(in_dim())};
        for (const auto& w : W) s.push_back(static_cast<int>(w.rows()));
        return s;
    }
};

//! Layer sizes [D, k*D, halving while >= 11, 3, 1].
inline std::vector<int> mlp_architecture(int input_dim, int widen_k) {
    if (input_dim < 1 || widen_k < 1) throw std::invalid_argument("input_dim and widen_k must be >= 1");
    std::vector<int> sizes{input_dim};
    int h = widen_k * input_dim;
    sizes.push_back(h);
    while (h / 2 >= 11) {
        h /= 2;
        sizes.push_back(h);
    }
    sizes.push_back(3);
    sizes.push_back(1);
    return sizes;
}

//! Scaled-uniform init: weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases zero.
inline Mlp mlp_init(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw std::invalid_argument("need at least input and output layer");
    Mlp net;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        const double lim = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd w(fan_out, fan_in);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-lim, lim);
        net.W.push_back(std::move(w));
        net.b.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return net;
}

inline Mlp mlp_init(int input_dim, int widen_k, std::uint64_t seed) {
    return mlp_init(mlp_architecture(input_dim, widen_k), seed);
}

struct MlpForward {
    Eigen::VectorXd predictions;  // length N
    Eigen::MatrixXd features;     // N x penultimate width
};

//! Forward pass returning predictions and penultimate activations.
inline MlpForward mlp_forward(const Mlp& net, const Eigen::MatrixXd& X) {
    if (X.cols() != net.in_dim()) throw std::invalid_argument("input width does not match network");
    Eigen::MatrixXd a = X;
    MlpForward out;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        Eigen::MatrixXd z = a * net.W[l].transpose();
        z.rowwise() += net.b[l].transpose();
        if (l + 1 < net.n_layers()) {
            a = z.cwiseMax(0.0);
            if (l + 2 == net.n_layers()) out.features = a;
        } else {
            out.predictions = z.col(0);
        }
    }
    if (net.n_layers() == 1) out.features = X;  // single linear layer: inputs are the features
    return out;
}

enum class PenaltyKind { none, wd, wds, bt };

//! Training loss: mean over the batch of 0.5*(y-f)^2, plus lambda times the
//! selected penalty. The BT consensus (mean source-head prediction per row)
//! is precomputed and aligned with the full training matrix.
struct LossSpec {
    PenaltyKind kind = PenaltyKind::none;
    double lambda = 0.0;
    std::vector<Eigen::MatrixXd> W0;  // WDS anchor
    std::vector<Eigen::VectorXd> b0;
    Eigen::VectorXd bt_consensus;
};

inline Eigen::Index mlp_param_count(const Mlp& net) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < net.n_layers(); ++l) n += net.W[l].size() + net.b[l].size();
    return n;
}

inline Eigen::VectorXd mlp_flatten(const Mlp& net) {
    Eigen::VectorXd v(mlp_param_count(net));
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        for (Eigen::Index r = 0; r < net.W[l].rows(); ++r)
            for (Eigen::Index c = 0; c < net.W[l].cols(); ++c) v(at++) = net.W[l](r, c);
        for (Eigen::Index r = 0; r < net.b[l].size(); ++r) v(at++) = net.b[l](r);
    }
    return v;
}

inline void mlp_unflatten(Mlp& net, const Eigen::VectorXd& v) {
    if (v.size() != mlp_param_count(net)) throw std::invalid_argument("parameter vector size mismatch");
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        for (Eigen::Index r = 0; r < net.W[l].rows(); ++r)
            for (Eigen::Index c = 0; c < net.W[l].cols(); ++c) net.W[l](r, c) = v(at++);
        for (Eigen::Index r = 0; r < net.b[l].size(); ++r) net.b[l](r) = v(at++);
    }
}

namespace detail {
inline void check_loss_spec(const Mlp& net, const Eigen::MatrixXd& X, const LossSpec& spec) {
    if (spec.kind == PenaltyKind::wds) {
        if (spec.W0.size() != net.n_layers()) throw std::invalid_argument("WDS anchor layer count mismatch");
        for (std::size_t l = 0; l < net.n_layers(); ++l)
            if (spec.W0[l].rows() != net.W[l].rows() || spec.W0[l].cols() != net.W[l].cols() ||
                spec.b0[l].size() != net.b[l].size())
                throw std::invalid_argument("WDS anchor shape mismatch");
    }
    if (spec.kind == PenaltyKind::bt && spec.bt_consensus.size() < X.rows())
        throw std::invalid_argument("BT consensus shorter than training data");
}
}  // namespace detail

struct MlpLossGrad {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
};

//! Full loss and analytic gradient via backpropagation. `rows` selects the
//! batch (indices into X / y / bt_consensus); empty means all rows.
inline MlpLossGrad mlp_loss_grad(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const LossSpec& spec, const std::vector<Eigen::Index>& rows = {}) {
    if (X.rows() != y.size()) throw std::invalid_argument("X rows and y length differ");
    detail::check_loss_spec(net, X, spec);

    Eigen::MatrixXd Xb;
    Eigen::VectorXd yb, cb;
    if (rows.empty()) {
        Xb = X;
        yb = y;
        if (spec.kind == PenaltyKind::bt) cb = spec.bt_consensus.head(X.rows());
    } else {
        Xb.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
        yb.resize(static_cast<Eigen::Index>(rows.size()));
        if (spec.kind == PenaltyKind::bt) cb.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Xb.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
            yb(static_cast<Eigen::Index>(i)) = y(rows[i]);
            if (spec.kind == PenaltyKind::bt) cb(static_cast<Eigen::Index>(i)) = spec.bt_consensus(rows[i]);
        }
    }
    const auto B = static_cast<double>(Xb.rows());
    if (Xb.rows() == 0) throw std::invalid_argument("empty batch");

    const std::size_t L = net.n_layers();
    std::vector<Eigen::MatrixXd> act(L + 1);  // act[0] = input
    std::vector<Eigen::MatrixXd> pre(L);
    act[0] = Xb;
    for (std::size_t l = 0; l < L; ++l) {
        pre[l] = act[l] * net.W[l].transpose();
        pre[l].rowwise() += net.b[l].transpose();
        act[l + 1] = (l + 1 < L) ? pre[l].cwiseMax(0.0).eval() : pre[l];
    }
    const Eigen::VectorXd f = act[L].col(0);

    MlpLossGrad out;
    out.loss = 0.5 * (yb - f).squaredNorm() / B;
    Eigen::VectorXd df = (f - yb) / B;
    if (spec.kind == PenaltyKind::bt) {
        out.loss += spec.lambda * (cb - f).squaredNorm() / B;
        df += spec.lambda * 2.0 * (f - cb) / B;
    }

    out.dW.resize(L);
    out.db.resize(L);
    Eigen::MatrixXd delta = df;  // N x layer width, walking backwards
    for (std::size_t l = L; l-- > 0;) {
        out.dW[l] = delta.transpose() * act[l];
        out.db[l] = delta.colwise().sum().transpose();
        if (l > 0) {
            const Eigen::MatrixXd da = delta * net.W[l];
            delta = ((pre[l - 1].array() > 0.0).cast<double>() * da.array()).matrix();
        }
    }

    if (spec.kind == PenaltyKind::wd) {
        for (std::size_t l = 0; l < L; ++l) {
            out.loss += 0.5 * spec.lambda * (net.W[l].squaredNorm() + net.b[l].squaredNorm());
            out.dW[l] += spec.lambda * net.W[l];
            out.db[l] += spec.lambda * net.b[l];
        }
    } else if (spec.kind == PenaltyKind::wds) {
        for (std::size_t l = 0; l < L; ++l) {
            out.loss += 0.5 * spec.lambda *
                        ((net.W[l] - spec.W0[l]).squaredNorm() + (net.b[l] - spec.b0[l]).squaredNorm());
            out.dW[l] += spec.lambda * (net.W[l] - spec.W0[l]);
            out.db[l] += spec.lambda * (net.b[l] - spec.b0[l]);
        }
    }
    return out;
}

inline double mlp_loss(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const LossSpec& spec, const std::vector<Eigen::Index>& rows = {}) {
    return mlp_loss_grad(net, X, y, spec, rows).loss;
}

inline Eigen::VectorXd mlp_grad_flat(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const LossSpec& spec, const std::vector<Eigen::Index>& rows = {}) {
    const MlpLossGrad g = mlp_loss_grad(net, X, y, spec, rows);
    Eigen::VectorXd v(mlp_param_count(net));
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        for (Eigen::Index r = 0; r < g.dW[l].rows(); ++r)
            for (Eigen::Index c = 0; c < g.dW[l].cols(); ++c) v(at++) = g.dW[l](r, c);
        for (Eigen::Index r = 0; r < g.db[l].size(); ++r) v(at++) = g.db[l](r);
    }
    return v;
}

//! Shuffled mini-batch SGD without momentum. Throws on nonfinite loss so
//! grid searches can catch divergent candidates.
inline Mlp sgd_train(const Mlp& start, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     const LossSpec& spec, double lr, int n_epochs, Eigen::Index batch_size,
                     std::uint64_t seed) {
    if (!(lr >= 0)) throw std::invalid_argument("lr must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (X.rows() < 1) throw std::invalid_argument("empty training data");
    detail::check_loss_spec(start, X, spec);

    Mlp net = start;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(seed);
    for (int epoch = 0; epoch < n_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
            const std::vector<Eigen::Index> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                                  order.begin() + static_cast<std::ptrdiff_t>(end));
            const MlpLossGrad g = mlp_loss_grad(net, X, y, spec, batch);
            if (!std::isfinite(g.loss))
                throw std::runtime_error("nonfinite loss at epoch " + std::to_string(epoch) +
                                         ", batch offset " + std::to_string(at) + " (lr=" + std::to_string(lr) +
                                         ", lambda=" + std::to_string(spec.lambda) + ")");
            for (std::size_t l = 0; l < net.n_layers(); ++l) {
                net.W[l] -= lr * g.dW[l];
                net.b[l] -= lr * g.db[l];
            }
        }
    }
    return net;
}

}  // namespace transferhub
