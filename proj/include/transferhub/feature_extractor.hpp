#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <variant>

#include "transferhub/common.hpp"
#include "transferhub/mlp.hpp"

namespace transferhub {

//! Column-wise standardization fitted once on source data, then frozen.
//! Default state is the identity so hand-built extractors stay transparent.
struct Standardizer {
    Eigen::VectorXd mean;   // empty => identity
    Eigen::VectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& X) {
        Standardizer s;
        s.mean = X.colwise().mean();
        s.scale.resize(X.cols());
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
            const double var = (X.col(c).array() - s.mean(c)).square().sum() /
                               std::max<double>(1.0, static_cast<double>(X.rows()));
            const double sd = std::sqrt(var);
            s.scale(c) = sd > 1e-12 ? sd : 1.0;
        }
        return s;
    }

    bool is_identity() const { return mean.size() == 0; }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
        if (is_identity()) return X;
        if (X.cols() != mean.size()) throw std::invalid_argument("standardizer width mismatch");
        return (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    }
};

enum class Activation { relu, sigmoid, relu_and_sigmoid };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        default: return "relu_and_sigmoid";
    }
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "relu_and_sigmoid") return Activation::relu_and_sigmoid;
    throw std::invalid_argument("unknown activation: " + name);
}

//! Random projection features (the ELM front end): activation(X*W + b),
//! both activations concatenated for relu_and_sigmoid, optionally followed
//! by the (standardized) raw inputs.
struct RandomFeatures {
    Standardizer standardizer;
    Eigen::MatrixXd W;      // D x H
    Eigen::RowVectorXd b;   // 1 x H
    Activation activation = Activation::relu_and_sigmoid;
    bool include_raw = false;

    Eigen::Index out_dim() const {
        const Eigen::Index h = W.cols() * (activation == Activation::relu_and_sigmoid ? 2 : 1);
        return h + (include_raw ? W.rows() : 0);
    }

    Eigen::MatrixXd transform(const Eigen::MatrixXd& raw) const {
        const Eigen::MatrixXd X = standardizer.apply(raw);
        if (X.cols() != W.rows()) throw std::invalid_argument("input width does not match projection");
        Eigen::MatrixXd pre = X * W;
        pre.rowwise() += b;
        Eigen::MatrixXd phi(X.rows(), out_dim());
        Eigen::Index at = 0;
        if (activation == Activation::relu || activation == Activation::relu_and_sigmoid) {
            phi.middleCols(at, pre.cols()) = pre.cwiseMax(0.0);
            at += pre.cols();
        }
        if (activation == Activation::sigmoid || activation == Activation::relu_and_sigmoid) {
            phi.middleCols(at, pre.cols()) = (1.0 / (1.0 + (-pre.array()).exp())).matrix();
            at += pre.cols();
        }
        if (include_raw) phi.middleCols(at, X.cols()) = X;
        return phi;
    }
};

//! W and b drawn standard normal from the seed (W row-major, then b).
inline RandomFeatures random_features(Eigen::Index in_dim, Eigen::Index hidden, Activation act,
                                      bool include_raw, std::uint64_t seed) {
    if (hidden < 10 || hidden > 1000)
        throw std::invalid_argument("hidden features per branch must be in [10, 1000], got " +
                                    std::to_string(hidden));
    RandomFeatures rf;
    rf.activation = act;
    rf.include_raw = include_raw;
    rf.W.resize(in_dim, hidden);
    rf.b.resize(hidden);
    Rng rng(seed);
    for (Eigen::Index r = 0; r < in_dim; ++r)
        for (Eigen::Index c = 0; c < hidden; ++c) rf.W(r, c) = rng.normal();
    for (Eigen::Index c = 0; c < hidden; ++c) rf.b(c) = rng.normal();
    return rf;
}

//! Penultimate activations of a trained net as a 3-wide feature map.
struct MlpFeatures {
    Standardizer standardizer;
    Mlp net;

    Eigen::Index out_dim() const { return net.W[net.n_layers() - 1].cols(); }

    Eigen::MatrixXd transform(const Eigen::MatrixXd& raw) const {
        return mlp_forward(net, standardizer.apply(raw)).features;
    }
};

//! Raw passthrough, for tests and hand-built pipelines.
struct IdentityFeatures {
    Eigen::Index dims = 0;
    Eigen::Index out_dim() const { return dims; }
    Eigen::MatrixXd transform(const Eigen::MatrixXd& raw) const { return raw; }
};

using Extractor = std::variant<IdentityFeatures, RandomFeatures, MlpFeatures>;

inline Eigen::MatrixXd extract(const Extractor& e, const Eigen::MatrixXd& X) {
    return std::visit([&](const auto& v) { return v.transform(X); }, e);
}

inline Eigen::Index extract_dim(const Extractor& e) {
    return std::visit([](const auto& v) { return v.out_dim(); }, e);
}

}  // namespace transferhub
