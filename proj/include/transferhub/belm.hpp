#pragma once

#include <Eigen/Dense>

#include <cstdint>

#include "transferhub/blr.hpp"
#include "transferhub/feature_extractor.hpp"

namespace transferhub {

//! Bayesian extreme learning machine: frozen random features with an exact
//! BLR head, hyperpriors set by empirical Bayes.
struct BelmSpec {
    Eigen::Index hidden = 64;  // per activation branch, [10, 1000]
    Activation activation = Activation::relu_and_sigmoid;
    bool include_raw = true;
    bool standardize = true;
};

struct Belm {
    RandomFeatures features;
    GaussianLinear head;

    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const { return features.transform(X); }

    PredictiveGaussian predict(const Eigen::MatrixXd& X) const {
        return blr_predict(head, features.transform(X));
    }
};

inline Belm belm_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BelmSpec& spec,
                     std::uint64_t seed) {
    Belm b;
    b.features = random_features(X.cols(), spec.hidden, spec.activation, spec.include_raw, seed);
    if (spec.standardize) b.features.standardizer = Standardizer::fit(X);
    const Eigen::MatrixXd phi = b.features.transform(X);
    b.head = empirical_bayes(phi, y).model;
    return b;
}

}  // namespace transferhub
