#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace plr::decomp {

// Principal component analysis of a row-instance matrix, with optional
// score normalisation (training scores scaled to unit standard deviation).
struct PCAModel {
    Eigen::VectorXd mean;              // d
    Eigen::MatrixXd components;        // k x d, rows orthonormal
    Eigen::VectorXd singular_values;   // k, descending
    Eigen::VectorXd explained_variance_ratio; // k, against total data variance
    Eigen::VectorXd score_std;         // k, std of training scores per component
    bool normalize = false;

    Eigen::Index n_components() const { return components.rows(); }

    nlohmann::json to_json() const;
    static PCAModel from_json(const nlohmann::json& j);
};

// Centered thin-SVD PCA. Sign convention: the largest-magnitude entry of
// each component is positive. k must satisfy 1 <= k <= min(rows-1, d).
PCAModel fit_pca(const Eigen::MatrixXd& X, Eigen::Index k, bool normalize = false);

// scores = components . (x - mean), divided per-component by the training
// score std when the normalise flag is set.
Eigen::VectorXd transform(const PCAModel& m, const Eigen::VectorXd& x);

// Row-wise transform convenience.
Eigen::MatrixXd transform_rows(const PCAModel& m, const Eigen::MatrixXd& X);

} // namespace plr::decomp
