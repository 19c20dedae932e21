#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace plr::glm {

struct DesignMatrix {
    Eigen::MatrixXd X;  // K instances x d features
    std::string source; // "embedding" | "logits" | "pca-scores"
};

struct SolverDiagnostics {
    int iterations = 0;
    double final_grad_norm = 0.0;
    std::vector<double> objective_trace; // one entry per accepted iterate
};

// Penalised (multinomial) logistic regression model. Scores are per-class
// linear functions of the standardised features; the binary case stores
// class 0 as the zero reference so that p(class 1) is the Eq.-style sigmoid.
struct FittedModel {
    int n_classes = 2;
    Eigen::VectorXd intercepts; // length C
    Eigen::MatrixXd coefs;      // C x d, in the standardised basis
    double lambda = 0.0;
    bool standardized = false;
    Eigen::VectorXd feat_mean;  // length d (zeros when standardized == false)
    Eigen::VectorXd feat_scale; // length d (ones when standardized == false)
    std::string source;
    SolverDiagnostics diag;

    Eigen::Index dim() const { return coefs.cols(); }

    // (a0, a) for class c in the raw (unstandardised) feature basis.
    std::pair<double, Eigen::VectorXd> raw_class_params(int c) const;
    // Binary convenience: raw (a0, a) of the class-1 log-odds.
    std::pair<double, Eigen::VectorXd> raw_binary_params() const;

    nlohmann::json to_json(const std::vector<std::string>& classes = {}) const;
    static FittedModel from_json(const nlohmann::json& j);
};

// Penalised negative log-likelihood: -sum_k log p_{y_k} + lambda * sum_c ||a_c||^2
// with the binary case parameterised as (a0, a) per Eq.-form sigmoid and the
// multiclass case as a symmetric softmax. `params` layout: binary ->
// [a0, a_1..a_d]; multiclass -> [a0_1..a0_C, a_1_1..a_1_d, ..., a_C_d].
double penalized_objective(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes,
                           double lambda, const Eigen::VectorXd& params);
Eigen::VectorXd penalized_gradient(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                   int n_classes, double lambda, const Eigen::VectorXd& params);

struct FitOptions {
    int path_length = 100;
    std::optional<double> lambda_override;
    bool standardize = true;
    int max_iterations = 200;
    double tol_rel_objective = 1e-8;
};

// Ridge fit at the smallest lambda of a geometric grid anchored at the L1
// lambda_max (or at the override). Intercept unpenalised.
FittedModel fit_ridge_path(const DesignMatrix& X, const std::vector<int>& y,
                           const FitOptions& opts = {});

// The lambda grid fit_ridge_path would use.
std::vector<double> lambda_grid(const DesignMatrix& X, const std::vector<int>& y, int path_length);

// One ridge fit at a fixed lambda (building block for path sweeps).
FittedModel fit_ridge_at(const DesignMatrix& X, const std::vector<int>& y, double lambda,
                         const FitOptions& opts = {});

struct LassoSelection {
    std::set<Eigen::Index> support;
    FittedModel penalized; // the L1 path point the support was taken from
    double lambda = 0.0;
};

// Walks an L1 path from lambda_max downward; returns the support of the last
// path point with at most `budget` nonzero coefficients. Binary only.
LassoSelection fit_lasso_select(const DesignMatrix& X, const std::vector<int>& y, int budget);

// Maximum-likelihood logistic fit restricted to `support` (lambda = 0, no
// standardisation). Throws on detected perfect separation.
FittedModel refit_unpenalized(const DesignMatrix& X, const std::vector<int>& y,
                              const std::set<Eigen::Index>& support);

Eigen::VectorXd predict_proba(const FittedModel& m, const Eigen::VectorXd& x);
int predict(const FittedModel& m, const Eigen::VectorXd& x);

// Mean binomial/multinomial deviance of the model on (X, y):
// -2/K * sum log p_{y_k}.
double deviance(const FittedModel& m, const Eigen::MatrixXd& X, const std::vector<int>& y);

// Signed Euclidean distance (a0 + a.x)/||a|| to the class-c surface;
// positive on the class-c side. Multiclass uses the one-vs-rest contrast
// a_c - mean of the other classes' coefficient rows.
double distance_to_surface(const FittedModel& m, const Eigen::VectorXd& x, int c);

struct CandidateLogitMap {
    std::map<std::string, double> logits;
};

// Zero-shot classification restricted to candidate tokens: class whose token
// has the maximal logit, ties toward the lowest class index.
int classify_restricted_argmax(const std::map<std::string, double>& logits,
                               const std::vector<std::string>& class_tokens);

struct DecompositionReport {
    double total = 0.0; // a0 + a.e
    double term_next_token = 0.0; // l+ - l-
    double term_in_plane = 0.0;   // a_pm + (alpha+ - 1) l+ + (alpha- + 1) l-
    double term_out_of_plane = 0.0;
    double a_pm = 0.0;
    double alpha_plus = 0.0;
    double alpha_minus = 0.0;
};

// Log-odds decomposition of a binary embedding-space model into the
// next-token part, the in-plane correction, and the out-of-plane remainder.
DecompositionReport decompose_log_odds(const FittedModel& m, const Eigen::VectorXd& e,
                                       const Eigen::VectorXd& head_plus,
                                       const Eigen::VectorXd& head_minus, double logit_plus,
                                       double logit_minus);

} // namespace plr::glm
