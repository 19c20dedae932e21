#include "plr/glm.hpp"

#include "plr/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace plr::glm {

using nlohmann::json;

namespace {

void check_inputs(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes) {
    if (X.rows() < 2) throw Error("glm: need at least 2 instances");
    if (size_t(X.rows()) != y.size()) throw Error("glm: label count does not match row count");
    if (!X.allFinite()) throw Error("glm: non-finite feature value");
    std::vector<int> counts(size_t(n_classes), 0);
    for (int v : y) {
        if (v < 0 || v >= n_classes) throw Error("glm: label index out of range");
        ++counts[size_t(v)];
    }
    for (int c = 0; c < n_classes; ++c)
        if (counts[size_t(c)] == 0)
            throw Error("glm: class " + std::to_string(c) + " absent from training labels");
}

int infer_classes(const std::vector<int>& y) {
    int m = 0;
    for (int v : y) m = std::max(m, v + 1);
    return std::max(m, 2);
}

struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
};

Standardization standardize(Eigen::MatrixXd& X) {
    Standardization s;
    s.mean = X.colwise().mean();
    X.rowwise() -= s.mean.transpose();
    s.scale = (X.array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
        if (s.scale[j] <= 0.0) s.scale[j] = 1.0;
    X.array().rowwise() /= s.scale.transpose().array();
    return s;
}

double logsumexp_row(const Eigen::RowVectorXd& v) {
    double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

// log(1 + exp(s)) without overflow
double log1pexp(double s) { return s > 30.0 ? s : std::log1p(std::exp(s)); }

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Intercept basis for the sum-to-zero identification: a0 = M u with
// M in R^{C x (C-1)}, columns e_j - e_{C-1}.
Eigen::MatrixXd intercept_basis(int n_classes) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_classes, n_classes - 1);
    for (int j = 0; j < n_classes - 1; ++j) {
        M(j, j) = 1.0;
        M(n_classes - 1, j) = -1.0;
    }
    return M;
}

struct NewtonResult {
    Eigen::VectorXd intercepts; // length C (binary: [0, a0])
    Eigen::MatrixXd coefs;      // C x r   (binary: row 0 zero, row 1 = a)
    SolverDiagnostics diag;
};

// Binary Newton with objective-halving line search on
// J = sum log(1+exp(s)) - y s + lambda ||b||^2, s = a0 + Z b.
NewtonResult newton_binary(const Eigen::MatrixXd& Z, const std::vector<int>& y, double lambda,
                           const FitOptions& opts, double coef_norm_cap) {
    const Eigen::Index K = Z.rows(), r = Z.cols();
    double a0 = 0.0;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
    Eigen::VectorXd yv(K);
    for (Eigen::Index k = 0; k < K; ++k) yv[k] = double(y[size_t(k)]);

    auto objective = [&](double a0v, const Eigen::VectorXd& bv) {
        Eigen::VectorXd s = (Z * bv).array() + a0v;
        double obj = lambda * bv.squaredNorm();
        for (Eigen::Index k = 0; k < K; ++k) obj += log1pexp(s[k]) - yv[k] * s[k];
        return obj;
    };

    NewtonResult out;
    out.diag.objective_trace.push_back(objective(a0, b));
    double init_grad_norm = -1.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        Eigen::VectorXd s = (Z * b).array() + a0;
        Eigen::VectorXd p(K), w(K);
        for (Eigen::Index k = 0; k < K; ++k) {
            p[k] = sigmoid(s[k]);
            w[k] = std::max(p[k] * (1.0 - p[k]), 1e-12);
        }
        Eigen::VectorXd resid = p - yv;
        Eigen::VectorXd g(r + 1);
        g[0] = resid.sum();
        g.tail(r) = Z.transpose() * resid + 2.0 * lambda * b;
        double gn = g.norm();
        out.diag.final_grad_norm = gn;
        if (init_grad_norm < 0.0) init_grad_norm = gn;
        if (gn <= 1e-8 * std::max(1.0, init_grad_norm)) break;

        Eigen::MatrixXd H(r + 1, r + 1);
        H(0, 0) = w.sum();
        Eigen::VectorXd Ztw = Z.transpose() * w;
        H.block(0, 1, 1, r) = Ztw.transpose();
        H.block(1, 0, r, 1) = Ztw;
        H.block(1, 1, r, r) = Z.transpose() * w.asDiagonal() * Z +
                              2.0 * lambda * Eigen::MatrixXd::Identity(r, r);
        Eigen::VectorXd step = H.ldlt().solve(g);

        double obj0 = out.diag.objective_trace.back();
        double t = 1.0;
        double a0n = a0, objn = obj0;
        Eigen::VectorXd bn = b;
        for (int ls = 0; ls < 60; ++ls) {
            a0n = a0 - t * step[0];
            bn = b - t * step.tail(r);
            objn = objective(a0n, bn);
            if (objn <= obj0 + 1e-14 * std::abs(obj0)) break;
            t *= 0.5;
        }
        a0 = a0n;
        b = bn;
        out.diag.objective_trace.push_back(std::min(objn, obj0));
        out.diag.iterations = it + 1;
        if (b.norm() > coef_norm_cap)
            throw Error("glm: coefficients diverging (perfect separation?); use a lambda floor");
        if (std::abs(obj0 - objn) <= opts.tol_rel_objective * std::max(1.0, std::abs(obj0))) {
            // converged on objective; recompute gradient norm for diagnostics
            Eigen::VectorXd s2 = (Z * b).array() + a0;
            Eigen::VectorXd p2(K);
            for (Eigen::Index k = 0; k < K; ++k) p2[k] = sigmoid(s2[k]);
            Eigen::VectorXd g2(r + 1);
            g2[0] = (p2 - yv).sum();
            g2.tail(r) = Z.transpose() * (p2 - yv) + 2.0 * lambda * b;
            out.diag.final_grad_norm = g2.norm();
            break;
        }
    }
    out.intercepts = Eigen::VectorXd::Zero(2);
    out.intercepts[1] = a0;
    out.coefs = Eigen::MatrixXd::Zero(2, r);
    out.coefs.row(1) = b.transpose();
    return out;
}

// Symmetric-softmax Newton for C > 2. Parameters: u in R^{C-1} (intercepts
// via the sum-zero basis) and B in R^{C x r}.
NewtonResult newton_multiclass(const Eigen::MatrixXd& Z, const std::vector<int>& y, int C,
                               double lambda, const FitOptions& opts, double coef_norm_cap) {
    const Eigen::Index K = Z.rows(), r = Z.cols();
    const Eigen::MatrixXd M = intercept_basis(C);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(C - 1);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(C, r);
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(K, C);
    for (Eigen::Index k = 0; k < K; ++k) Y(k, y[size_t(k)]) = 1.0;

    auto scores = [&](const Eigen::VectorXd& uv, const Eigen::MatrixXd& Bv) {
        Eigen::VectorXd a0 = M * uv;
        Eigen::MatrixXd S = Z * Bv.transpose();
        S.rowwise() += a0.transpose();
        return S;
    };
    auto objective = [&](const Eigen::VectorXd& uv, const Eigen::MatrixXd& Bv) {
        Eigen::MatrixXd S = scores(uv, Bv);
        double obj = lambda * Bv.squaredNorm();
        for (Eigen::Index k = 0; k < K; ++k)
            obj += logsumexp_row(S.row(k)) - S(k, y[size_t(k)]);
        return obj;
    };

    const Eigen::Index np = (C - 1) + Eigen::Index(C) * r;
    NewtonResult out;
    out.diag.objective_trace.push_back(objective(u, B));
    double init_grad_norm = -1.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        Eigen::MatrixXd S = scores(u, B);
        Eigen::MatrixXd P(K, C);
        for (Eigen::Index k = 0; k < K; ++k) {
            double lse = logsumexp_row(S.row(k));
            for (int c = 0; c < C; ++c) P(k, c) = std::exp(S(k, c) - lse);
        }
        Eigen::MatrixXd R = P - Y; // K x C

        Eigen::VectorXd g(np);
        g.head(C - 1) = M.transpose() * R.colwise().sum().transpose();
        for (int c = 0; c < C; ++c)
            g.segment(C - 1 + Eigen::Index(c) * r, r) =
                Z.transpose() * R.col(c) + 2.0 * lambda * B.row(c).transpose();
        double gn = g.norm();
        out.diag.final_grad_norm = gn;
        if (init_grad_norm < 0.0) init_grad_norm = gn;
        if (gn <= 1e-8 * std::max(1.0, init_grad_norm)) break;

        // Hessian blocks from W_{cc'}(k) = P_kc (delta_cc' - P_kc').
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(np, np);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(C, C); // intercept-intercept (pre-basis)
        for (int c = 0; c < C; ++c)
            for (int cp = 0; cp < C; ++cp) {
                Eigen::ArrayXd wcc =
                    P.col(c).array() * ((c == cp ? 1.0 : 0.0) - P.col(cp).array());
                A(c, cp) = wcc.sum();
                Eigen::VectorXd v = Z.transpose() * wcc.matrix(); // intercept_c x B_cp
                // accumulate into the u block via the basis below
                for (int j = 0; j < C - 1; ++j)
                    H.block(j, C - 1 + Eigen::Index(cp) * r, 1, r) +=
                        M(c, j) * v.transpose();
                Eigen::MatrixXd block = Z.transpose() * wcc.matrix().asDiagonal() * Z;
                if (c == cp) block.diagonal().array() += 2.0 * lambda;
                H.block(C - 1 + Eigen::Index(c) * r, C - 1 + Eigen::Index(cp) * r, r, r) = block;
            }
        H.topLeftCorner(C - 1, C - 1) = M.transpose() * A * M;
        H.block(C - 1, 0, np - (C - 1), C - 1) =
            H.block(0, C - 1, C - 1, np - (C - 1)).transpose();
        H.diagonal().array() += 1e-10; // guard against exact singularity

        Eigen::VectorXd step = H.ldlt().solve(g);

        double obj0 = out.diag.objective_trace.back();
        double t = 1.0, objn = obj0;
        Eigen::VectorXd un = u;
        Eigen::MatrixXd Bn = B;
        for (int ls = 0; ls < 60; ++ls) {
            un = u - t * step.head(C - 1);
            for (int c = 0; c < C; ++c)
                Bn.row(c) = B.row(c) - t * step.segment(C - 1 + Eigen::Index(c) * r, r).transpose();
            objn = objective(un, Bn);
            if (objn <= obj0 + 1e-14 * std::abs(obj0)) break;
            t *= 0.5;
        }
        u = un;
        B = Bn;
        out.diag.objective_trace.push_back(std::min(objn, obj0));
        out.diag.iterations = it + 1;
        if (B.norm() > coef_norm_cap)
            throw Error("glm: coefficients diverging (perfect separation?); use a lambda floor");
        if (std::abs(obj0 - objn) <= opts.tol_rel_objective * std::max(1.0, std::abs(obj0))) break;
    }
    out.intercepts = M * u;
    out.coefs = B;
    return out;
}

// Reduced row-space basis of X: returns (Z, V) with X = Z V^T, V orthonormal
// columns. Penalised optima have coefficients in span(V), so the solve runs
// in r = rank(X) dimensions instead of d.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> reduced_basis(const Eigen::MatrixXd& X) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    double tol = std::max(X.rows(), X.cols()) * sv.maxCoeff() * 1e-14;
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++r;
    r = std::max<Eigen::Index>(r, 1);
    Eigen::MatrixXd Z = svd.matrixU().leftCols(r) * sv.head(r).asDiagonal();
    Eigen::MatrixXd V = svd.matrixV().leftCols(r);
    return {Z, V};
}

FittedModel fit_core(const DesignMatrix& dm, const std::vector<int>& y, double lambda,
                     const FitOptions& opts, double coef_norm_cap) {
    int C = infer_classes(y);
    check_inputs(dm.X, y, C);

    Eigen::MatrixXd X = dm.X;
    Standardization st;
    if (opts.standardize) {
        st = standardize(X);
    } else {
        st.mean = Eigen::VectorXd::Zero(X.cols());
        st.scale = Eigen::VectorXd::Ones(X.cols());
    }

    auto [Z, V] = reduced_basis(X);
    NewtonResult nr = (C == 2) ? newton_binary(Z, y, lambda, opts, coef_norm_cap)
                               : newton_multiclass(Z, y, C, lambda, opts, coef_norm_cap);

    FittedModel m;
    m.n_classes = C;
    m.intercepts = nr.intercepts;
    m.coefs = nr.coefs * V.transpose(); // back to the (standardised) feature basis
    m.lambda = lambda;
    m.standardized = opts.standardize;
    m.feat_mean = st.mean;
    m.feat_scale = st.scale;
    m.source = dm.source;
    m.diag = std::move(nr.diag);
    return m;
}

} // namespace

std::pair<double, Eigen::VectorXd> FittedModel::raw_class_params(int c) const {
    if (c < 0 || c >= n_classes) throw Error("class index out of range");
    Eigen::VectorXd a = coefs.row(c).transpose().array() / feat_scale.array();
    double a0 = intercepts[c] - (coefs.row(c).transpose().array() * feat_mean.array() /
                                 feat_scale.array())
                                    .sum();
    return {a0, a};
}

std::pair<double, Eigen::VectorXd> FittedModel::raw_binary_params() const {
    if (n_classes != 2) throw Error("raw_binary_params requires a binary model");
    auto [a0_1, a1] = raw_class_params(1);
    auto [a0_0, a0vec] = raw_class_params(0);
    return {a0_1 - a0_0, a1 - a0vec};
}

json FittedModel::to_json(const std::vector<std::string>& classes) const {
    json j;
    j["n_classes"] = n_classes;
    j["classes"] = classes;
    j["lambda"] = lambda;
    j["standardized"] = standardized;
    j["source"] = source;
    j["intercepts"] = std::vector<double>(intercepts.data(), intercepts.data() + intercepts.size());
    json rows = json::array();
    for (Eigen::Index c = 0; c < coefs.rows(); ++c) {
        rows.push_back(std::vector<double>(coefs.row(c).data() != nullptr
                                               ? std::vector<double>()
                                               : std::vector<double>()));
        std::vector<double> row(size_t(coefs.cols()));
        for (Eigen::Index k = 0; k < coefs.cols(); ++k) row[size_t(k)] = coefs(c, k);
        rows.back() = row;
    }
    j["coefs"] = rows;
    j["feat_mean"] = std::vector<double>(feat_mean.data(), feat_mean.data() + feat_mean.size());
    j["feat_scale"] = std::vector<double>(feat_scale.data(), feat_scale.data() + feat_scale.size());
    j["diagnostics"] = {{"iterations", diag.iterations},
                        {"final_grad_norm", diag.final_grad_norm}};
    return j;
}

FittedModel FittedModel::from_json(const json& j) {
    FittedModel m;
    m.n_classes = j.at("n_classes").get<int>();
    m.lambda = j.at("lambda").get<double>();
    m.standardized = j.at("standardized").get<bool>();
    m.source = j.at("source").get<std::string>();
    auto iv = j.at("intercepts").get<std::vector<double>>();
    m.intercepts = Eigen::Map<Eigen::VectorXd>(iv.data(), Eigen::Index(iv.size()));
    auto rows = j.at("coefs");
    m.coefs.resize(Eigen::Index(rows.size()), Eigen::Index(rows.at(0).size()));
    for (size_t c = 0; c < rows.size(); ++c) {
        auto row = rows.at(c).get<std::vector<double>>();
        for (size_t k = 0; k < row.size(); ++k) m.coefs(Eigen::Index(c), Eigen::Index(k)) = row[k];
    }
    auto mv = j.at("feat_mean").get<std::vector<double>>();
    m.feat_mean = Eigen::Map<Eigen::VectorXd>(mv.data(), Eigen::Index(mv.size()));
    auto sv = j.at("feat_scale").get<std::vector<double>>();
    m.feat_scale = Eigen::Map<Eigen::VectorXd>(sv.data(), Eigen::Index(sv.size()));
    return m;
}

double penalized_objective(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes,
                           double lambda, const Eigen::VectorXd& params) {
    const Eigen::Index K = X.rows(), d = X.cols();
    if (n_classes == 2) {
        double a0 = params[0];
        Eigen::VectorXd a = params.tail(d);
        double obj = lambda * a.squaredNorm();
        Eigen::VectorXd s = (X * a).array() + a0;
        for (Eigen::Index k = 0; k < K; ++k)
            obj += log1pexp(s[k]) - double(y[size_t(k)]) * s[k];
        return obj;
    }
    const int C = n_classes;
    Eigen::VectorXd a0 = params.head(C);
    double obj = 0.0;
    Eigen::MatrixXd A(C, d);
    for (int c = 0; c < C; ++c) A.row(c) = params.segment(C + Eigen::Index(c) * d, d).transpose();
    obj += lambda * A.squaredNorm();
    Eigen::MatrixXd S = X * A.transpose();
    S.rowwise() += a0.transpose();
    for (Eigen::Index k = 0; k < K; ++k)
        obj += logsumexp_row(S.row(k)) - S(k, y[size_t(k)]);
    return obj;
}

Eigen::VectorXd penalized_gradient(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                   int n_classes, double lambda, const Eigen::VectorXd& params) {
    const Eigen::Index K = X.rows(), d = X.cols();
    if (n_classes == 2) {
        double a0 = params[0];
        Eigen::VectorXd a = params.tail(d);
        Eigen::VectorXd s = (X * a).array() + a0;
        Eigen::VectorXd resid(K);
        for (Eigen::Index k = 0; k < K; ++k)
            resid[k] = sigmoid(s[k]) - double(y[size_t(k)]);
        Eigen::VectorXd g(params.size());
        g[0] = resid.sum();
        g.tail(d) = X.transpose() * resid + 2.0 * lambda * a;
        return g;
    }
    const int C = n_classes;
    Eigen::VectorXd a0 = params.head(C);
    Eigen::MatrixXd A(C, d);
    for (int c = 0; c < C; ++c) A.row(c) = params.segment(C + Eigen::Index(c) * d, d).transpose();
    Eigen::MatrixXd S = X * A.transpose();
    S.rowwise() += a0.transpose();
    Eigen::MatrixXd P(K, C);
    for (Eigen::Index k = 0; k < K; ++k) {
        double lse = logsumexp_row(S.row(k));
        for (int c = 0; c < C; ++c) P(k, c) = std::exp(S(k, c) - lse);
    }
    for (Eigen::Index k = 0; k < K; ++k) P(k, y[size_t(k)]) -= 1.0;
    Eigen::VectorXd g(params.size());
    g.head(C) = P.colwise().sum().transpose();
    for (int c = 0; c < C; ++c)
        g.segment(C + Eigen::Index(c) * d, d) =
            X.transpose() * P.col(c) + 2.0 * lambda * A.row(c).transpose();
    return g;
}

std::vector<double> lambda_grid(const DesignMatrix& dm, const std::vector<int>& y,
                                int path_length) {
    if (path_length < 2) throw Error("lambda_grid: path length must be >= 2");
    int C = infer_classes(y);
    check_inputs(dm.X, y, C);
    Eigen::MatrixXd X = dm.X;
    standardize(X);
    const Eigen::Index K = X.rows();
    // L1 lambda_max: the smallest lambda with an all-zero coefficient vector,
    // used as the scale anchor for the ridge grid as well.
    double lmax = 0.0;
    std::vector<double> prior(size_t(C), 0.0);
    for (int v : y) prior[size_t(v)] += 1.0 / double(K);
    for (int c = (C == 2 ? 1 : 0); c < C; ++c) {
        Eigen::VectorXd resid(K);
        for (Eigen::Index k = 0; k < K; ++k)
            resid[k] = (y[size_t(k)] == c ? 1.0 : 0.0) - prior[size_t(c)];
        lmax = std::max(lmax, (X.transpose() * resid).cwiseAbs().maxCoeff());
    }
    if (lmax <= 0.0) lmax = 1.0;
    std::vector<double> grid(size_t(path_length), 0.0);
    double ratio = 0.01;
    for (int i = 0; i < path_length; ++i)
        grid[size_t(i)] = lmax * std::pow(ratio, double(i) / double(path_length - 1));
    return grid; // descending
}

FittedModel fit_ridge_at(const DesignMatrix& X, const std::vector<int>& y, double lambda,
                         const FitOptions& opts) {
    if (lambda < 0.0) throw Error("fit_ridge_at: lambda must be >= 0");
    return fit_core(X, y, lambda, opts, 1e8);
}

FittedModel fit_ridge_path(const DesignMatrix& X, const std::vector<int>& y,
                           const FitOptions& opts) {
    double lambda = opts.lambda_override
                        ? *opts.lambda_override
                        : lambda_grid(X, y, opts.path_length).back();
    return fit_ridge_at(X, y, lambda, opts);
}

namespace {

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

} // namespace

LassoSelection fit_lasso_select(const DesignMatrix& dm, const std::vector<int>& y, int budget) {
    if (budget < 1) throw Error("fit_lasso_select: budget must be >= 1");
    int C = infer_classes(y);
    if (C != 2)
        throw Error("fit_lasso_select: binary labels required (reduce multiclass one-vs-rest)");
    check_inputs(dm.X, y, C);

    Eigen::MatrixXd X = dm.X;
    Standardization st = standardize(X);
    const Eigen::Index K = X.rows(), d = X.cols();
    Eigen::VectorXd yv(K);
    for (Eigen::Index k = 0; k < K; ++k) yv[k] = double(y[size_t(k)]);

    // Lipschitz constant of the logistic NLL gradient on [1 X].
    Eigen::MatrixXd X1(K, d + 1);
    X1.col(0).setOnes();
    X1.rightCols(d) = X;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(X1);
    double L = 0.25 * svd.singularValues()[0] * svd.singularValues()[0];
    double eta = 1.0 / std::max(L, 1e-12);

    // Path from lambda_max downward (FISTA with warm starts per point).
    double pbar = yv.mean();
    double lmax = (X.transpose() * (yv.array() - pbar).matrix()).cwiseAbs().maxCoeff();
    if (lmax <= 0.0) lmax = 1.0;
    const int path_len = 100;
    double a0 = std::log(std::max(pbar, 1e-12) / std::max(1.0 - pbar, 1e-12));
    Eigen::VectorXd a = Eigen::VectorXd::Zero(d);

    auto nonzeros = [&](const Eigen::VectorXd& v) {
        std::set<Eigen::Index> s;
        for (Eigen::Index j = 0; j < v.size(); ++j)
            if (std::abs(v[j]) > 1e-8) s.insert(j);
        return s;
    };

    std::set<Eigen::Index> best_support;
    Eigen::VectorXd best_a = a;
    double best_a0 = a0, best_lambda = lmax;
    bool found = false;

    for (int pi = 0; pi < path_len; ++pi) {
        double lambda = lmax * std::pow(1e-3, double(pi) / double(path_len - 1));
        // FISTA on NLL + lambda ||a||_1 (intercept unpenalised)
        double ta0 = a0;
        Eigen::VectorXd ta = a;
        double mom = 1.0;
        double prev_obj = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 2000; ++it) {
            Eigen::VectorXd s = (X * ta).array() + ta0;
            Eigen::VectorXd resid(K);
            double nll = 0.0;
            for (Eigen::Index k = 0; k < K; ++k) {
                resid[k] = sigmoid(s[k]) - yv[k];
                nll += log1pexp(s[k]) - yv[k] * s[k];
            }
            double a0n = ta0 - eta * resid.sum();
            Eigen::VectorXd grad = X.transpose() * resid;
            Eigen::VectorXd an(d);
            for (Eigen::Index j = 0; j < d; ++j)
                an[j] = soft_threshold(ta[j] - eta * grad[j], eta * lambda);
            double mom_n = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * mom * mom));
            double beta = (mom - 1.0) / mom_n;
            ta0 = a0n + beta * (a0n - a0);
            ta = an + beta * (an - a);
            a0 = a0n;
            a = an;
            mom = mom_n;
            double obj = nll + lambda * an.lpNorm<1>();
            if (std::abs(prev_obj - obj) <= 1e-10 * std::max(1.0, std::abs(prev_obj)) && it > 3)
                break;
            prev_obj = obj;
        }
        auto sup = nonzeros(a);
        if (int(sup.size()) <= budget && !sup.empty()) {
            best_support = sup;
            best_a = a;
            best_a0 = a0;
            best_lambda = lambda;
            found = true;
        }
    }
    if (!found)
        throw Error("fit_lasso_select: no path point within the budget has a nonempty support");

    LassoSelection out;
    out.support = best_support;
    out.lambda = best_lambda;
    FittedModel m;
    m.n_classes = 2;
    m.intercepts = Eigen::VectorXd::Zero(2);
    m.intercepts[1] = best_a0;
    m.coefs = Eigen::MatrixXd::Zero(2, d);
    m.coefs.row(1) = best_a.transpose();
    m.lambda = best_lambda;
    m.standardized = true;
    m.feat_mean = st.mean;
    m.feat_scale = st.scale;
    m.source = dm.source;
    out.penalized = std::move(m);
    return out;
}

FittedModel refit_unpenalized(const DesignMatrix& dm, const std::vector<int>& y,
                              const std::set<Eigen::Index>& support) {
    if (support.empty()) throw Error("refit_unpenalized: empty support");
    for (Eigen::Index j : support)
        if (j < 0 || j >= dm.X.cols()) throw Error("refit_unpenalized: support index out of range");
    Eigen::MatrixXd Xs(dm.X.rows(), Eigen::Index(support.size()));
    Eigen::Index col = 0;
    for (Eigen::Index j : support) Xs.col(col++) = dm.X.col(j);

    DesignMatrix sub{Xs, dm.source};
    FitOptions opts;
    opts.standardize = false;
    // lambda = 0 with a norm cap for separation detection
    FittedModel m = fit_core(sub, y, 0.0, opts, 1e4);

    // A finite MLE requires class overlap; when every training instance ends
    // up at probability ~1 for its own class, the optimum is at infinity.
    bool separated = true;
    for (Eigen::Index k = 0; k < Xs.rows() && separated; ++k) {
        Eigen::VectorXd p = predict_proba(m, Xs.row(k).transpose());
        if (p[y[size_t(k)]] < 1.0 - 1e-4) separated = false;
    }
    if (separated)
        throw Error("refit_unpenalized: data perfectly separated on the support, the "
                    "unpenalized optimum is at infinity; use a lambda floor instead");

    // Scatter back into the full feature space (zeros off-support).
    FittedModel out = m;
    out.coefs = Eigen::MatrixXd::Zero(m.coefs.rows(), dm.X.cols());
    out.feat_mean = Eigen::VectorXd::Zero(dm.X.cols());
    out.feat_scale = Eigen::VectorXd::Ones(dm.X.cols());
    col = 0;
    for (Eigen::Index j : support) {
        out.coefs.col(j) = m.coefs.col(col);
        ++col;
    }
    return out;
}

Eigen::VectorXd predict_proba(const FittedModel& m, const Eigen::VectorXd& x) {
    if (x.size() != m.dim()) throw Error("predict: feature dimension mismatch");
    Eigen::VectorXd xs = (x - m.feat_mean).array() / m.feat_scale.array();
    Eigen::VectorXd s = m.coefs * xs + m.intercepts;
    double mmax = s.maxCoeff();
    Eigen::VectorXd e = (s.array() - mmax).exp();
    return e / e.sum();
}

int predict(const FittedModel& m, const Eigen::VectorXd& x) {
    Eigen::VectorXd p = predict_proba(m, x);
    int best = 0;
    for (int c = 1; c < m.n_classes; ++c)
        if (p[c] > p[best]) best = c; // strict: ties stay at the lowest index
    return best;
}

double deviance(const FittedModel& m, const Eigen::MatrixXd& X, const std::vector<int>& y) {
    if (size_t(X.rows()) != y.size()) throw Error("deviance: label count mismatch");
    double ll = 0.0;
    for (Eigen::Index k = 0; k < X.rows(); ++k) {
        Eigen::VectorXd p = predict_proba(m, X.row(k).transpose());
        ll += std::log(std::max(p[y[size_t(k)]], 1e-300));
    }
    return -2.0 * ll / double(X.rows());
}

double distance_to_surface(const FittedModel& m, const Eigen::VectorXd& x, int c) {
    if (c < 0 || c >= m.n_classes) throw Error("distance_to_surface: class index out of range");
    double b;
    Eigen::VectorXd w;
    if (m.n_classes == 2) {
        auto [a0, a] = m.raw_binary_params();
        b = a0;
        w = a;
        if (c == 0) {
            b = -b;
            w = -w;
        }
    } else {
        // one-vs-rest contrast of the symmetric parameterisation
        auto [a0_c, a_c] = m.raw_class_params(c);
        b = a0_c;
        w = a_c;
        double rest_b = 0.0;
        Eigen::VectorXd rest_w = Eigen::VectorXd::Zero(w.size());
        for (int j = 0; j < m.n_classes; ++j) {
            if (j == c) continue;
            auto [a0_j, a_j] = m.raw_class_params(j);
            rest_b += a0_j;
            rest_w += a_j;
        }
        b -= rest_b / double(m.n_classes - 1);
        w -= rest_w / double(m.n_classes - 1);
    }
    double nw = w.norm();
    if (nw == 0.0) throw Error("distance_to_surface: degenerate model (zero normal)");
    if (x.size() != w.size()) throw Error("distance_to_surface: dimension mismatch");
    return (b + w.dot(x)) / nw;
}

int classify_restricted_argmax(const std::map<std::string, double>& logits,
                               const std::vector<std::string>& class_tokens) {
    if (class_tokens.empty()) throw Error("classify_restricted_argmax: no class tokens");
    int best = -1;
    double best_logit = 0.0;
    for (size_t c = 0; c < class_tokens.size(); ++c) {
        auto it = logits.find(class_tokens[c]);
        if (it == logits.end())
            throw Error("classify_restricted_argmax: missing logit for token '" + class_tokens[c] +
                        "'");
        if (best < 0 || it->second > best_logit) {
            best = int(c);
            best_logit = it->second;
        }
    }
    return best;
}

DecompositionReport decompose_log_odds(const FittedModel& m, const Eigen::VectorXd& e,
                                       const Eigen::VectorXd& head_plus,
                                       const Eigen::VectorXd& head_minus, double logit_plus,
                                       double logit_minus) {
    if (m.n_classes != 2) throw Error("decompose_log_odds: binary model required");
    if (e.size() != m.dim() || head_plus.size() != e.size() || head_minus.size() != e.size())
        throw Error("decompose_log_odds: dimension mismatch");
    auto [a0, a] = m.raw_binary_params();

    Eigen::Matrix2d G;
    G(0, 0) = head_plus.squaredNorm();
    G(0, 1) = head_plus.dot(head_minus);
    G(1, 0) = G(0, 1);
    G(1, 1) = head_minus.squaredNorm();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(G);
    double lmin = es.eigenvalues()[0], lmax2 = es.eigenvalues()[1];
    if (lmin <= 0.0 || lmax2 / lmin > 1e8)
        throw Error("decompose_log_odds: head vectors near-parallel");

    Eigen::Vector2d rhs(a.dot(head_plus), a.dot(head_minus));
    Eigen::Vector2d alpha = G.ldlt().solve(rhs);

    DecompositionReport r;
    r.alpha_plus = alpha[0];
    r.alpha_minus = alpha[1];
    r.a_pm = a0; // the whole intercept is assigned to the in-plane correction
    r.total = a0 + a.dot(e);
    r.term_next_token = logit_plus - logit_minus;
    r.term_in_plane =
        r.a_pm + (r.alpha_plus - 1.0) * logit_plus + (r.alpha_minus + 1.0) * logit_minus;
    // Out-of-plane remainder; equals a_perp . e when the supplied logits are
    // exactly e . head.
    r.term_out_of_plane = r.total - r.term_next_token - r.term_in_plane;
    return r;
}

} // namespace plr::glm
