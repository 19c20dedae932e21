#include "plr/decomp.hpp"

#include "plr/common.hpp"

namespace plr::decomp {

using nlohmann::json;

PCAModel fit_pca(const Eigen::MatrixXd& X, Eigen::Index k, bool normalize) {
    const Eigen::Index n = X.rows(), d = X.cols();
    if (n < 2) throw Error("fit_pca: need at least 2 rows");
    if (k < 1 || k > std::min(n - 1, d))
        throw Error("fit_pca: k must be in [1, min(rows-1, d)]");
    if (!X.allFinite()) throw Error("fit_pca: non-finite entry");

    PCAModel m;
    m.normalize = normalize;
    m.mean = X.colwise().mean();
    Eigen::MatrixXd Xc = X.rowwise() - m.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();

    m.singular_values = sv.head(k);
    m.components = svd.matrixV().leftCols(k).transpose();
    // Deterministic sign: largest-magnitude entry of each component positive.
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::Index arg;
        m.components.row(i).cwiseAbs().maxCoeff(&arg);
        if (m.components(i, arg) < 0.0) m.components.row(i) *= -1.0;
    }
    double total_var = sv.array().square().sum();
    if (total_var > 0.0)
        m.explained_variance_ratio = (m.singular_values.array().square() / total_var).matrix();
    else
        m.explained_variance_ratio = Eigen::VectorXd::Zero(k);
    // Population std of training scores; singular values give it directly.
    m.score_std = m.singular_values / std::sqrt(double(n));
    for (Eigen::Index i = 0; i < k; ++i)
        if (m.score_std[i] <= 0.0) m.score_std[i] = 1.0;
    return m;
}

Eigen::VectorXd transform(const PCAModel& m, const Eigen::VectorXd& x) {
    if (x.size() != m.mean.size()) throw Error("pca transform: dimension mismatch");
    Eigen::VectorXd s = m.components * (x - m.mean);
    if (m.normalize) s.array() /= m.score_std.array();
    return s;
}

Eigen::MatrixXd transform_rows(const PCAModel& m, const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out(X.rows(), m.n_components());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        out.row(i) = transform(m, X.row(i).transpose()).transpose();
    return out;
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

} // namespace

json PCAModel::to_json() const {
    json rows = json::array();
    for (Eigen::Index i = 0; i < components.rows(); ++i)
        rows.push_back(to_vec(components.row(i).transpose()));
    return json{{"mean", to_vec(mean)},
                {"components", rows},
                {"singular_values", to_vec(singular_values)},
                {"explained_variance_ratio", to_vec(explained_variance_ratio)},
                {"score_std", to_vec(score_std)},
                {"normalize", normalize}};
}

PCAModel PCAModel::from_json(const json& j) {
    PCAModel m;
    m.mean = from_vec(j.at("mean").get<std::vector<double>>());
    auto rows = j.at("components");
    m.components.resize(Eigen::Index(rows.size()), m.mean.size());
    for (size_t i = 0; i < rows.size(); ++i)
        m.components.row(Eigen::Index(i)) =
            from_vec(rows.at(i).get<std::vector<double>>()).transpose();
    m.singular_values = from_vec(j.at("singular_values").get<std::vector<double>>());
    m.explained_variance_ratio =
        from_vec(j.at("explained_variance_ratio").get<std::vector<double>>());
    m.score_std = from_vec(j.at("score_std").get<std::vector<double>>());
    m.normalize = j.at("normalize").get<bool>();
    return m;
}

} // namespace plr::decomp
