#include "plr/glm.hpp"

#include "testutil.hpp"

#include <doctest.h>

#include <cmath>

using namespace plr;
using testutil::gaussian_binary;
using testutil::gaussian_three_class;

namespace {

glm::DesignMatrix make_dm(const Eigen::MatrixXd& X) { return {X, "embedding"}; }

Eigen::VectorXd oracle_fit(const Eigen::MatrixXd& X, const std::vector<int>& y, int C,
                           double lambda, Eigen::Index n_params) {
    auto f = [&](const Eigen::VectorXd& p) {
        return glm::penalized_objective(X, y, C, lambda, p);
    };
    auto g = [&](const Eigen::VectorXd& p) {
        return glm::penalized_gradient(X, y, C, lambda, p);
    };
    return testutil::minimize(f, g, Eigen::VectorXd::Zero(n_params));
}

Eigen::VectorXd pack_binary(const glm::FittedModel& m) {
    auto [a0, a] = m.raw_binary_params();
    Eigen::VectorXd p(a.size() + 1);
    p[0] = a0;
    p.tail(a.size()) = a;
    return p;
}

} // namespace

TEST_CASE("ridge solver matches a general-purpose minimiser (binary)") {
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        auto data = gaussian_binary(50, 10, 1.5, seed);
        double lambda = 0.5;
        glm::FitOptions opts;
        opts.standardize = false;
        opts.lambda_override = lambda;
        auto m = glm::fit_ridge_path(make_dm(data.X), data.y, opts);

        Eigen::VectorXd ours = pack_binary(m);
        Eigen::VectorXd oracle = oracle_fit(data.X, data.y, 2, lambda, ours.size());
        CHECK((ours - oracle).cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("ridge solver matches a general-purpose minimiser (3-class)") {
    for (uint64_t seed : {4ULL, 5ULL}) {
        auto data = gaussian_three_class(51, 10, 1.5, seed);
        double lambda = 0.5;
        glm::FitOptions opts;
        opts.standardize = false;
        opts.lambda_override = lambda;
        auto m = glm::fit_ridge_path(make_dm(data.X), data.y, opts);

        const int C = 3, d = 10;
        Eigen::VectorXd oracle = oracle_fit(data.X, data.y, C, lambda, C + C * d);
        for (int c = 0; c < C; ++c) {
            auto [a0, a] = m.raw_class_params(c);
            CHECK(std::abs(a0 - oracle[c]) < 1e-4);
            CHECK((a - oracle.segment(C + c * d, d)).cwiseAbs().maxCoeff() < 1e-4);
        }
    }
}

TEST_CASE("analytic gradient matches central finite differences") {
    auto data = gaussian_binary(20, 6, 1.0, 9);
    plr::Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd p(7);
        for (int i = 0; i < 7; ++i) p[i] = rng.gauss() * 0.5;
        auto f = [&](const Eigen::VectorXd& q) {
            return glm::penalized_objective(data.X, data.y, 2, 0.3, q);
        };
        Eigen::VectorXd ga = glm::penalized_gradient(data.X, data.y, 2, 0.3, p);
        Eigen::VectorXd gn = testutil::fd_gradient(f, p);
        CHECK((ga - gn).norm() / std::max(1.0, gn.norm()) < 1e-5);
    }
    // multiclass layout too
    auto data3 = gaussian_three_class(21, 4, 1.0, 13);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd p(3 + 3 * 4);
        for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = rng.gauss() * 0.3;
        auto f = [&](const Eigen::VectorXd& q) {
            return glm::penalized_objective(data3.X, data3.y, 3, 0.2, q);
        };
        Eigen::VectorXd ga = glm::penalized_gradient(data3.X, data3.y, 3, 0.2, p);
        Eigen::VectorXd gn = testutil::fd_gradient(f, p);
        CHECK((ga - gn).norm() / std::max(1.0, gn.norm()) < 1e-5);
    }
}

TEST_CASE("huge lambda shrinks coefficients to zero and leaves the prior") {
    auto data = gaussian_binary(40, 8, 2.0, 21);
    // unbalanced relabel: 10 positives
    for (size_t i = 0; i < data.y.size(); ++i) data.y[i] = i < 10 ? 1 : 0;
    glm::FitOptions opts;
    opts.lambda_override = 1e12;
    auto m = glm::fit_ridge_path(make_dm(data.X), data.y, opts);
    auto [a0, a] = m.raw_binary_params();
    CHECK(a.norm() < 1e-6);
    double prior = 10.0 / 40.0;
    Eigen::VectorXd x = data.X.row(0).transpose();
    CHECK(glm::predict_proba(m, x)[1] == doctest::Approx(prior).epsilon(1e-3));
}

TEST_CASE("identical instances with opposite labels sit at p = 0.5") {
    // Every instance appears twice with both labels, so s = 0 everywhere at
    // the optimum and the duplicated point gets probability one half.
    Eigen::MatrixXd X(4, 3);
    X << 1, 2, 3, 1, 2, 3, -1, 0, 1, -1, 0, 1;
    std::vector<int> y{0, 1, 0, 1};
    glm::FitOptions opts;
    opts.lambda_override = 0.1;
    auto m = glm::fit_ridge_path(make_dm(X), y, opts);
    CHECK(glm::predict_proba(m, X.row(0).transpose())[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("objective trace is non-increasing and gradient norm drops") {
    auto data = gaussian_binary(60, 12, 1.0, 31);
    auto m = glm::fit_ridge_path(make_dm(data.X), data.y);
    const auto& trace = m.diag.objective_trace;
    REQUIRE(trace.size() >= 2);
    for (size_t i = 1; i < trace.size(); ++i)
        CHECK(trace[i] <= trace[i - 1] + 1e-12 * std::abs(trace[i - 1]));
    CHECK(m.diag.final_grad_norm <= 1e-6 * std::max(1.0, trace.front()));
}

TEST_CASE("ridge shrinkage is monotone in lambda") {
    auto data = gaussian_binary(50, 10, 1.5, 41);
    double prev_norm = -1.0;
    for (double lambda : {0.01, 0.1, 1.0, 10.0, 100.0}) {
        glm::FitOptions opts;
        opts.lambda_override = lambda;
        auto m = glm::fit_ridge_path(make_dm(data.X), data.y, opts);
        double norm = m.coefs.row(1).norm();
        if (prev_norm >= 0.0) CHECK(norm <= prev_norm + 1e-9);
        prev_norm = norm;
    }
}

TEST_CASE("accuracy is insensitive to the path point on separable data") {
    auto data = gaussian_binary(100, 10, 4.0, 51);
    auto grid = glm::lambda_grid(make_dm(data.X), data.y, 100);
    double lo = 1.0, hi = 0.0;
    for (size_t gi = 0; gi < grid.size(); gi += 9) {
        glm::FitOptions opts;
        opts.lambda_override = grid[gi];
        auto m = glm::fit_ridge_path(make_dm(data.X), data.y, opts);
        int correct = 0;
        for (int i = 0; i < 100; ++i)
            if (glm::predict(m, data.X.row(i).transpose()) == data.y[size_t(i)]) ++correct;
        double acc = correct / 100.0;
        lo = std::min(lo, acc);
        hi = std::max(hi, acc);
    }
    CHECK(hi - lo < 0.05);
}

TEST_CASE("lambda grid is geometric, descending, anchored at 1% of the max") {
    auto data = gaussian_binary(30, 5, 1.0, 61);
    auto grid = glm::lambda_grid(make_dm(data.X), data.y, 100);
    REQUIRE(grid.size() == 100);
    CHECK(grid.front() > grid.back());
    CHECK(grid.back() == doctest::Approx(grid.front() * 0.01));
    double ratio = grid[1] / grid[0];
    for (size_t i = 2; i < grid.size(); ++i)
        CHECK(grid[i] / grid[i - 1] == doctest::Approx(ratio).epsilon(1e-9));
}

TEST_CASE("predict_proba basics") {
    glm::FittedModel m;
    m.n_classes = 2;
    m.intercepts = Eigen::VectorXd::Zero(2);
    m.coefs = Eigen::MatrixXd::Zero(2, 3);
    m.feat_mean = Eigen::VectorXd::Zero(3);
    m.feat_scale = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd x = Eigen::VectorXd::Ones(3);

    auto p = glm::predict_proba(m, x);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(glm::predict(m, x) == 0); // exact tie -> lowest class

    m.intercepts[1] = 1.0; // sigmoid(1)
    CHECK(glm::predict_proba(m, x)[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

    CHECK_THROWS_AS(glm::predict_proba(m, Eigen::VectorXd::Ones(2)), Error);
}

TEST_CASE("distance_to_surface geometry") {
    glm::FittedModel m;
    m.n_classes = 2;
    m.intercepts = Eigen::VectorXd::Zero(2);
    m.coefs = Eigen::MatrixXd::Zero(2, 3);
    m.coefs(1, 0) = 1.0; // unit normal along axis 0
    m.feat_mean = Eigen::VectorXd::Zero(3);
    m.feat_scale = Eigen::VectorXd::Ones(3);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
    CHECK(glm::distance_to_surface(m, x, 1) == doctest::Approx(0.0));
    x[0] = 2.0;
    CHECK(glm::distance_to_surface(m, x, 1) == doctest::Approx(2.0));
    CHECK(glm::distance_to_surface(m, x, 0) == doctest::Approx(-2.0));

    glm::FittedModel scaled = m;
    scaled.coefs *= 5.0;
    scaled.intercepts *= 5.0;
    CHECK(glm::distance_to_surface(scaled, x, 1) == doctest::Approx(2.0));

    glm::FittedModel degenerate = m;
    degenerate.coefs.setZero();
    CHECK_THROWS_AS(glm::distance_to_surface(degenerate, x, 1), Error);
}

TEST_CASE("restricted argmax classification") {
    std::map<std::string, double> logits{{"Yes", 3.2}, {"No", 1.1}};
    CHECK(glm::classify_restricted_argmax(logits, {"Yes", "No"}) == 0);
    CHECK(glm::classify_restricted_argmax(logits, {"No", "Yes"}) == 1);
    CHECK(glm::classify_restricted_argmax({{"a", 1.0}, {"b", 1.0}}, {"a", "b"}) == 0);
    CHECK(glm::classify_restricted_argmax({{"a", 0.0}, {"b", 1.0}, {"c", 2.0}},
                                          {"a", "b", "c"}) == 2);
    CHECK_THROWS_AS(glm::classify_restricted_argmax(logits, {"Yes", "Maybe"}), Error);
}

TEST_CASE("lasso selects the dominant feature at budget 1") {
    // Feature 3 carries the class signal; everything else is noise.
    plr::Rng rng(71);
    const int n = 60, d = 8;
    Eigen::MatrixXd X(n, d);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        y.push_back(label);
        for (int j = 0; j < d; ++j) X(i, j) = rng.gauss() * 0.3;
        X(i, 3) += label == 1 ? 2.0 : -2.0;
    }
    auto sel = glm::fit_lasso_select(make_dm(X), y, 1);
    REQUIRE(sel.support.size() == 1);
    CHECK(*sel.support.begin() == 3);

    // Oracle cross-check: feature 3 gives the lowest single-feature deviance
    // (lightly penalised fits; the signal feature separates the classes, so
    // an unpenalised single-feature fit would diverge).
    double best_dev = 1e18;
    int best_feature = -1;
    for (int j = 0; j < d; ++j) {
        glm::FitOptions opts;
        opts.lambda_override = 1e-3;
        glm::DesignMatrix one{X.col(j), "embedding"};
        auto m = glm::fit_ridge_path(one, y, opts);
        double dev = glm::deviance(m, X.col(j), y);
        if (dev < best_dev) {
            best_dev = dev;
            best_feature = j;
        }
    }
    CHECK(best_feature == 3);

    auto big = glm::fit_lasso_select(make_dm(X), y, d + 5);
    CHECK(big.support.size() <= size_t(d));
    CHECK(big.support.count(3) == 1);

    CHECK_THROWS_AS(glm::fit_lasso_select(make_dm(X), y, 0), Error);
}

TEST_CASE("unpenalized refit matches the oracle MLE and beats the penalised deviance") {
    auto data = gaussian_binary(80, 6, 1.0, 81); // overlapping clouds, no separation
    std::set<Eigen::Index> support{0, 2, 4};

    auto refit = glm::refit_unpenalized(make_dm(data.X), data.y, support);

    // Oracle: generic minimiser of the unpenalised likelihood on the support.
    Eigen::MatrixXd Xs(data.X.rows(), 3);
    int col = 0;
    for (Eigen::Index j : support) Xs.col(col++) = data.X.col(j);
    Eigen::VectorXd oracle = oracle_fit(Xs, data.y, 2, 0.0, 4);
    auto [a0, a] = refit.raw_binary_params();
    CHECK(std::abs(a0 - oracle[0]) < 1e-4);
    CHECK(std::abs(a(0) - oracle[1]) < 1e-4);
    CHECK(std::abs(a(2) - oracle[2]) < 1e-4);
    CHECK(std::abs(a(4) - oracle[3]) < 1e-4);

    // Penalised fit restricted to the same support has higher training deviance.
    glm::FitOptions opts;
    opts.lambda_override = 1.0;
    opts.standardize = false;
    glm::DesignMatrix sub{Xs, "embedding"};
    auto pen = glm::fit_ridge_path(sub, data.y, opts);
    // refit lives in the full feature space (zeros off-support)
    CHECK(glm::deviance(refit, data.X, data.y) <= glm::deviance(pen, Xs, data.y) + 1e-9);
}

TEST_CASE("refit on an uncorrelated feature gives zero slope and the prior intercept") {
    plr::Rng rng(91);
    const int n = 400;
    Eigen::MatrixXd X(n, 1);
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
        y.push_back(i % 2);
        X(i, 0) = (i / 2) % 2 == 0 ? 1.0 : -1.0; // exactly orthogonal to the labels
    }
    auto m = glm::refit_unpenalized(make_dm(X), y, {0});
    auto [a0, a] = m.raw_binary_params();
    CHECK(std::abs(a[0]) < 1e-6);
    CHECK(std::abs(a0) < 1e-6); // balanced classes: logit of the prior is 0
}

TEST_CASE("refit detects perfect separation") {
    Eigen::MatrixXd X(6, 2);
    X << -3, 1, -2, 0, -1, 1, 1, 0, 2, 1, 3, 0;
    std::vector<int> y{0, 0, 0, 1, 1, 1};
    CHECK_THROWS_WITH_AS(
        (void)glm::refit_unpenalized({X, "embedding"}, y, {0, 1}),
        doctest::Contains("lambda"), Error);
}

TEST_CASE("log-odds decomposition") {
    plr::Rng rng(101);
    const int d = 8;
    Eigen::VectorXd hp(d), hm(d), e(d);
    for (int i = 0; i < d; ++i) {
        hp[i] = rng.gauss();
        hm[i] = rng.gauss();
        e[i] = rng.gauss();
    }

    auto make_model = [&](const Eigen::VectorXd& a, double a0) {
        glm::FittedModel m;
        m.n_classes = 2;
        m.intercepts = Eigen::VectorXd::Zero(2);
        m.intercepts[1] = a0;
        m.coefs = Eigen::MatrixXd::Zero(2, d);
        m.coefs.row(1) = a.transpose();
        m.feat_mean = Eigen::VectorXd::Zero(d);
        m.feat_scale = Eigen::VectorXd::Ones(d);
        return m;
    };

    SUBCASE("identity holds for random models") {
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd a(d);
            for (int i = 0; i < d; ++i) a[i] = rng.gauss();
            double a0 = rng.gauss();
            auto m = make_model(a, a0);
            auto r = glm::decompose_log_odds(m, e, hp, hm, e.dot(hp), e.dot(hm));
            CHECK(std::abs(r.term_next_token + r.term_in_plane + r.term_out_of_plane -
                           r.total) < 1e-12);
            CHECK(r.total == doctest::Approx(a0 + a.dot(e)).epsilon(1e-12));
        }
    }

    SUBCASE("a inside the head plane leaves no out-of-plane term") {
        auto m = make_model(0.7 * hp - 1.3 * hm, 0.4);
        auto r = glm::decompose_log_odds(m, e, hp, hm, e.dot(hp), e.dot(hm));
        CHECK(std::abs(r.term_out_of_plane) < 1e-10);
    }

    SUBCASE("a = e+ - e- with zero intercept is pure next-token log-odds") {
        auto m = make_model(hp - hm, 0.0);
        auto r = glm::decompose_log_odds(m, e, hp, hm, e.dot(hp), e.dot(hm));
        CHECK(std::abs(r.term_in_plane) < 1e-10);
        CHECK(r.term_next_token == doctest::Approx(r.total).epsilon(1e-10));
    }

    SUBCASE("near-parallel head vectors are rejected") {
        Eigen::VectorXd hm_parallel = hp * (1.0 + 1e-12);
        auto m = make_model(hp, 0.0);
        CHECK_THROWS_AS(
            (void)glm::decompose_log_odds(m, e, hp, hm_parallel, e.dot(hp), e.dot(hm_parallel)),
            Error);
    }
}

TEST_CASE("model JSON round-trip predicts identically") {
    auto data = gaussian_binary(40, 6, 1.5, 111);
    auto m = glm::fit_ridge_path(make_dm(data.X), data.y);
    auto j = m.to_json({"neg", "pos"});
    auto back = glm::FittedModel::from_json(j);
    for (int i = 0; i < 10; ++i) {
        Eigen::VectorXd x = data.X.row(i).transpose();
        CHECK(glm::predict(back, x) == glm::predict(m, x));
        CHECK(glm::predict_proba(back, x)[1] ==
              doctest::Approx(glm::predict_proba(m, x)[1]).epsilon(1e-15));
    }
}

TEST_CASE("fit input validation") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 2, 3, 4, 5, 6, 7, 8;
    CHECK_THROWS_AS(glm::fit_ridge_path(make_dm(X), {0, 0, 0, 0}), Error); // class 1 absent
    Eigen::MatrixXd bad = X;
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(glm::fit_ridge_path(make_dm(bad), {0, 1, 0, 1}), Error);
}
