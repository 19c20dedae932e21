// Acceptance checks: one pass/fail line per criterion, exit 0 only if all pass.

#include "plr/corpus.hpp"
#include "plr/decomp.hpp"
#include "plr/evalharness.hpp"
#include "plr/explain.hpp"
#include "plr/glm.hpp"
#include "plr/prompting.hpp"
#include "plr/provider.hpp"
#include "plr/stats.hpp"

#include "testutil.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <sys/wait.h>
#include <thread>

using namespace plr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what) {
    std::cout << "criterion " << criterion << ": " << (ok ? "PASS" : "FAIL") << " - " << what
              << std::endl;
    if (!ok) ++g_failures;
}

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path out = fs::temp_directory_path() / ("plr_accept_out_" + std::to_string(counter++));
    std::string cmd = std::string(PLR_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = rc == -1 ? -1 : WEXITSTATUS(rc);
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    fs::remove(out);
    return r;
}

// Value of the first "key=<number>" occurrence, NaN when absent.
double parse_kv(const std::string& text, const std::string& key) {
    auto pos = text.find(key + "=");
    if (pos == std::string::npos) return std::numeric_limits<double>::quiet_NaN();
    return std::atof(text.c_str() + pos + key.size() + 1);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Closed-form Wilson numbers through the CLI.

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    std::ostringstream why;
    bool ok = true;

    auto r10 = run_cli("validate --n 10 --accuracy 0.8 --alpha 0.1 --baseline 0.5");
    ok = ok && r10.exit_code == 0;
    double ach10 = parse_kv(r10.output, "achievable");
    if (std::abs(ach10 - 0.8) > 1e-9) {
        ok = false;
        why << " achievable(n=10)=" << ach10;
    }

    auto r20 = run_cli("validate --n 20 --accuracy 0.7 --alpha 0.1 --baseline 0.5");
    ok = ok && r20.exit_code == 0;
    double thr20 = parse_kv(r20.output, "threshold");
    if (std::abs(thr20 - 0.67) > 0.01) {
        ok = false;
        why << " threshold(n=20)=" << thr20;
    }

    const long ns[] = {25, 50, 100, 250};
    const double widths[] = {0.36, 0.25, 0.17, 0.11};
    for (int i = 0; i < 4; ++i) {
        auto r = run_cli("validate --n " + std::to_string(ns[i]) +
                         " --accuracy 0.75 --alpha 0.05 --baseline 0.5");
        ok = ok && r.exit_code == 0;
        double w = parse_kv(r.output, "width");
        if (std::abs(w - widths[i]) > 0.01) {
            ok = false;
            why << " width(n=" << ns[i] << ")=" << w;
        }
    }

    double secs = seconds_since(t0);
    if (secs >= 1.0) {
        ok = false;
        why << " runtime " << secs << "s";
    }
    report(1, ok,
           "minimum accuracy to reject 0.5 and 95% interval widths via the validate command" +
               (ok ? "" : " (" + why.str() + " )"));
}

// ---------------------------------------------------------------------------
// 2. Chance-separability expectation vs. an independent log-gamma oracle.

void criterion_2() {
    bool ok = true;
    std::ostringstream why;
    for (long n = 1; n <= 7; ++n)
        if (stats::expected_separable_dims(4096, n) <= 1.0) {
            ok = false;
            why << " value<=1 at n=" << n;
        }
    if (stats::expected_separable_dims(4096, 8) >= 1.0) {
        ok = false;
        why << " value>=1 at n=8";
    }
    double got = stats::expected_separable_dims(4096, 7);
    // independent evaluation: d * 2 * exp(2 ln(n!) - ln((2n)!))
    double oracle = 4096.0 * 2.0 * std::exp(2.0 * std::lgamma(8.0) - std::lgamma(15.0));
    if (std::abs(got - oracle) / oracle > 1e-6) {
        ok = false;
        why << " n=7 value " << got << " vs oracle " << oracle;
    }
    if (std::abs(got - 2.39) > 0.01) {
        ok = false;
        why << " n=7 value " << got << " not ~2.39";
    }
    report(2, ok, "expected separable dimensions cross 1 between n=7 and n=8" +
                      (ok ? "" : " (" + why.str() + " )"));
}

// ---------------------------------------------------------------------------
// 3. Ridge solver vs. a general-purpose minimiser; gradient vs. differences.

void criterion_3() {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::ostringstream why;
    const double lambda = 0.5;

    for (uint64_t seed = 0; seed < 5; ++seed) {
        // binary
        auto data = testutil::gaussian_binary(50, 10, 1.5, 100 + seed);
        glm::FitOptions opts;
        opts.standardize = false;
        opts.lambda_override = lambda;
        auto m = glm::fit_ridge_path({data.X, "embedding"}, data.y, opts);
        auto [a0, a] = m.raw_binary_params();
        Eigen::VectorXd ours(11);
        ours[0] = a0;
        ours.tail(10) = a;
        auto fb = [&](const Eigen::VectorXd& p) {
            return glm::penalized_objective(data.X, data.y, 2, lambda, p);
        };
        auto gb = [&](const Eigen::VectorXd& p) {
            return glm::penalized_gradient(data.X, data.y, 2, lambda, p);
        };
        // lambda = 0.5 makes the objective strongly convex with modulus 1, so a
        // gradient norm of 1e-7 pins the oracle well inside the 1e-4 tolerance
        Eigen::VectorXd oracle = testutil::minimize(fb, gb, Eigen::VectorXd::Zero(11), 200000, 1e-7);
        double diff = (ours - oracle).cwiseAbs().maxCoeff();
        if (diff > 1e-4) {
            ok = false;
            why << " binary seed " << seed << " max-abs " << diff;
        }

        // 3-class
        auto d3 = testutil::gaussian_three_class(51, 10, 1.5, 200 + seed);
        auto m3 = glm::fit_ridge_path({d3.X, "embedding"}, d3.y, opts);
        auto f3 = [&](const Eigen::VectorXd& p) {
            return glm::penalized_objective(d3.X, d3.y, 3, lambda, p);
        };
        auto g3 = [&](const Eigen::VectorXd& p) {
            return glm::penalized_gradient(d3.X, d3.y, 3, lambda, p);
        };
        Eigen::VectorXd oracle3 =
            testutil::minimize(f3, g3, Eigen::VectorXd::Zero(3 + 30), 200000, 1e-7);
        for (int c = 0; c < 3; ++c) {
            auto [b0, b] = m3.raw_class_params(c);
            double dd = std::max(std::abs(b0 - oracle3[c]),
                                 (b - oracle3.segment(3 + c * 10, 10)).cwiseAbs().maxCoeff());
            if (dd > 1e-4) {
                ok = false;
                why << " 3-class seed " << seed << " class " << c << " max-abs " << dd;
            }
        }
    }

    // gradient vs. central finite differences at 10 random points
    auto data = testutil::gaussian_binary(30, 6, 1.0, 7);
    auto d3 = testutil::gaussian_three_class(30, 5, 1.0, 8);
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd p(7);
        for (int i = 0; i < 7; ++i) p[i] = rng.gauss() * 0.5;
        auto f = [&](const Eigen::VectorXd& q) {
            return glm::penalized_objective(data.X, data.y, 2, 0.3, q);
        };
        Eigen::VectorXd ga = glm::penalized_gradient(data.X, data.y, 2, 0.3, p);
        double rel = (ga - testutil::fd_gradient(f, p)).norm() / std::max(1.0, ga.norm());
        if (rel > 1e-5) {
            ok = false;
            why << " binary gradient rel " << rel;
        }

        Eigen::VectorXd q(3 + 15);
        for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = rng.gauss() * 0.3;
        auto f3 = [&](const Eigen::VectorXd& r) {
            return glm::penalized_objective(d3.X, d3.y, 3, 0.2, r);
        };
        Eigen::VectorXd ga3 = glm::penalized_gradient(d3.X, d3.y, 3, 0.2, q);
        double rel3 = (ga3 - testutil::fd_gradient(f3, q)).norm() / std::max(1.0, ga3.norm());
        if (rel3 > 1e-5) {
            ok = false;
            why << " multiclass gradient rel " << rel3;
        }
    }

    double secs = seconds_since(t0);
    if (secs >= 10.0) {
        ok = false;
        why << " runtime " << secs << "s";
    }
    report(3, ok, "ridge coefficients and gradients match independent oracles" +
                      (ok ? "" : " (" + why.str() + " )"));
}

// ---------------------------------------------------------------------------
// 4. Lasso support budget and unpenalised refit on 20 seeded instances.

void criterion_4() {
    bool ok = true;
    std::ostringstream why;
    const int budget = 3;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        // 8 features; noisy labels so the support is never perfectly separating
        Rng rng(300 + seed);
        const int n = 80, d = 8;
        Eigen::MatrixXd X(n, d);
        std::vector<int> y;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) X(i, j) = rng.gauss();
            double score = 1.2 * X(i, 0) - 0.8 * X(i, 3) + 1.2 * rng.gauss();
            y.push_back(score > 0 ? 1 : 0);
        }
        glm::DesignMatrix dm{X, "embedding"};

        auto sel = glm::fit_lasso_select(dm, y, budget);
        if (sel.support.size() > size_t(budget)) {
            ok = false;
            why << " seed " << seed << " support " << sel.support.size();
            continue;
        }
        auto refit = glm::refit_unpenalized(dm, y, sel.support);

        // oracle: unpenalised MLE on the selected columns only
        std::vector<Eigen::Index> cols(sel.support.begin(), sel.support.end());
        Eigen::MatrixXd Xs(n, Eigen::Index(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) Xs.col(Eigen::Index(c)) = X.col(cols[c]);
        auto f = [&](const Eigen::VectorXd& p) {
            return glm::penalized_objective(Xs, y, 2, 0.0, p);
        };
        auto g = [&](const Eigen::VectorXd& p) {
            return glm::penalized_gradient(Xs, y, 2, 0.0, p);
        };
        Eigen::VectorXd oracle =
            testutil::minimize(f, g, Eigen::VectorXd::Zero(Eigen::Index(cols.size()) + 1));
        auto [a0, a] = refit.raw_binary_params();
        double diff = std::abs(a0 - oracle[0]);
        for (size_t c = 0; c < cols.size(); ++c)
            diff = std::max(diff, std::abs(a[cols[c]] - oracle[Eigen::Index(c) + 1]));
        for (Eigen::Index j = 0; j < d; ++j)
            if (!sel.support.count(j)) diff = std::max(diff, std::abs(a[j]));
        if (diff > 1e-4) {
            ok = false;
            why << " seed " << seed << " refit-vs-oracle " << diff;
        }

        double dev_refit = glm::deviance(refit, X, y);
        double dev_pen = glm::deviance(sel.penalized, X, y);
        if (dev_refit > dev_pen + 1e-12) {
            ok = false;
            why << " seed " << seed << " refit deviance " << dev_refit << " > " << dev_pen;
        }
    }
    report(4, ok, "lasso respects the support budget and the refit is the support MLE" +
                      (ok ? "" : " (" + why.str() + " )"));
}

// ---------------------------------------------------------------------------
// 5. Log-odds decomposition identity.

void criterion_5() {
    bool ok = true;
    std::ostringstream why;
    Rng rng(555);
    const int d = 12;
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
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd hp(d), hm(d), e(d), a(d);
        for (int i = 0; i < d; ++i) {
            hp[i] = rng.gauss();
            hm[i] = rng.gauss();
            e[i] = rng.gauss();
            a[i] = rng.gauss();
        }
        double a0 = rng.gauss();
        auto m = make_model(a, a0);
        auto r = glm::decompose_log_odds(m, e, hp, hm, e.dot(hp), e.dot(hm));
        double resid =
            std::abs(r.term_next_token + r.term_in_plane + r.term_out_of_plane - r.total);
        if (resid > 1e-9) {
            ok = false;
            why << " trial " << trial << " residual " << resid;
        }
        if (std::abs(r.total - (a0 + a.dot(e))) > 1e-9) {
            ok = false;
            why << " trial " << trial << " total mismatch";
        }

        // in-plane coefficient vector: no out-of-plane remainder
        auto span_model = make_model(0.9 * hp - 1.1 * hm, a0);
        auto rs = glm::decompose_log_odds(span_model, e, hp, hm, e.dot(hp), e.dot(hm));
        if (std::abs(rs.term_out_of_plane) > 1e-10) {
            ok = false;
            why << " trial " << trial << " span remainder " << rs.term_out_of_plane;
        }
    }
    report(5, ok, "decomposition terms sum to the total log-odds" +
                      (ok ? "" : " (" + why.str() + " )"));
}

// ---------------------------------------------------------------------------
// Shared stub-corpus machinery for criteria 6-8.

corpus::LabeledDataset stub_corpus(size_t n, uint64_t text_seed) {
    corpus::LabeledDataset d;
    d.name = "stub-corpus";
    d.classes = {"up", "down"};
    Rng rng(text_seed);
    for (size_t i = 0; i < n; ++i) {
        corpus::Instance inst;
        inst.id = "s" + std::to_string(i);
        inst.label = int(i % 2);
        std::string text =
            inst.label == 0 ? "shares are soaring this quarter" : "shares are tumbling this quarter";
        for (int w = 0; w < 3; ++w) text += " filler" + std::to_string(rng.below(40));
        inst.text = text;
        d.instances.push_back(inst);
    }
    return d;
}

// d = 64 stub whose class means sit 2 sigma either side of the decision
// boundary (trigger scale sqrt(2) per class, per-dimension noise sigma 0.5,
// near-orthogonal trigger directions => mean separation 4 sigma in total).
std::unique_ptr<provider::StubProvider> stub_2sigma(double sigma = 0.5) {
    auto stub = std::make_unique<provider::StubProvider>(64, 2024, sigma);
    double scale = 2.0 * sigma * std::sqrt(2.0); // ||mu+ - mu-|| ~ scale * sqrt(2)
    stub->add_trigger("soaring", scale);
    stub->add_trigger("tumbling", scale);
    stub->set_base_scale(1.0);
    return stub;
}

int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    return int(std::max(1u, std::min(hw, 4u)));
}

void criterion_6() {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::ostringstream why;

    auto d = stub_corpus(150, 11);
    auto stub = stub_2sigma();
    eval::ExperimentConfig cfg;
    cfg.tmpl.id = "stub";
    cfg.tmpl.suffix = "Up or down?";
    cfg.sizes = {10, 30, 100};
    cfg.replicates = 50;
    cfg.master_seed = 99;
    cfg.jobs = worker_count();

    auto c1 = eval::run_learning_curve(cfg, d, *stub);
    double acc10 = c1.per_size[0].ci.mean;
    double acc100 = c1.per_size[2].ci.mean;
    if (acc100 < 0.95) {
        ok = false;
        why << " acc@100 " << acc100;
    }
    if (acc100 <= acc10) {
        ok = false;
        why << " acc@100 " << acc100 << " <= acc@10 " << acc10;
    }

    auto c2 = eval::run_learning_curve(cfg, d, *stub);
    fs::path dir = fs::temp_directory_path() / "plr_accept_c6";
    fs::create_directories(dir);
    eval::write_curve_csv((dir / "a.csv").string(), c1);
    eval::write_curve_csv((dir / "b.csv").string(), c2);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    if (slurp(dir / "a.csv") != slurp(dir / "b.csv")) {
        ok = false;
        why << " rerun not byte-identical";
    }
    fs::remove_all(dir);

    double secs = seconds_since(t0);
    if (secs >= 30.0) {
        ok = false;
        why << " runtime " << secs << "s";
    }
    report(6, ok, "learning curve on the separable stub corpus (50 replicates, <30s, reproducible)" +
                      (ok ? "" : " (" + why.str() + " )"));
}

void criterion_7() {
    bool ok = true;
    std::ostringstream why;

    auto d = stub_corpus(500, 13);
    auto stub = stub_2sigma();
    eval::ExperimentConfig cfg;
    cfg.tmpl.id = "stub";
    cfg.tmpl.suffix = "Up or down?";
    cfg.sizes = {400};
    cfg.samples = 50;
    cfg.master_seed = 17;
    cfg.lambda_override = 1.0;
    cfg.jobs = worker_count();

    // 60%-accurate injected reference: plr must win at n = 400
    corpus::PredictionSet ref;
    ref.source = "weak";
    Rng rng(21);
    for (const auto& inst : d.instances)
        ref.predicted[inst.id] = rng.uniform01() < 0.6 ? inst.label : 1 - inst.label;
    auto u = eval::run_uncertainty(cfg, d, *stub, ref);
    auto w = eval::determine_winner(u);
    if (!(u.per_size[0].p5 > 0.0)) {
        ok = false;
        why << " p5 " << u.per_size[0].p5;
    }
    if (w.overall != eval::Verdict::Plr) {
        ok = false;
        why << " verdict " << eval::verdict_name(w.overall);
    }

    // reference = the PLR model's own predictions (noise-free stub so the
    // model is exact): differences identically zero, verdict undecided
    auto clean = std::make_unique<provider::StubProvider>(64, 2024, 1e-4);
    clean->add_trigger("soaring", 1.0);
    clean->add_trigger("tumbling", 1.0);
    clean->set_base_scale(1.0);
    auto feats = eval::build_features(d, *clean, cfg);
    glm::DesignMatrix dm{feats.X, feats.source};
    std::vector<int> y;
    for (const auto& inst : d.instances) y.push_back(inst.label);
    glm::FitOptions fo;
    fo.lambda_override = 1.0;
    auto model = glm::fit_ridge_path(dm, y, fo);
    corpus::PredictionSet own;
    own.source = "plr-self";
    for (size_t i = 0; i < d.instances.size(); ++i)
        own.predicted[d.instances[i].id] =
            glm::predict(model, feats.X.row(Eigen::Index(i)).transpose());
    cfg.samples = 25;
    auto u2 = eval::run_uncertainty(cfg, d, *clean, own);
    for (double v : u2.per_size[0].differences)
        if (v != 0.0) {
            ok = false;
            why << " nonzero self-difference " << v;
            break;
        }
    auto w2 = eval::determine_winner(u2);
    if (w2.overall != eval::Verdict::Undecided) {
        ok = false;
        why << " self verdict " << eval::verdict_name(w2.overall);
    }

    report(7, ok, "winner determination at n=400 and the self-reference null case" +
                      (ok ? "" : " (" + why.str() + " )"));
}

void criterion_8() {
    bool ok = true;
    std::ostringstream why;

    auto d = stub_corpus(300, 23);
    // stronger trigger geometry than criterion 6: dominance of the trigger
    // token is about the explanation method, not borderline class overlap
    auto stub = std::make_unique<provider::StubProvider>(64, 2024, 0.25);
    stub->add_trigger("soaring", 3.0);
    stub->add_trigger("tumbling", 3.0);
    stub->set_base_scale(1.0);
    explain::FeatureFn features = [&](const std::string& text) {
        return stub->embed(text).as_eigen();
    };
    std::vector<int> y;
    for (const auto& inst : d.instances) y.push_back(inst.label);

    auto fit_on = [&](const std::vector<size_t>& rows) {
        glm::DesignMatrix dm;
        dm.source = "embedding";
        dm.X.resize(Eigen::Index(rows.size()), 64);
        std::vector<int> yy;
        for (size_t t = 0; t < rows.size(); ++t) {
            dm.X.row(Eigen::Index(t)) = features(d.instances[rows[t]].text).transpose();
            yy.push_back(y[rows[t]]);
        }
        glm::FitOptions fo;
        fo.lambda_override = 1.0;
        return glm::fit_ridge_path(dm, yy, fo);
    };
    auto draw_rows = [&](size_t n, uint64_t seed) {
        for (int attempt = 0;; ++attempt) {
            Rng rng(seed + uint64_t(attempt) * 7919);
            auto pick = rng.sample_indices(d.instances.size(), n);
            int ones = 0;
            for (size_t p : pick) ones += y[p];
            if (ones > 0 && ones < int(n)) return std::vector<size_t>(pick.begin(), pick.end());
        }
    };

    const std::string probe = "analysts say prices keep soaring worldwide";
    int trigger_wins = 0;
    for (uint64_t m = 0; m < 50; ++m) {
        auto model = fit_on(draw_rows(30, 1000 + m));
        auto iv = explain::feature_importances(model, features, probe, 0);
        size_t best = 0;
        for (size_t k = 1; k < iv.normalized.size(); ++k)
            if (iv.normalized[k] > iv.normalized[best]) best = k;
        if (iv.tokens[best] == "soaring") ++trigger_wins;
        // unit population std of the normalised scores
        double mean = 0.0;
        for (double v : iv.normalized) mean += v;
        mean /= double(iv.normalized.size());
        double var = 0.0;
        for (double v : iv.normalized) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / double(iv.normalized.size()));
        if (std::abs(sd - 1.0) > 1e-9) {
            ok = false;
            why << " std " << sd;
        }
    }
    if (trigger_wins < 45) {
        ok = false;
        why << " trigger max in " << trigger_wins << "/50";
    }

    // stability: spread at size 30 exceeds spread at the size-200 baseline
    std::vector<std::string> examples = {
        "shares are soaring this quarter overall",
        "shares are tumbling this quarter overall",
        "the report says revenue is soaring fast",
        "critics note margins keep tumbling lately",
    };
    std::map<size_t, std::vector<std::vector<std::vector<double>>>> by_size;
    for (size_t size : {size_t(30), size_t(200)}) {
        for (uint64_t m = 0; m < 8; ++m) {
            auto model = fit_on(draw_rows(size, 5000 + size * 97 + m));
            std::vector<std::vector<double>> per_example;
            for (const auto& ex : examples)
                per_example.push_back(
                    explain::feature_importances(model, features, ex, 0).normalized);
            by_size[size].push_back(per_example);
        }
    }
    auto rep = explain::stability_decomposition(by_size, 200);
    double spread30 = 0, spread200 = 0, shift30 = 0;
    for (const auto& row : rep.rows) {
        if (row.size == 30) {
            spread30 = row.spread;
            shift30 = row.shift;
        }
        if (row.size == 200) spread200 = row.spread;
    }
    if (!(spread30 > spread200)) {
        ok = false;
        why << " spread(30) " << spread30 << " <= spread(200) " << spread200;
    }

    // element-wise identity: recompute spread and shift independently
    auto manual = [&](size_t size) {
        const auto& models = by_size[size];
        const auto& base = by_size[200];
        size_t n_models = models.size();
        double spread = 0, shift = 0;
        size_t spread_n = 0, shift_n = 0;
        for (size_t e = 0; e < examples.size(); ++e)
            for (size_t t = 0; t < models[0][e].size(); ++t) {
                double mu = 0, mub = 0;
                for (size_t m = 0; m < n_models; ++m) mu += models[m][e][t];
                mu /= double(n_models);
                for (size_t m = 0; m < base.size(); ++m) mub += base[m][e][t];
                mub /= double(base.size());
                for (size_t m = 0; m < n_models; ++m) {
                    spread += std::abs(models[m][e][t] - mu);
                    ++spread_n;
                }
                shift += std::abs(mu - mub);
                ++shift_n;
            }
        return std::pair<double, double>{spread / double(spread_n), shift / double(shift_n)};
    };
    auto [ms30, msh30] = manual(30);
    if (std::abs(ms30 - spread30) > 1e-12 || std::abs(msh30 - shift30) > 1e-12) {
        ok = false;
        why << " identity residual spread " << std::abs(ms30 - spread30) << " shift "
            << std::abs(msh30 - shift30);
    }

    report(8, ok, "trigger-token importance dominance, unit-std normalisation, and stability" +
                      (ok ? "" : " (" + why.str() + " )"));
}

void criterion_9() {
    bool ok = true;
    std::ostringstream why;
    Rng rng(77);
    Eigen::MatrixXd X(200, 10);
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 10; ++j) X(i, j) = rng.gauss() * std::pow(0.7, j);
    auto m = decomp::fit_pca(X, 8);
    double orth =
        (m.components * m.components.transpose() - Eigen::MatrixXd::Identity(8, 8))
            .cwiseAbs()
            .maxCoeff();
    if (orth > 1e-10) {
        ok = false;
        why << " orthonormality " << orth;
    }
    double cum = 0;
    for (Eigen::Index i = 0; i < 8; ++i) {
        if (i > 0 && m.explained_variance_ratio[i] > m.explained_variance_ratio[i - 1] + 1e-12) {
            ok = false;
            why << " EVR increases at " << i;
        }
        cum += m.explained_variance_ratio[i];
    }
    if (cum > 1.0 + 1e-9) {
        ok = false;
        why << " cumulative EVR " << cum;
    }

    Eigen::VectorXd dir(6);
    dir << 1, -2, 0.5, 3, -1, 2;
    dir /= dir.norm();
    Eigen::MatrixXd S(40, 6);
    for (int i = 0; i < 40; ++i) S.row(i) = (rng.gauss() * dir).transpose();
    auto ms = decomp::fit_pca(S, 1);
    if (std::abs(ms.explained_variance_ratio[0] - 1.0) > 1e-10) {
        ok = false;
        why << " single-direction EVR " << ms.explained_variance_ratio[0];
    }
    report(9, ok, "PCA orthonormality and explained-variance properties" +
                      (ok ? "" : " (" + why.str() + " )"));
}

// ---------------------------------------------------------------------------
// 10. End-to-end CLI run against a recorded embedding dump.

void criterion_10() {
    bool ok = true;
    std::ostringstream why;
    fs::path dir = fs::temp_directory_path() / "plr_accept_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto P = [&](const std::string& name) { return (dir / name).string(); };

    // dataset + task config
    corpus::LabeledDataset d = stub_corpus(60, 31);
    {
        std::ofstream csv(P("dataset.csv"));
        csv << "id,text,label\n";
        for (const auto& inst : d.instances)
            csv << inst.id << ',' << inst.text << ',' << d.classes[size_t(inst.label)] << "\n";
    }
    json tmpl_json{{"id", "e2e"},
                   {"prefix", "Market report:"},
                   {"suffix", "Up or down?"},
                   {"answer_style", "free-word"},
                   {"answer_words", {"up", "down"}},
                   {"terminal_cue", "Answer:"}};
    json task{{"dataset",
               {{"path", P("dataset.csv")}, {"format", "csv"}, {"class_order", {"up", "down"}}}},
              {"template", tmpl_json},
              {"candidate_answers", {"up", "down"}}};
    std::ofstream(P("task.json")) << task.dump(2);

    const std::string stub_flags =
        "--provider stub --dim 32 --stub-seed 5 --stub-sigma 0.3 "
        "--stub-trigger soaring=2 --stub-trigger tumbling=-2 --stub-base 1";

    auto step = [&](const std::string& name, const std::string& args) {
        auto r = run_cli(args);
        if (r.exit_code != 0) {
            ok = false;
            why << " " << name << " exit " << r.exit_code << ": "
                << r.output.substr(0, 160);
        }
        return r;
    };

    // record the dump, then run everything else through the file provider
    step("embed", "embed --task " + P("task.json") + " --out " + P("store") + " " + stub_flags +
                      " --with-logits --with-heads");
    const std::string file_flags = "--provider file --store " + P("store");

    json exp{{"task_path", P("task.json")}, {"sizes", {8, 24}},  {"replicates", 5},
             {"samples", 10},               {"master_seed", 3},  {"lambda", 1.0}};
    std::ofstream(P("exp.json")) << exp.dump(2);
    step("learning-curve", "learning-curve --config " + P("exp.json") + " " + file_flags +
                               " --out " + P("curve"));
    for (const char* f : {"curve/results.csv", "curve/summary.json", "curve/manifest.json"})
        if (!fs::exists(dir / f)) {
            ok = false;
            why << " missing " << f;
        }

    {
        std::ofstream ref(P("ref.csv"));
        ref << "id,predicted_label\n";
        Rng rng(41);
        for (const auto& inst : d.instances) {
            int pred = rng.uniform01() < 0.6 ? inst.label : 1 - inst.label;
            ref << inst.id << ',' << d.classes[size_t(pred)] << "\n";
        }
    }
    json expu{{"task_path", P("task.json")}, {"sizes", {10}}, {"samples", 10},
              {"master_seed", 4},            {"lambda", 1.0}};
    std::ofstream(P("expu.json")) << expu.dump(2);
    step("uncertainty", "uncertainty --config " + P("expu.json") + " --reference " + P("ref.csv") +
                            " " + file_flags + " --out " + P("unc"));
    for (const char* f : {"unc/uncertainty.csv", "unc/summary.json", "unc/manifest.json"})
        if (!fs::exists(dir / f)) {
            ok = false;
            why << " missing " << f;
        }

    step("pca", "pca --store " + P("store") + " --components 5 --out " + P("pca.csv"));
    step("lasso", "lasso-path --task " + P("task.json") + " " + file_flags +
                      " --budget 3 --seed 1 --out " + P("lasso.csv"));
    step("train", "train --task " + P("task.json") + " " + file_flags + " --lambda 1 --out " +
                      P("model.json"));
    for (const char* f : {"pca.csv", "lasso.csv", "model.json"})
        if (!fs::exists(dir / f)) {
            ok = false;
            why << " missing " << f;
        }

    // token-deletion explanations need the perturbed prompts in the store:
    // append them with the same stub configuration the dump was recorded with
    {
        auto inner = std::make_shared<provider::StubProvider>(32, 5, 0.3);
        inner->add_trigger("soaring", 2.0);
        inner->add_trigger("tumbling", -2.0);
        inner->set_base_scale(1.0);
        auto cache = std::make_shared<provider::EmbeddingCache>(P("store"));
        provider::CachingProvider prov(inner, cache);
        auto tmpl = prompting::PromptTemplate::from_json(tmpl_json);
        std::ofstream texts(P("texts.jsonl"));
        std::ofstream ann(P("ann.jsonl"));
        for (size_t i = 0; i < 2; ++i) {
            const auto& inst = d.instances[i];
            texts << json{{"id", inst.id}, {"text", inst.text}}.dump() << "\n";
            auto tokens = explain::tokenize_words(inst.text);
            for (size_t k = 0; k < tokens.size(); ++k) {
                std::string reduced;
                for (size_t t = 0; t < tokens.size(); ++t) {
                    if (t == k) continue;
                    if (!reduced.empty()) reduced += ' ';
                    reduced += tokens[t];
                }
                prov.embed(prompting::render_prompt(tmpl, reduced));
            }
            std::vector<double> sa, sb;
            for (size_t k = 0; k < tokens.size(); ++k) {
                bool trig = tokens[k] == "soaring" || tokens[k] == "tumbling";
                sa.push_back(trig ? 2.0 : double(k % 2));
                sb.push_back(trig ? 1.5 : double((k + 1) % 2));
            }
            ann << json{{"id", inst.id}, {"tokens", tokens}, {"scores_a", sa}, {"scores_b", sb}}
                       .dump()
                << "\n";
        }
    }
    auto ex = step("explain", "explain --model " + P("model.json") + " --texts " +
                                  P("texts.jsonl") + " --annotations " + P("ann.jsonl") + " " +
                                  file_flags + " --class 0 --out " + P("importances.jsonl"));
    if (ex.output.find("agreement annotator_a=") == std::string::npos) {
        ok = false;
        why << " no agreement line";
    }
    if (!fs::exists(dir / "importances.jsonl")) {
        ok = false;
        why << " missing importances.jsonl";
    } else {
        std::ifstream imp(P("importances.jsonl"));
        std::string line;
        int rows = 0;
        while (std::getline(imp, line))
            if (!line.empty()) {
                auto j = json::parse(line);
                if (!j.contains("normalized")) {
                    ok = false;
                    why << " importance row lacks scores";
                }
                ++rows;
            }
        if (rows != 2) {
            ok = false;
            why << " importance rows " << rows;
        }
    }

    if (ok) fs::remove_all(dir);
    report(10, ok, "full pipeline against a recorded embedding dump emits all artifacts" +
                       (ok ? "" : " (" + why.str() + " )"));
}

} // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (g_failures > 0) {
        std::cout << g_failures << " criterion(s) failed" << std::endl;
        return 1;
    }
    std::cout << "all 10 criteria passed" << std::endl;
    return 0;
}
