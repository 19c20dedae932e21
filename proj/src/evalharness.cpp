#include "plr/evalharness.hpp"

#include "plr/decomp.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>

namespace plr::eval {

using nlohmann::json;

std::string feature_source_name(FeatureSource s) {
    switch (s) {
        case FeatureSource::Embedding: return "embedding";
        case FeatureSource::Logits: return "logits";
        case FeatureSource::PcaScores: return "pca-scores";
        case FeatureSource::SentenceEmbedding: return "sentence-embedding";
    }
    return "embedding";
}

FeatureSource feature_source_from_name(const std::string& s) {
    if (s == "embedding") return FeatureSource::Embedding;
    if (s == "logits") return FeatureSource::Logits;
    if (s == "pca-scores") return FeatureSource::PcaScores;
    if (s == "sentence-embedding") return FeatureSource::SentenceEmbedding;
    throw Error("unknown feature source: " + s);
}

std::string method_name(Method m) {
    switch (m) {
        case Method::Plr: return "plr";
        case Method::RestrictedArgmax: return "restricted-argmax";
        case Method::ReferencePredictions: return "reference-predictions";
    }
    return "plr";
}

Method method_from_name(const std::string& s) {
    if (s == "plr") return Method::Plr;
    if (s == "restricted-argmax") return Method::RestrictedArgmax;
    if (s == "reference-predictions") return Method::ReferencePredictions;
    throw Error("unknown method: " + s);
}

std::string metric_name(Metric m) { return m == Metric::Accuracy ? "accuracy" : "macro_f1"; }

Metric metric_from_name(const std::string& s) {
    if (s == "accuracy") return Metric::Accuracy;
    if (s == "macro_f1") return Metric::MacroF1;
    throw Error("unknown metric: " + s);
}

std::string verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Plr: return "plr";
        case Verdict::Reference: return "reference";
        case Verdict::Undecided: return "undecided";
    }
    return "undecided";
}

namespace {

// Run fn(0..n-1) across `jobs` threads; any thrown error is re-thrown once.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    jobs = std::max(1, std::min<int>(jobs, int(n)));
    if (jobs == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

Eigen::MatrixXd embed_rows(const corpus::LabeledDataset& d, provider::Provider& provider,
                           const prompting::PromptTemplate& tmpl, bool bare_text, int jobs) {
    Eigen::MatrixXd X;
    std::vector<Eigen::VectorXd> rows(d.instances.size());
    parallel_for(d.instances.size(), jobs, [&](size_t i) {
        std::string prompt =
            bare_text ? d.instances[i].text : prompting::render_prompt(tmpl, d.instances[i].text);
        rows[i] = provider.embed(prompt).as_eigen();
    });
    if (rows.empty()) throw Error("build_features: empty dataset");
    X.resize(Eigen::Index(rows.size()), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != X.cols()) throw Error("build_features: inconsistent embedding dims");
        X.row(Eigen::Index(i)) = rows[i].transpose();
    }
    return X;
}

} // namespace

FeatureMatrix build_features(const corpus::LabeledDataset& d, provider::Provider& provider,
                             const ExperimentConfig& cfg) {
    FeatureMatrix out;
    switch (cfg.feature_source) {
        case FeatureSource::Embedding:
            out.X = embed_rows(d, provider, cfg.tmpl, false, cfg.jobs);
            out.source = "embedding";
            break;
        case FeatureSource::SentenceEmbedding:
            out.X = embed_rows(d, provider, cfg.tmpl, true, cfg.jobs);
            out.source = "embedding";
            break;
        case FeatureSource::Logits: {
            if (cfg.candidate_answers.size() != d.classes.size())
                throw Error("build_features: need one candidate answer token per class");
            out.X.resize(Eigen::Index(d.instances.size()),
                         Eigen::Index(cfg.candidate_answers.size()));
            std::mutex mu;
            parallel_for(d.instances.size(), cfg.jobs, [&](size_t i) {
                auto logits = provider.candidate_logits(
                    prompting::render_prompt(cfg.tmpl, d.instances[i].text),
                    cfg.candidate_answers);
                std::lock_guard<std::mutex> lock(mu);
                for (size_t c = 0; c < cfg.candidate_answers.size(); ++c)
                    out.X(Eigen::Index(i), Eigen::Index(c)) =
                        logits.at(cfg.candidate_answers[c]);
            });
            out.source = "logits";
            break;
        }
        case FeatureSource::PcaScores: {
            // PCA is fitted to all data points, not only labelled training rows.
            Eigen::MatrixXd E = embed_rows(d, provider, cfg.tmpl, false, cfg.jobs);
            auto pca = decomp::fit_pca(E, cfg.pca_components, cfg.pca_normalize);
            out.X = decomp::transform_rows(pca, E);
            out.source = "pca-scores";
            break;
        }
    }
    return out;
}

namespace {

std::vector<int> labels_of(const corpus::LabeledDataset& d) {
    std::vector<int> y;
    y.reserve(d.instances.size());
    for (const auto& inst : d.instances) y.push_back(inst.label);
    return y;
}

double metric_value(Metric m, const std::vector<int>& preds, const std::vector<int>& labels,
                    int n_classes) {
    return m == Metric::Accuracy ? accuracy(preds, labels) : macro_f1(preds, labels, n_classes);
}

glm::FitOptions fit_options(const ExperimentConfig& cfg, const std::string& source) {
    glm::FitOptions o;
    o.lambda_override = cfg.lambda_override;
    o.standardize = source != "pca-scores"; // PCA scores are used as-is
    return o;
}

// Draw `size` row indices from `pool` without replacement, re-drawing until
// every class is represented at least `min_per_class` times.
std::vector<size_t> draw_training(const std::vector<size_t>& pool, const std::vector<int>& y,
                                  int n_classes, size_t size, int min_per_class, bool stratified,
                                  Rng& rng) {
    if (size > pool.size()) throw Error("training size exceeds the available pool");
    if (stratified) {
        std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes));
        for (size_t i : pool) by_class[size_t(y[i])].push_back(i);
        size_t quota = size / size_t(n_classes);
        if (quota < size_t(min_per_class))
            throw Error("stratified draw: size too small for the per-class minimum");
        std::vector<size_t> out;
        for (auto& members : by_class) {
            if (members.size() < quota) throw Error("stratified draw: class pool too small");
            for (size_t p : rng.sample_indices(members.size(), quota))
                out.push_back(members[p]);
        }
        return out;
    }
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<size_t> out;
        for (size_t p : rng.sample_indices(pool.size(), size)) out.push_back(pool[p]);
        std::vector<int> counts(static_cast<size_t>(n_classes), 0);
        for (size_t i : out) ++counts[size_t(y[i])];
        if (*std::min_element(counts.begin(), counts.end()) >= min_per_class) return out;
    }
    throw Error("could not draw a training sample with every class represented "
                "(10000 attempts)");
}

std::vector<int> fixed_predictions(const ExperimentConfig& cfg, const corpus::LabeledDataset& d,
                                   provider::Provider& provider,
                                   const corpus::PredictionSet* reference) {
    std::vector<int> preds(d.instances.size(), -1);
    if (cfg.method == Method::ReferencePredictions) {
        if (!reference) throw Error("method reference-predictions needs a prediction set");
        for (size_t i = 0; i < d.instances.size(); ++i) {
            auto it = reference->predicted.find(d.instances[i].id);
            if (it == reference->predicted.end())
                throw Error("reference predictions missing id '" + d.instances[i].id + "'");
            preds[i] = it->second;
        }
    } else { // restricted-argmax
        if (cfg.candidate_answers.size() != d.classes.size())
            throw Error("restricted-argmax needs one candidate answer token per class");
        parallel_for(d.instances.size(), cfg.jobs, [&](size_t i) {
            auto logits = provider.candidate_logits(
                prompting::render_prompt(cfg.tmpl, d.instances[i].text), cfg.candidate_answers);
            preds[i] = glm::classify_restricted_argmax(logits, cfg.candidate_answers);
        });
    }
    return preds;
}

} // namespace

CurveResult run_learning_curve(const ExperimentConfig& cfg, const corpus::LabeledDataset& d,
                               provider::Provider& provider,
                               const corpus::PredictionSet* reference) {
    if (cfg.sizes.empty()) throw Error("run_learning_curve: no training sizes configured");
    if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end()))
        throw Error("run_learning_curve: sizes must be ascending");
    if (cfg.replicates < 1) throw Error("run_learning_curve: replicates must be >= 1");

    const size_t K = d.instances.size();
    const int C = int(d.classes.size());
    const std::vector<int> y = labels_of(d);
    const size_t n_test = std::max<size_t>(1, K / 5);
    if (cfg.sizes.back() > K - n_test)
        throw Error("run_learning_curve: largest size exceeds the 80% training pool");

    FeatureMatrix feats;
    std::vector<int> fixed;
    if (cfg.method == Method::Plr)
        feats = build_features(d, provider, cfg);
    else
        fixed = fixed_predictions(cfg, d, provider, reference);

    CurveResult out;
    out.metric = cfg.metric;
    out.per_size.resize(cfg.sizes.size());
    for (size_t si = 0; si < cfg.sizes.size(); ++si) {
        out.per_size[si].size = cfg.sizes[si];
        out.per_size[si].values.resize(size_t(cfg.replicates));
    }

    parallel_for(size_t(cfg.replicates), cfg.jobs, [&](size_t r) {
        Rng split_rng(stable_hash64({cfg.master_seed, uint64_t(r), 0x7e57ULL}));
        auto test_pick = split_rng.sample_indices(K, n_test);
        std::vector<bool> in_test(K, false);
        std::vector<size_t> test_idx;
        for (size_t p : test_pick) {
            in_test[p] = true;
            test_idx.push_back(p);
        }
        std::sort(test_idx.begin(), test_idx.end());
        std::vector<size_t> pool;
        for (size_t i = 0; i < K; ++i)
            if (!in_test[i]) pool.push_back(i);

        std::vector<int> test_labels;
        for (size_t i : test_idx) test_labels.push_back(y[i]);

        for (size_t si = 0; si < cfg.sizes.size(); ++si) {
            std::vector<int> preds;
            if (cfg.method == Method::Plr) {
                Rng rng(stable_hash64({cfg.master_seed, uint64_t(r), uint64_t(si), 0xd2a3ULL}));
                auto train =
                    draw_training(pool, y, C, cfg.sizes[si], 1, cfg.stratified_draws, rng);
                glm::DesignMatrix dm;
                dm.source = feats.source;
                dm.X.resize(Eigen::Index(train.size()), feats.X.cols());
                std::vector<int> ytr;
                for (size_t t = 0; t < train.size(); ++t) {
                    dm.X.row(Eigen::Index(t)) = feats.X.row(Eigen::Index(train[t]));
                    ytr.push_back(y[train[t]]);
                }
                auto model = glm::fit_ridge_path(dm, ytr, fit_options(cfg, feats.source));
                for (size_t i : test_idx)
                    preds.push_back(
                        glm::predict(model, feats.X.row(Eigen::Index(i)).transpose()));
            } else {
                for (size_t i : test_idx) preds.push_back(fixed[i]);
            }
            out.per_size[si].values[r] = metric_value(cfg.metric, preds, test_labels, C);
        }
    });

    for (size_t si = 0; si < cfg.sizes.size(); ++si)
        out.per_size[si].ci = stats::bootstrap_mean_ci(
            out.per_size[si].values, 2000, 1.96,
            stable_hash64({cfg.master_seed, 0xb007ULL, uint64_t(si)}));

    if (reference) {
        std::vector<int> refp(K);
        for (size_t i = 0; i < K; ++i) {
            auto it = reference->predicted.find(d.instances[i].id);
            if (it == reference->predicted.end())
                throw Error("reference predictions missing id '" + d.instances[i].id + "'");
            refp[i] = it->second;
        }
        out.reference_metric = metric_value(cfg.metric, refp, y, C);
    }
    return out;
}

namespace {

// Stratified fold assignment: members of each class are shuffled and dealt
// round-robin across the k folds.
std::vector<int> stratified_folds(const std::vector<size_t>& sample, const std::vector<int>& y,
                                  int n_classes, int k, Rng& rng) {
    std::vector<int> fold(sample.size(), -1);
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes)); // positions in `sample`
    for (size_t p = 0; p < sample.size(); ++p) by_class[size_t(y[sample[p]])].push_back(p);
    int next_fold = 0;
    for (auto& members : by_class) {
        auto order = rng.sample_indices(members.size(), members.size());
        for (size_t j = 0; j < order.size(); ++j) {
            fold[members[order[j]]] = next_fold;
            next_fold = (next_fold + 1) % k;
        }
    }
    return fold;
}

} // namespace

UncertaintyResult run_uncertainty(const ExperimentConfig& cfg, const corpus::LabeledDataset& d,
                                  provider::Provider& provider,
                                  const corpus::PredictionSet& reference) {
    if (cfg.sizes.empty()) throw Error("run_uncertainty: no sizes configured");
    if (cfg.samples < 2) throw Error("run_uncertainty: need at least 2 samples");
    const size_t K = d.instances.size();
    const int C = int(d.classes.size());
    const std::vector<int> y = labels_of(d);
    for (size_t n : cfg.sizes)
        if (n < 2 * size_t(C))
            throw Error("run_uncertainty: size " + std::to_string(n) +
                        " cannot hold 2 instances of each of " + std::to_string(C) + " classes");

    std::vector<int> refp(K);
    for (size_t i = 0; i < K; ++i) {
        auto it = reference.predicted.find(d.instances[i].id);
        if (it == reference.predicted.end())
            throw Error("reference predictions missing id '" + d.instances[i].id + "'");
        refp[i] = it->second;
    }

    FeatureMatrix feats = build_features(d, provider, cfg);
    std::vector<size_t> everything(K);
    for (size_t i = 0; i < K; ++i) everything[i] = i;

    UncertaintyResult out;
    out.per_size.resize(cfg.sizes.size());
    for (size_t si = 0; si < cfg.sizes.size(); ++si) {
        auto& us = out.per_size[si];
        const size_t n = cfg.sizes[si];
        us.size = n;
        us.plr_estimates.resize(size_t(cfg.samples));
        us.reference_estimates.resize(size_t(cfg.samples));

        parallel_for(size_t(cfg.samples), cfg.jobs, [&](size_t j) {
            Rng rng(stable_hash64({cfg.master_seed, 0xca1cULL, uint64_t(si), uint64_t(j)}));
            auto sample = draw_training(everything, y, C, n, 2, false, rng);
            const int k = int(std::min<size_t>(20, n));
            auto fold = stratified_folds(sample, y, C, k, rng);

            int correct = 0;
            for (int f = 0; f < k; ++f) {
                std::vector<size_t> tr_pos, te_pos;
                for (size_t p = 0; p < sample.size(); ++p)
                    (fold[p] == f ? te_pos : tr_pos).push_back(p);
                if (te_pos.empty()) continue;
                glm::DesignMatrix dm;
                dm.source = feats.source;
                dm.X.resize(Eigen::Index(tr_pos.size()), feats.X.cols());
                std::vector<int> ytr;
                for (size_t t = 0; t < tr_pos.size(); ++t) {
                    dm.X.row(Eigen::Index(t)) =
                        feats.X.row(Eigen::Index(sample[tr_pos[t]]));
                    ytr.push_back(y[sample[tr_pos[t]]]);
                }
                auto model = glm::fit_ridge_path(dm, ytr, fit_options(cfg, feats.source));
                for (size_t p : te_pos) {
                    int pred = glm::predict(
                        model, feats.X.row(Eigen::Index(sample[p])).transpose());
                    if (pred == y[sample[p]]) ++correct;
                }
            }
            us.plr_estimates[j] = double(correct) / double(n);

            int ref_correct = 0;
            for (size_t i : sample)
                if (refp[i] == y[i]) ++ref_correct;
            us.reference_estimates[j] = double(ref_correct) / double(n);
        });

        us.differences.resize(size_t(cfg.samples));
        for (size_t j = 0; j < size_t(cfg.samples); ++j)
            us.differences[j] = us.plr_estimates[j] - us.reference_estimates[j];
        us.mean_difference =
            std::accumulate(us.differences.begin(), us.differences.end(), 0.0) /
            double(us.differences.size());
        us.p5 = stats::quantile(us.differences, 0.05);
        us.p95 = stats::quantile(us.differences, 0.95);
    }
    return out;
}

WinnerReport determine_winner(const UncertaintyResult& u) {
    WinnerReport w;
    for (const auto& s : u.per_size) {
        if (s.p5 > 0.0)
            w.per_size.push_back(Verdict::Plr);
        else if (s.p95 < 0.0)
            w.per_size.push_back(Verdict::Reference);
        else
            w.per_size.push_back(Verdict::Undecided);
    }
    // Overall: first size whose (decided) verdict persists at all larger sizes.
    for (size_t i = 0; i < w.per_size.size(); ++i) {
        if (w.per_size[i] == Verdict::Undecided) continue;
        bool persists = true;
        for (size_t j = i + 1; j < w.per_size.size(); ++j)
            if (w.per_size[j] != w.per_size[i]) persists = false;
        if (persists) {
            w.overall = w.per_size[i];
            w.first_winning_size = u.per_size[i].size;
            break;
        }
    }
    return w;
}

std::optional<double> min_sample_to_win(const CurveResult& c, double reference_metric,
                                        int n_classes) {
    if (n_classes < 1) throw Error("min_sample_to_win: invalid class count");
    const auto& ps = c.per_size;
    for (size_t i = 0; i < ps.size(); ++i) {
        bool wins = true;
        for (size_t j = i; j < ps.size(); ++j)
            if (ps[j].ci.mean <= reference_metric) wins = false;
        if (wins) return double(ps[i].size) / double(n_classes);
    }
    return std::nullopt;
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw Error("accuracy: empty or mismatched inputs");
    size_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++correct;
    return double(correct) / double(preds.size());
}

double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int n_classes) {
    if (preds.empty() || preds.size() != labels.size())
        throw Error("macro_f1: empty or mismatched inputs");
    if (n_classes < 2) throw Error("macro_f1: need at least 2 classes");
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        long tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c && labels[i] == c) ++tp;
            else if (preds[i] == c) ++fp;
            else if (labels[i] == c) ++fn;
        }
        double denom = double(2 * tp + fp + fn);
        sum += denom > 0.0 ? 2.0 * double(tp) / denom : 0.0; // absent class counts as 0
    }
    return sum / double(n_classes);
}

void write_curve_csv(const std::string& path, const CurveResult& c) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "size,replicate,metric,value\n";
    char buf[64];
    for (const auto& s : c.per_size)
        for (size_t r = 0; r < s.values.size(); ++r) {
            std::snprintf(buf, sizeof buf, "%.17g", s.values[r]);
            out << s.size << ',' << r << ',' << metric_name(c.metric) << ',' << buf << "\n";
        }
}

void write_uncertainty_csv(const std::string& path, const UncertaintyResult& u) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "size,replicate,metric,value\n";
    char buf[64];
    auto emit = [&](size_t size, size_t r, const char* name, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << size << ',' << r << ',' << name << ',' << buf << "\n";
    };
    for (const auto& s : u.per_size)
        for (size_t r = 0; r < s.differences.size(); ++r) {
            emit(s.size, r, "plr_cv_accuracy", s.plr_estimates[r]);
            emit(s.size, r, "reference_accuracy", s.reference_estimates[r]);
            emit(s.size, r, "difference", s.differences[r]);
        }
}

json curve_summary(const CurveResult& c) {
    json per_size = json::array();
    for (const auto& s : c.per_size)
        per_size.push_back({{"size", s.size},
                            {"mean", s.ci.mean},
                            {"ci_lower", s.ci.lower},
                            {"ci_upper", s.ci.upper}});
    json j{{"metric", metric_name(c.metric)}, {"per_size", per_size}};
    if (c.reference_metric) j["reference_metric"] = *c.reference_metric;
    return j;
}

json uncertainty_summary(const UncertaintyResult& u, const WinnerReport& w) {
    json per_size = json::array();
    for (size_t i = 0; i < u.per_size.size(); ++i) {
        const auto& s = u.per_size[i];
        per_size.push_back({{"size", s.size},
                            {"mean_difference", s.mean_difference},
                            {"p5", s.p5},
                            {"p95", s.p95},
                            {"verdict", verdict_name(w.per_size[i])}});
    }
    json j{{"per_size", per_size}, {"overall", verdict_name(w.overall)}};
    if (w.first_winning_size) j["first_winning_size"] = *w.first_winning_size;
    return j;
}

} // namespace plr::eval
