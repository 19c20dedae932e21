#include "plr/common.hpp"
#include "plr/corpus.hpp"
#include "plr/decomp.hpp"
#include "plr/evalharness.hpp"
#include "plr/explain.hpp"
#include "plr/glm.hpp"
#include "plr/prompting.hpp"
#include "plr/provider.hpp"
#include "plr/stats.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace plr;

namespace {

constexpr const char* kVersion = "0.1.0";

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("invalid JSON in " + path + ": " + e.what());
    }
}

std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(data);
}

// --------------------------------------------------------------------------
// Provider selection (shared flags)

struct ProviderFlags {
    std::string kind = "stub"; // http | file | stub
    std::string endpoint;      // http
    std::string store_dir;     // file
    std::string cache_dir;     // optional cache wrapper
    std::string model_id = "stub";
    size_t dim = 64;
    uint64_t stub_seed = 1;
    double stub_sigma = 0.5;
    double stub_base = 0.0;
    std::vector<std::string> stub_triggers; // "word=scale"
};

void add_provider_flags(CLI::App* cmd, ProviderFlags& pf) {
    cmd->add_option("--provider", pf.kind, "Embedding source: http, file, or stub")
        ->check(CLI::IsMember({"http", "file", "stub"}));
    cmd->add_option("--endpoint", pf.endpoint,
                    "HTTP endpoint (host:port); also read from PLR_ENDPOINT")
        ->envname("PLR_ENDPOINT");
    cmd->add_option("--store", pf.store_dir, "Recorded-dump directory for --provider file");
    cmd->add_option("--cache", pf.cache_dir, "Embedding cache directory (wraps http/stub)");
    cmd->add_option("--model-id", pf.model_id, "Model identifier used in cache keys");
    cmd->add_option("--dim", pf.dim, "Declared embedding dimension");
    cmd->add_option("--stub-seed", pf.stub_seed, "Stub provider seed");
    cmd->add_option("--stub-sigma", pf.stub_sigma, "Stub provider noise sigma");
    cmd->add_option("--stub-base", pf.stub_base, "Stub provider base-direction scale");
    cmd->add_option("--stub-trigger", pf.stub_triggers,
                    "Stub trigger as word=scale (repeatable)");
}

std::shared_ptr<provider::Provider> make_provider(const ProviderFlags& pf) {
    std::shared_ptr<provider::Provider> p;
    if (pf.kind == "file") {
        if (pf.store_dir.empty()) throw Error("--provider file requires --store");
        p = std::make_shared<provider::FileProvider>(pf.store_dir);
    } else if (pf.kind == "http") {
        if (pf.endpoint.empty())
            throw Error("--provider http requires --endpoint (or PLR_ENDPOINT)");
        p = std::make_shared<provider::HttpProvider>(pf.endpoint, pf.model_id, pf.dim);
    } else {
        auto stub = std::make_shared<provider::StubProvider>(pf.dim, pf.stub_seed, pf.stub_sigma);
        stub->set_base_scale(pf.stub_base);
        for (const auto& t : pf.stub_triggers) {
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw Error("--stub-trigger must look like word=scale: " + t);
            stub->add_trigger(t.substr(0, eq), std::stod(t.substr(eq + 1)));
        }
        p = stub;
    }
    if (!pf.cache_dir.empty() && pf.kind != "file") {
        auto cache = std::make_shared<provider::EmbeddingCache>(pf.cache_dir);
        p = std::make_shared<provider::CachingProvider>(p, cache);
    }
    return p;
}

json provider_descriptor(const ProviderFlags& pf) {
    json j{{"kind", pf.kind}, {"model_id", pf.model_id}, {"dim", pf.dim}};
    if (!pf.endpoint.empty()) j["endpoint"] = pf.endpoint;
    if (!pf.store_dir.empty()) j["store"] = pf.store_dir;
    if (!pf.cache_dir.empty()) j["cache"] = pf.cache_dir;
    if (pf.kind == "stub") {
        j["stub_seed"] = pf.stub_seed;
        j["stub_sigma"] = pf.stub_sigma;
        j["stub_triggers"] = pf.stub_triggers;
    }
    return j;
}

// --------------------------------------------------------------------------
// Task / experiment configuration

struct TaskSetup {
    corpus::LabeledDataset dataset;
    prompting::PromptTemplate tmpl;
    std::vector<std::string> candidate_answers;
    json resolved; // echoed into the manifest
};

TaskSetup load_task(const std::string& path) {
    json cfg = read_json_file(path);
    std::vector<std::string> problems;
    if (!cfg.contains("dataset")) problems.push_back("missing 'dataset'");
    if (!cfg.contains("template") && !cfg.contains("variant_parts"))
        problems.push_back("need 'template' or 'variant_parts'");
    if (!problems.empty()) {
        std::string msg = "task config " + path + ":";
        for (const auto& p : problems) msg += " " + p + ";";
        throw Error(msg);
    }

    TaskSetup t;
    const json& ds = cfg.at("dataset");
    corpus::Format fmt =
        ds.value("format", std::string("csv")) == "jsonl" ? corpus::Format::Jsonl
                                                          : corpus::Format::Csv;
    std::optional<std::vector<std::string>> order;
    if (ds.contains("class_order")) order = ds.at("class_order").get<std::vector<std::string>>();
    t.dataset = corpus::load_dataset(ds.at("path").get<std::string>(), fmt, order);

    uint64_t seed = 0;
    if (cfg.contains("subsample")) {
        const json& ss = cfg.at("subsample");
        seed = ss.value("seed", uint64_t(0));
        size_t size = ss.value("size", size_t(0));
        if (size > 0)
            t.dataset = corpus::subsample(t.dataset, size, ss.value("balance", false), seed);
    }
    size_t trunc = cfg.value("truncate_words", size_t(0));
    if (trunc > 0)
        for (auto& inst : t.dataset.instances)
            inst.text = corpus::truncate_text(inst.text, trunc);

    if (cfg.contains("template")) {
        t.tmpl = prompting::PromptTemplate::from_json(cfg.at("template"));
    } else {
        auto parts = prompting::variant_parts_from_json(cfg.at("variant_parts"));
        std::string variant = cfg.value("variant", std::string("baseline"));
        bool found = false;
        for (auto& v : prompting::builtin_variants(parts, seed)) {
            if (v.id == parts.task_id + "/" + variant) {
                t.tmpl = v;
                found = true;
            }
        }
        if (!found) throw Error("unknown prompt variant '" + variant + "' in " + path);
    }
    t.candidate_answers =
        cfg.value("candidate_answers", std::vector<std::string>{});
    t.resolved = cfg;
    t.resolved["template"] = t.tmpl.to_json();
    return t;
}

eval::ExperimentConfig load_experiment(const json& cfg, const TaskSetup& task) {
    eval::ExperimentConfig e;
    e.tmpl = task.tmpl;
    e.candidate_answers = task.candidate_answers;
    e.feature_source =
        eval::feature_source_from_name(cfg.value("feature_source", std::string("embedding")));
    e.pca_components = cfg.value("pca_components", 10);
    e.pca_normalize = cfg.value("pca_normalize", false);
    e.method = eval::method_from_name(cfg.value("method", std::string("plr")));
    e.sizes = cfg.at("sizes").get<std::vector<size_t>>();
    e.replicates = cfg.value("replicates", 50);
    e.samples = cfg.value("samples", 250);
    e.master_seed = cfg.value("master_seed", uint64_t(0));
    e.metric = eval::metric_from_name(cfg.value("metric", std::string("accuracy")));
    if (cfg.contains("lambda") && !cfg.at("lambda").is_null())
        e.lambda_override = cfg.at("lambda").get<double>();
    e.stratified_draws = cfg.value("stratified", false);
    return e;
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const json& resolved_config, const ProviderFlags& pf,
                    const std::map<std::string, std::string>& input_files) {
    json inputs;
    for (const auto& [name, path] : input_files)
        inputs[name] = json{{"path", path}, {"sha256", file_sha256(path)}};
    json m{{"command", command},
           {"config", resolved_config},
           {"provider", provider_descriptor(pf)},
           {"inputs", inputs},
           {"version", kVersion}};
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write " + out_path);
    out << m.dump(2) << "\n";
}

// --------------------------------------------------------------------------
// Model files

struct SavedModel {
    glm::FittedModel model;
    std::vector<std::string> classes;
    prompting::PromptTemplate tmpl;
    std::string feature_source;
    std::optional<decomp::PCAModel> pca;
};

void save_model(const std::string& path, const SavedModel& sm) {
    json j{{"classes", sm.classes},
           {"model", sm.model.to_json(sm.classes)},
           {"feature_source", sm.feature_source},
           {"template", sm.tmpl.to_json()}};
    if (sm.pca) j["pca"] = sm.pca->to_json();
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << "\n";
}

SavedModel load_model(const std::string& path) {
    json j = read_json_file(path);
    SavedModel sm;
    sm.classes = j.at("classes").get<std::vector<std::string>>();
    sm.model = glm::FittedModel::from_json(j.at("model"));
    sm.feature_source = j.at("feature_source").get<std::string>();
    sm.tmpl = prompting::PromptTemplate::from_json(j.at("template"));
    if (j.contains("pca")) sm.pca = decomp::PCAModel::from_json(j.at("pca"));
    return sm;
}

// Instance text -> feature vector under a saved model's pipeline.
explain::FeatureFn feature_fn(const SavedModel& sm, provider::Provider& p) {
    auto tmpl = sm.tmpl;
    bool use_pca = sm.pca.has_value();
    auto pca = sm.pca;
    return [tmpl, use_pca, pca, &p](const std::string& text) {
        Eigen::VectorXd e = p.embed(prompting::render_prompt(tmpl, text)).as_eigen();
        return use_pca ? decomp::transform(*pca, e) : e;
    };
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// --------------------------------------------------------------------------
// Commands

int cmd_validate(long n, double acc, double alpha, double baseline) {
    long successes = std::lround(acc * double(n));
    auto iv = stats::wilson_interval(successes, n, alpha);
    std::cout << "wilson_interval n=" << n << " successes=" << successes
              << " accuracy=" << fmt(double(successes) / double(n))
              << " level=" << fmt(1.0 - alpha) << " lower=" << fmt(iv.lower)
              << " upper=" << fmt(iv.upper) << " width=" << fmt(iv.upper - iv.lower) << "\n";
    auto thr = stats::min_accuracy_to_reject(n, baseline, alpha);
    std::cout << "min_accuracy_to_reject n=" << n << " baseline=" << fmt(baseline)
              << " alpha=" << fmt(alpha)
              << " achievable=" << (thr.achievable ? fmt(*thr.achievable) : "none")
              << " threshold=" << (thr.threshold ? fmt(*thr.threshold) : "none") << "\n";
    bool rejects = stats::rejects_baseline(successes, n, baseline, alpha);
    std::cout << "verdict accuracy=" << fmt(acc) << " "
              << (rejects ? "rejects" : "does-not-reject") << " baseline=" << fmt(baseline)
              << "\n";
    return 0;
}

int cmd_embed(const std::string& task_path, const ProviderFlags& pf, const std::string& out_dir,
              bool with_logits, bool with_heads, int jobs) {
    TaskSetup task = load_task(task_path);
    auto inner = make_provider(pf);
    auto cache = std::make_shared<provider::EmbeddingCache>(out_dir);
    provider::CachingProvider prov(inner, cache);

    provider::write_file_store_meta(out_dir, inner->model_id(), inner->dim());
    eval::ExperimentConfig ecfg;
    ecfg.tmpl = task.tmpl;
    ecfg.jobs = jobs;
    eval::build_features(task.dataset, prov, ecfg); // populates the cache

    if (with_logits || with_heads) {
        if (task.candidate_answers.empty())
            throw Error("--with-logits/--with-heads need candidate_answers in the task config");
        if (with_heads)
            provider::write_file_store_heads(out_dir,
                                             inner->head_vectors(task.candidate_answers));
        if (with_logits)
            for (const auto& inst : task.dataset.instances) {
                std::string prompt = prompting::render_prompt(task.tmpl, inst.text);
                provider::append_file_store_logits(
                    out_dir, provider::prompt_key(inner->model_id(), prompt),
                    inner->candidate_logits(prompt, task.candidate_answers));
            }
    }
    write_manifest(out_dir + "/manifest.json", "embed", task.resolved, pf,
                   {{"task", task_path}});
    std::cout << "cached " << cache->size() << " embeddings in " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& task_path, const ProviderFlags& pf, size_t size, uint64_t seed,
              const std::string& source_name, int pca_components, bool pca_normalize,
              std::optional<double> lambda, const std::string& out_path, int jobs) {
    TaskSetup task = load_task(task_path);
    auto prov = make_provider(pf);

    eval::ExperimentConfig ecfg;
    ecfg.tmpl = task.tmpl;
    ecfg.candidate_answers = task.candidate_answers;
    ecfg.feature_source = eval::feature_source_from_name(source_name);
    ecfg.pca_components = pca_components;
    ecfg.pca_normalize = pca_normalize;
    ecfg.jobs = jobs;

    // PCA features are fitted against the whole dataset; training rows are
    // selected afterwards.
    eval::FeatureMatrix feats = eval::build_features(task.dataset, *prov, ecfg);
    corpus::LabeledDataset train = size > 0 && size < task.dataset.instances.size()
                                       ? corpus::subsample(task.dataset, size, false, seed)
                                       : task.dataset;
    std::map<std::string, size_t> row_of;
    for (size_t i = 0; i < task.dataset.instances.size(); ++i)
        row_of[task.dataset.instances[i].id] = i;

    glm::DesignMatrix dm;
    dm.source = feats.source;
    dm.X.resize(Eigen::Index(train.instances.size()), feats.X.cols());
    std::vector<int> y;
    for (size_t i = 0; i < train.instances.size(); ++i) {
        dm.X.row(Eigen::Index(i)) = feats.X.row(Eigen::Index(row_of.at(train.instances[i].id)));
        y.push_back(train.instances[i].label);
    }

    glm::FitOptions opts;
    opts.lambda_override = lambda;
    opts.standardize = feats.source != "pca-scores";
    SavedModel sm;
    sm.model = glm::fit_ridge_path(dm, y, opts);
    sm.classes = task.dataset.classes;
    sm.tmpl = task.tmpl;
    sm.feature_source = feats.source;
    if (ecfg.feature_source == eval::FeatureSource::PcaScores) {
        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(1, 1); // recomputed below
        // Rebuild the PCA model exactly as build_features did.
        eval::ExperimentConfig raw = ecfg;
        raw.feature_source = eval::FeatureSource::Embedding;
        E = eval::build_features(task.dataset, *prov, raw).X;
        sm.pca = decomp::fit_pca(E, pca_components, pca_normalize);
    }
    save_model(out_path, sm);
    json resolved = task.resolved;
    resolved["train"] = {{"size", size},
                         {"seed", seed},
                         {"feature_source", source_name},
                         {"lambda", lambda ? json(*lambda) : json(nullptr)}};
    write_manifest(out_path + ".manifest.json", "train", resolved, pf, {{"task", task_path}});
    std::cout << "trained " << sm.model.n_classes << "-class model (lambda="
              << sm.model.lambda << ", " << sm.model.diag.iterations << " iterations) -> "
              << out_path << "\n";
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& input_path,
                const ProviderFlags& pf, const std::string& out_path) {
    SavedModel sm = load_model(model_path);
    auto prov = make_provider(pf);
    auto features = feature_fn(sm, *prov);

    std::ifstream in(input_path);
    if (!in) throw Error("cannot open file: " + input_path);
    std::ostream* out = &std::cout;
    std::ofstream file_out;
    if (!out_path.empty()) {
        file_out.open(out_path);
        if (!file_out) throw Error("cannot write " + out_path);
        out = &file_out;
    }
    *out << "id,predicted_label\n";
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("malformed row " + std::to_string(lineno) + " in " + input_path + ": " +
                        e.what());
        }
        std::string id = j.at("id").get<std::string>();
        Eigen::VectorXd x = features(j.at("text").get<std::string>());
        int cls = glm::predict(sm.model, x);
        *out << id << ',' << sm.classes.at(size_t(cls)) << "\n";
    }
    if (!out_path.empty())
        write_manifest(out_path + ".manifest.json", "predict", json{{"model", model_path}}, pf,
                       {{"model", model_path}, {"input", input_path}});
    return 0;
}

int cmd_learning_curve(const std::string& config_path, const std::string& reference_path,
                       const ProviderFlags& pf, const std::string& out_dir, int jobs) {
    json cfg = read_json_file(config_path);
    std::string task_path =
        cfg.contains("task_path") ? cfg.at("task_path").get<std::string>() : "";
    TaskSetup task;
    if (!task_path.empty()) {
        task = load_task(task_path);
    } else if (cfg.contains("task")) {
        std::string tmp = out_dir + "/.task.json";
        fs::create_directories(out_dir);
        std::ofstream(tmp) << cfg.at("task").dump();
        task = load_task(tmp);
        fs::remove(tmp);
    } else {
        throw Error("experiment config needs 'task' or 'task_path'");
    }
    eval::ExperimentConfig ecfg = load_experiment(cfg, task);
    ecfg.jobs = jobs;
    auto prov = make_provider(pf);

    std::optional<corpus::PredictionSet> ref;
    if (!reference_path.empty())
        ref = corpus::load_reference_predictions(reference_path, task.dataset);

    auto curve =
        eval::run_learning_curve(ecfg, task.dataset, *prov, ref ? &*ref : nullptr);
    fs::create_directories(out_dir);
    eval::write_curve_csv(out_dir + "/results.csv", curve);
    std::ofstream(out_dir + "/summary.json") << eval::curve_summary(curve).dump(2) << "\n";
    std::map<std::string, std::string> inputs{{"config", config_path}};
    if (!reference_path.empty()) inputs["reference"] = reference_path;
    json resolved = cfg;
    resolved["resolved_template"] = task.tmpl.to_json();
    write_manifest(out_dir + "/manifest.json", "learning-curve", resolved, pf, inputs);
    std::cout << "learning curve written to " << out_dir << "\n";
    return 0;
}

int cmd_uncertainty(const std::string& config_path, const std::string& reference_path,
                    const ProviderFlags& pf, const std::string& out_dir, int jobs) {
    json cfg = read_json_file(config_path);
    TaskSetup task;
    if (cfg.contains("task_path")) {
        task = load_task(cfg.at("task_path").get<std::string>());
    } else if (cfg.contains("task")) {
        fs::create_directories(out_dir);
        std::string tmp = out_dir + "/.task.json";
        std::ofstream(tmp) << cfg.at("task").dump();
        task = load_task(tmp);
        fs::remove(tmp);
    } else {
        throw Error("experiment config needs 'task' or 'task_path'");
    }
    eval::ExperimentConfig ecfg = load_experiment(cfg, task);
    ecfg.jobs = jobs;
    auto prov = make_provider(pf);
    auto ref = corpus::load_reference_predictions(reference_path, task.dataset);

    auto u = eval::run_uncertainty(ecfg, task.dataset, *prov, ref);
    auto w = eval::determine_winner(u);
    fs::create_directories(out_dir);
    eval::write_uncertainty_csv(out_dir + "/uncertainty.csv", u);
    std::ofstream(out_dir + "/summary.json")
        << eval::uncertainty_summary(u, w).dump(2) << "\n";
    json resolved = cfg;
    resolved["resolved_template"] = task.tmpl.to_json();
    write_manifest(out_dir + "/manifest.json", "uncertainty", resolved, pf,
                   {{"config", config_path}, {"reference", reference_path}});
    std::cout << "overall winner: " << eval::verdict_name(w.overall) << "\n";
    return 0;
}

int cmd_pca(const std::string& store_dir, int components, const std::string& out_path) {
    provider::EmbeddingCache cache(store_dir);
    auto records = cache.all();
    if (records.size() < 2) throw Error("pca: store has fewer than 2 embeddings");
    Eigen::MatrixXd X(Eigen::Index(records.size()), Eigen::Index(records[0].dim));
    for (size_t i = 0; i < records.size(); ++i)
        X.row(Eigen::Index(i)) = records[i].as_eigen().transpose();
    Eigen::Index k = std::min<Eigen::Index>(components, std::min(X.rows() - 1, X.cols()));
    auto pca = decomp::fit_pca(X, k);

    std::ostream* out = &std::cout;
    std::ofstream file_out;
    if (!out_path.empty()) {
        file_out.open(out_path);
        if (!file_out) throw Error("cannot write " + out_path);
        out = &file_out;
    }
    *out << "component,singular_value,explained_variance_ratio,cumulative\n";
    double cum = 0.0;
    char buf[128];
    for (Eigen::Index i = 0; i < k; ++i) {
        cum += pca.explained_variance_ratio[i];
        std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g", long(i + 1),
                      pca.singular_values[i], pca.explained_variance_ratio[i], cum);
        *out << buf << "\n";
    }
    return 0;
}

int cmd_lasso_path(const std::string& task_path, const ProviderFlags& pf, int budget,
                   uint64_t seed, const std::string& out_path, int jobs) {
    TaskSetup task = load_task(task_path);
    auto prov = make_provider(pf);
    eval::ExperimentConfig ecfg;
    ecfg.tmpl = task.tmpl;
    ecfg.jobs = jobs;
    eval::FeatureMatrix feats = eval::build_features(task.dataset, *prov, ecfg);

    // Binary reduction: majority class vs. the rest.
    std::vector<int> y;
    {
        std::vector<int> counts(task.dataset.classes.size(), 0);
        for (const auto& inst : task.dataset.instances) ++counts[size_t(inst.label)];
        int majority =
            int(std::max_element(counts.begin(), counts.end()) - counts.begin());
        for (const auto& inst : task.dataset.instances)
            y.push_back(inst.label == majority ? 1 : 0);
    }

    // 20% held-out split for the accuracy column.
    const size_t K = task.dataset.instances.size();
    const size_t n_test = std::max<size_t>(1, K / 5);
    Rng rng(stable_hash64({seed, 0x1a550ULL}));
    auto test_pick = rng.sample_indices(K, n_test);
    std::vector<bool> in_test(K, false);
    for (size_t p : test_pick) in_test[p] = true;
    std::vector<size_t> train_idx, test_idx;
    for (size_t i = 0; i < K; ++i) (in_test[i] ? test_idx : train_idx).push_back(i);

    glm::DesignMatrix dm;
    dm.source = feats.source;
    dm.X.resize(Eigen::Index(train_idx.size()), feats.X.cols());
    std::vector<int> ytr, yte;
    for (size_t t = 0; t < train_idx.size(); ++t) {
        dm.X.row(Eigen::Index(t)) = feats.X.row(Eigen::Index(train_idx[t]));
        ytr.push_back(y[train_idx[t]]);
    }
    for (size_t i : test_idx) yte.push_back(y[i]);

    std::ostream* out = &std::cout;
    std::ofstream file_out;
    if (!out_path.empty()) {
        file_out.open(out_path);
        if (!file_out) throw Error("cannot write " + out_path);
        out = &file_out;
    }
    *out << "budget,support_size,lambda,test_accuracy,refit\n";
    for (int b = 1; b <= budget; ++b) {
        auto sel = glm::fit_lasso_select(dm, ytr, b);
        glm::FittedModel model;
        bool refit_ok = true;
        try {
            model = glm::refit_unpenalized(dm, ytr, sel.support);
        } catch (const Error&) {
            model = sel.penalized; // separation on the support: keep the L1 point
            refit_ok = false;
        }
        std::vector<int> preds;
        for (size_t i : test_idx)
            preds.push_back(glm::predict(model, feats.X.row(Eigen::Index(i)).transpose()));
        char buf[128];
        std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g,%s", b, sel.support.size(),
                      sel.lambda, eval::accuracy(preds, yte),
                      refit_ok ? "unpenalized" : "penalized");
        *out << buf << "\n";
    }
    if (!out_path.empty())
        write_manifest(out_path + ".manifest.json", "lasso-path", task.resolved, pf,
                       {{"task", task_path}});
    return 0;
}

int cmd_explain(const std::string& model_path, const std::string& texts_path,
                const std::string& annotations_path, const ProviderFlags& pf, int cls,
                const std::string& out_path) {
    SavedModel sm = load_model(model_path);
    auto prov = make_provider(pf);
    auto features = feature_fn(sm, *prov);

    std::ifstream in(texts_path);
    if (!in) throw Error("cannot open file: " + texts_path);
    std::ostream* out = &std::cout;
    std::ofstream file_out;
    if (!out_path.empty()) {
        file_out.open(out_path);
        if (!file_out) throw Error("cannot write " + out_path);
        out = &file_out;
    }

    std::map<std::string, corpus::AnnotationExample> ann;
    if (!annotations_path.empty()) {
        std::ifstream ain(annotations_path);
        if (!ain) throw Error("cannot open file: " + annotations_path);
        std::string line;
        while (std::getline(ain, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            corpus::AnnotationExample ex;
            ex.id = j.at("id").get<std::string>();
            ex.tokens = j.at("tokens").get<std::vector<std::string>>();
            ex.scores_a = j.at("scores_a").get<std::vector<double>>();
            ex.scores_b = j.at("scores_b").get<std::vector<double>>();
            ann[ex.id] = ex;
        }
    }

    std::vector<double> rho_a, rho_b;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("malformed row " + std::to_string(lineno) + " in " + texts_path + ": " +
                        e.what());
        }
        std::string id = j.at("id").get<std::string>();
        auto iv = explain::feature_importances(sm.model, features,
                                               j.at("text").get<std::string>(), cls, id);
        *out << iv.to_json().dump() << "\n";
        auto it = ann.find(id);
        if (it != ann.end()) {
            rho_a.push_back(explain::annotation_agreement(iv, it->second, 'a'));
            rho_b.push_back(explain::annotation_agreement(iv, it->second, 'b'));
        }
    }
    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    };
    if (!rho_a.empty())
        std::cout << "agreement annotator_a=" << fmt(mean(rho_a))
                  << " annotator_b=" << fmt(mean(rho_b)) << " examples=" << rho_a.size()
                  << "\n";
    if (!out_path.empty()) {
        std::map<std::string, std::string> inputs{{"model", model_path},
                                                  {"texts", texts_path}};
        if (!annotations_path.empty()) inputs["annotations"] = annotations_path;
        write_manifest(out_path + ".manifest.json", "explain",
                       json{{"model", model_path}, {"class", cls}}, pf, inputs);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penalised logistic regression on language-model embeddings"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    int jobs = 1;
    app.add_option("--jobs", jobs, "Parallel worker threads")->capture_default_str();

    // validate
    auto* validate = app.add_subcommand("validate", "Wilson interval and rejection threshold");
    long v_n = 100;
    double v_acc = 0.75, v_alpha = 0.05, v_baseline = 0.5;
    validate->add_option("--n", v_n, "Sample size")->required();
    validate->add_option("--accuracy", v_acc, "Observed accuracy")->required();
    validate->add_option("--alpha", v_alpha, "Significance level");
    validate->add_option("--baseline", v_baseline, "Null-hypothesis accuracy");

    // embed
    auto* embed = app.add_subcommand("embed", "Populate an embedding store for a task");
    std::string e_task, e_out;
    bool e_logits = false, e_heads = false;
    ProviderFlags e_pf;
    embed->add_option("--task", e_task, "Task config JSON")->required();
    embed->add_option("--out", e_out, "Store directory")->required();
    embed->add_flag("--with-logits", e_logits, "Record candidate logits too");
    embed->add_flag("--with-heads", e_heads, "Record head vectors too");
    add_provider_flags(embed, e_pf);

    // train
    auto* train = app.add_subcommand("train", "Fit and persist a model");
    std::string t_task, t_out = "model.json", t_source = "embedding";
    size_t t_size = 0;
    uint64_t t_seed = 0;
    int t_pca_k = 10;
    bool t_pca_norm = false;
    double t_lambda = -1.0;
    ProviderFlags t_pf;
    train->add_option("--task", t_task, "Task config JSON")->required();
    train->add_option("--size", t_size, "Training subset size (0 = all)");
    train->add_option("--seed", t_seed, "Subset draw seed");
    train->add_option("--source", t_source, "Feature source")
        ->check(CLI::IsMember({"embedding", "logits", "pca-scores", "sentence-embedding"}));
    train->add_option("--pca-components", t_pca_k, "PCA components for pca-scores");
    train->add_flag("--pca-normalize", t_pca_norm, "Normalise PCA scores");
    train->add_option("--lambda", t_lambda, "Fixed ridge penalty (default: path minimum)");
    train->add_option("--out", t_out, "Model output path");
    add_provider_flags(train, t_pf);

    // predict
    auto* predict = app.add_subcommand("predict", "Classify texts with a saved model");
    std::string p_model, p_input, p_out;
    ProviderFlags p_pf;
    predict->add_option("--model", p_model, "Model JSON")->required();
    predict->add_option("--input", p_input, "JSONL with id/text fields")->required();
    predict->add_option("--out", p_out, "Predictions CSV (default stdout)");
    add_provider_flags(predict, p_pf);

    // learning-curve
    auto* curve = app.add_subcommand("learning-curve", "Learning-curve protocol");
    std::string c_cfg, c_ref, c_out = "results";
    ProviderFlags c_pf;
    curve->add_option("--config", c_cfg, "Experiment config JSON")->required();
    curve->add_option("--reference", c_ref, "Reference predictions CSV");
    curve->add_option("--out", c_out, "Output directory");
    add_provider_flags(curve, c_pf);

    // uncertainty
    auto* unc = app.add_subcommand("uncertainty", "Small-sample uncertainty protocol");
    std::string u_cfg, u_ref, u_out = "uncertainty";
    ProviderFlags u_pf;
    unc->add_option("--config", u_cfg, "Experiment config JSON")->required();
    unc->add_option("--reference", u_ref, "Reference predictions CSV")->required();
    unc->add_option("--out", u_out, "Output directory");
    add_provider_flags(unc, u_pf);

    // pca
    auto* pca = app.add_subcommand("pca", "Explained-variance table from a store");
    std::string pc_store, pc_out;
    int pc_k = 100;
    pca->add_option("--store", pc_store, "Embedding store/cache directory")->required();
    pca->add_option("--components", pc_k, "Component count");
    pca->add_option("--out", pc_out, "CSV output (default stdout)");

    // lasso-path
    auto* lasso = app.add_subcommand("lasso-path", "Support budget vs accuracy table");
    std::string l_task, l_out;
    int l_budget = 20;
    uint64_t l_seed = 0;
    ProviderFlags l_pf;
    lasso->add_option("--task", l_task, "Task config JSON")->required();
    lasso->add_option("--budget", l_budget, "Maximum support budget");
    lasso->add_option("--seed", l_seed, "Split seed");
    lasso->add_option("--out", l_out, "CSV output (default stdout)");
    add_provider_flags(lasso, l_pf);

    // explain
    auto* expl = app.add_subcommand("explain", "Token-deletion importances");
    std::string x_model, x_texts, x_ann, x_out;
    int x_cls = 1;
    ProviderFlags x_pf;
    expl->add_option("--model", x_model, "Model JSON")->required();
    expl->add_option("--texts", x_texts, "JSONL with id/text fields")->required();
    expl->add_option("--annotations", x_ann, "Annotations JSONL (optional)");
    expl->add_option("--class", x_cls, "Class index to explain");
    expl->add_option("--out", x_out, "Importance JSONL (default stdout)");
    add_provider_flags(expl, x_pf);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate) return cmd_validate(v_n, v_acc, v_alpha, v_baseline);
        if (*embed) return cmd_embed(e_task, e_pf, e_out, e_logits, e_heads, jobs);
        if (*train)
            return cmd_train(t_task, t_pf, t_size, t_seed, t_source, t_pca_k, t_pca_norm,
                             t_lambda >= 0.0 ? std::optional<double>(t_lambda) : std::nullopt,
                             t_out, jobs);
        if (*predict) return cmd_predict(p_model, p_input, p_pf, p_out);
        if (*curve) return cmd_learning_curve(c_cfg, c_ref, c_pf, c_out, jobs);
        if (*unc) return cmd_uncertainty(u_cfg, u_ref, u_pf, u_out, jobs);
        if (*pca) return cmd_pca(pc_store, pc_k, pc_out);
        if (*lasso) return cmd_lasso_path(l_task, l_pf, l_budget, l_seed, l_out, jobs);
        if (*expl) return cmd_explain(x_model, x_texts, x_ann, x_pf, x_cls, x_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
