#pragma once

#include "plr/corpus.hpp"
#include "plr/glm.hpp"
#include "plr/prompting.hpp"
#include "plr/provider.hpp"
#include "plr/stats.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace plr::eval {

enum class FeatureSource { Embedding, Logits, PcaScores, SentenceEmbedding };
enum class Method { Plr, RestrictedArgmax, ReferencePredictions };
enum class Metric { Accuracy, MacroF1 };

std::string feature_source_name(FeatureSource s);
FeatureSource feature_source_from_name(const std::string& s);
std::string method_name(Method m);
Method method_from_name(const std::string& s);
std::string metric_name(Metric m);
Metric metric_from_name(const std::string& s);

struct ExperimentConfig {
    prompting::PromptTemplate tmpl;
    std::vector<std::string> candidate_answers; // answer token per class
    FeatureSource feature_source = FeatureSource::Embedding;
    int pca_components = 10;
    bool pca_normalize = false;
    Method method = Method::Plr;
    std::vector<size_t> sizes;   // ascending training-set sizes
    int replicates = 50;         // learning-curve replicates
    int samples = 250;           // uncertainty resamples per size
    uint64_t master_seed = 0;
    Metric metric = Metric::Accuracy;
    std::optional<double> lambda_override;
    bool stratified_draws = false; // stratify learning-curve training draws
    int jobs = 1;
};

// Feature rows in dataset instance order. PCA-score features are fitted to
// all rows (the whole dataset, labelled or not), then transformed.
struct FeatureMatrix {
    Eigen::MatrixXd X;
    std::string source; // matches glm::DesignMatrix::source
};

FeatureMatrix build_features(const corpus::LabeledDataset& d, provider::Provider& provider,
                             const ExperimentConfig& cfg);

struct SizeSummary {
    size_t size = 0;
    std::vector<double> values; // one per replicate
    stats::MeanCi ci;
};

struct CurveResult {
    Metric metric = Metric::Accuracy;
    std::vector<SizeSummary> per_size;
    std::optional<double> reference_metric; // whole-dataset reference accuracy/F1
};

// Per replicate: fresh 20% test split, training draws of each size from the
// remaining 80% (re-drawn until every class is present), fit, evaluate.
// Deterministic given the master seed.
CurveResult run_learning_curve(const ExperimentConfig& cfg, const corpus::LabeledDataset& d,
                               provider::Provider& provider,
                               const corpus::PredictionSet* reference = nullptr);

struct UncertaintySize {
    size_t size = 0;
    std::vector<double> plr_estimates;       // stratified k-fold CV accuracy
    std::vector<double> reference_estimates; // reference accuracy, same sample
    std::vector<double> differences;         // plr - reference, paired
    double mean_difference = 0.0;
    double p5 = 0.0;
    double p95 = 0.0;
};

struct UncertaintyResult {
    std::vector<UncertaintySize> per_size;
};

// For each size n: `samples` labelled draws with >= 2 instances per class,
// paired point estimates (k-fold CV with k = min(20, n) vs. the reference on
// the same instances), difference distribution with 5th/95th percentiles.
UncertaintyResult run_uncertainty(const ExperimentConfig& cfg, const corpus::LabeledDataset& d,
                                  provider::Provider& provider,
                                  const corpus::PredictionSet& reference);

enum class Verdict { Plr, Reference, Undecided };
std::string verdict_name(Verdict v);

struct WinnerReport {
    std::vector<Verdict> per_size;
    Verdict overall = Verdict::Undecided;
    std::optional<size_t> first_winning_size; // where the overall verdict takes hold
};

// plr wins at a size when the 5th percentile of (plr - reference) > 0;
// reference wins when the 95th percentile < 0. Overall verdict: the first
// size whose winner persists at every larger tested size.
WinnerReport determine_winner(const UncertaintyResult& u);

// Smallest tested size whose mean metric exceeds the reference and stays
// above it for all larger tested sizes, divided by the class count.
std::optional<double> min_sample_to_win(const CurveResult& c, double reference_metric,
                                        int n_classes);

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);
// Unweighted mean of per-class F1; classes absent from predictions and
// labels contribute 0 and are counted.
double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels, int n_classes);

// size,replicate,metric,value rows.
void write_curve_csv(const std::string& path, const CurveResult& c);
void write_uncertainty_csv(const std::string& path, const UncertaintyResult& u);
nlohmann::json curve_summary(const CurveResult& c);
nlohmann::json uncertainty_summary(const UncertaintyResult& u, const WinnerReport& w);

} // namespace plr::eval
