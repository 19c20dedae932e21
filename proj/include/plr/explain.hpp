#pragma once

#include "plr/corpus.hpp"
#include "plr/glm.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace plr::explain {

// Maps a (possibly perturbed) instance text to the feature vector the model
// consumes. Callers compose prompt rendering, embedding, and any PCA
// transform into this closure.
using FeatureFn = std::function<Eigen::VectorXd(const std::string& text)>;

// Whitespace split with leading/trailing punctuation emitted as separate
// tokens; word characters include alphanumerics plus #@'&_- and the
// typographic apostrophe so hashtags and contractions stay whole.
std::vector<std::string> tokenize_words(const std::string& text);

struct ImportanceVector {
    std::string id;
    int cls = 0;
    std::vector<std::string> tokens;
    std::vector<double> raw;        // f(k) = d_full - d_without_token_k
    std::vector<double> normalized; // raw scaled to unit std (zeros if flat)
    size_t model_size = 0;          // training-set size of the model
    uint64_t model_seed = 0;

    nlohmann::json to_json() const;
};

// Token-deletion importances: for each token, re-join the remaining tokens
// with single spaces, compute the signed distance to the class-`cls`
// surface, and report the drop relative to the full text.
ImportanceVector feature_importances(const glm::FittedModel& model, const FeatureFn& features,
                                     const std::string& text, int cls,
                                     const std::string& id = "");

struct SpanImportance {
    size_t start = 0;
    size_t length = 0;
    double raw = 0.0;
};

// Contiguous-span deletion variant; spans of length 1 reproduce the raw
// token importances.
std::vector<SpanImportance> span_importances(const glm::FittedModel& model,
                                             const FeatureFn& features, const std::string& text,
                                             int cls, size_t max_span_length);

struct StabilityRow {
    size_t size = 0;
    double spread = 0.0; // E |F_model - mean over same-size models|
    double shift = 0.0;  // E |same-size mean - large-training-set mean|
};

struct StabilityReport {
    std::vector<StabilityRow> rows; // ascending by size
    size_t baseline_size = 0;
};

// by_size[t][model][example] = normalised importance vector; examples and
// token positions must align across models. The baseline family is
// by_size.at(baseline_size) (the large-training-set models).
StabilityReport stability_decomposition(
    const std::map<size_t, std::vector<std::vector<std::vector<double>>>>& by_size,
    size_t baseline_size);

// Spearman rank correlation between the normalised importances and one
// annotator's scores ('a' or 'b') for the matching example.
double annotation_agreement(const ImportanceVector& iv, const corpus::AnnotationExample& ann,
                            char annotator);

void write_stability_csv(const std::string& path, const StabilityReport& r);

} // namespace plr::explain
