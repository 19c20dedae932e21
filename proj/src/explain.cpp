#include "plr/explain.hpp"

#include "plr/common.hpp"
#include "plr/stats.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace plr::explain {

using nlohmann::json;

namespace {

bool is_token_word_char(unsigned char c) {
    if (std::isalnum(c)) return true;
    switch (c) {
        case '#': case '@': case '\'': case '&': case '_': case '-': return true;
        default: break;
    }
    return false;
}

} // namespace

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> tokens;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char c = text[i];
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        // Multi-byte UTF-8 sequences (e.g. typographic apostrophes) are kept
        // inside word chunks rather than split as punctuation.
        if (is_token_word_char(c) || c >= 0x80) {
            size_t start = i;
            while (i < n && (is_token_word_char(text[i]) ||
                             static_cast<unsigned char>(text[i]) >= 0x80))
                ++i;
            tokens.push_back(text.substr(start, i - start));
        } else {
            tokens.push_back(std::string(1, text[i])); // punctuation: one token each
            ++i;
        }
    }
    return tokens;
}

namespace {

std::string join_tokens_excluding(const std::vector<std::string>& tokens, size_t skip_start,
                                  size_t skip_len) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i >= skip_start && i < skip_start + skip_len) continue;
        if (!out.empty()) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::vector<double> normalize_unit_std(const std::vector<double>& raw) {
    double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / double(raw.size());
    double var = 0.0;
    for (double v : raw) var += (v - mean) * (v - mean);
    var /= double(raw.size());
    std::vector<double> out(raw.size(), 0.0);
    if (var <= 0.0) return out; // flat importances normalise to all-zero
    double sd = std::sqrt(var);
    for (size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / sd;
    return out;
}

} // namespace

ImportanceVector feature_importances(const glm::FittedModel& model, const FeatureFn& features,
                                     const std::string& text, int cls, const std::string& id) {
    ImportanceVector iv;
    iv.id = id;
    iv.cls = cls;
    iv.tokens = tokenize_words(text);
    if (iv.tokens.empty()) throw Error("feature_importances: text has no tokens");

    double d_full = glm::distance_to_surface(model, features(text), cls);
    iv.raw.resize(iv.tokens.size());
    for (size_t k = 0; k < iv.tokens.size(); ++k) {
        std::string reduced = join_tokens_excluding(iv.tokens, k, 1);
        double d_k = glm::distance_to_surface(model, features(reduced), cls);
        iv.raw[k] = d_full - d_k;
    }
    iv.normalized = normalize_unit_std(iv.raw);
    return iv;
}

std::vector<SpanImportance> span_importances(const glm::FittedModel& model,
                                             const FeatureFn& features, const std::string& text,
                                             int cls, size_t max_span_length) {
    if (max_span_length < 1) throw Error("span_importances: span length must be >= 1");
    auto tokens = tokenize_words(text);
    if (tokens.empty()) throw Error("span_importances: text has no tokens");
    double d_full = glm::distance_to_surface(model, features(text), cls);
    std::vector<SpanImportance> out;
    for (size_t len = 1; len <= std::min(max_span_length, tokens.size()); ++len)
        for (size_t start = 0; start + len <= tokens.size(); ++start) {
            double d = glm::distance_to_surface(
                model, features(join_tokens_excluding(tokens, start, len)), cls);
            out.push_back({start, len, d_full - d});
        }
    return out;
}

StabilityReport stability_decomposition(
    const std::map<size_t, std::vector<std::vector<std::vector<double>>>>& by_size,
    size_t baseline_size) {
    auto base_it = by_size.find(baseline_size);
    if (base_it == by_size.end())
        throw Error("stability_decomposition: no model family at the baseline size");
    for (const auto& [size, models] : by_size) {
        if (models.size() < 2)
            throw Error("stability_decomposition: need >= 2 models at size " +
                        std::to_string(size));
    }

    // Element-wise mean over a family of per-example importance vectors.
    auto family_mean = [](const std::vector<std::vector<std::vector<double>>>& models) {
        std::vector<std::vector<double>> mean = models.front();
        for (auto& ex : mean) std::fill(ex.begin(), ex.end(), 0.0);
        for (const auto& m : models) {
            if (m.size() != mean.size())
                throw Error("stability_decomposition: example count mismatch across models");
            for (size_t e = 0; e < m.size(); ++e) {
                if (m[e].size() != mean[e].size())
                    throw Error("stability_decomposition: token count mismatch across models");
                for (size_t t = 0; t < m[e].size(); ++t) mean[e][t] += m[e][t];
            }
        }
        for (auto& ex : mean)
            for (double& v : ex) v /= double(models.size());
        return mean;
    };

    auto baseline_mean = family_mean(base_it->second);

    StabilityReport out;
    out.baseline_size = baseline_size;
    for (const auto& [size, models] : by_size) {
        auto size_mean = family_mean(models);
        double spread = 0.0, shift = 0.0;
        size_t spread_count = 0, shift_count = 0;
        for (size_t e = 0; e < size_mean.size(); ++e)
            for (size_t t = 0; t < size_mean[e].size(); ++t) {
                for (const auto& m : models) {
                    spread += std::abs(m[e][t] - size_mean[e][t]);
                    ++spread_count;
                }
                shift += std::abs(size_mean[e][t] - baseline_mean[e][t]);
                ++shift_count;
            }
        out.rows.push_back({size, spread / double(spread_count), shift / double(shift_count)});
    }
    return out;
}

double annotation_agreement(const ImportanceVector& iv, const corpus::AnnotationExample& ann,
                            char annotator) {
    if (annotator != 'a' && annotator != 'b')
        throw Error("annotation_agreement: annotator must be 'a' or 'b'");
    const auto& scores = annotator == 'a' ? ann.scores_a : ann.scores_b;
    if (ann.tokens != iv.tokens)
        throw Error("annotation_agreement: token sequences do not align for id '" + iv.id + "'");
    if (scores.size() != iv.normalized.size())
        throw Error("annotation_agreement: score length mismatch for id '" + iv.id + "'");
    return stats::spearman(iv.normalized, scores);
}

json ImportanceVector::to_json() const {
    return json{{"id", id},
                {"class", cls},
                {"tokens", tokens},
                {"raw", raw},
                {"normalized", normalized},
                {"model", {{"size", model_size}, {"seed", model_seed}}}};
}

void write_stability_csv(const std::string& path, const StabilityReport& r) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << "size,spread,shift\n";
    char buf[64];
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%.17g", row.spread);
        out << row.size << ',' << buf;
        std::snprintf(buf, sizeof buf, "%.17g", row.shift);
        out << ',' << buf << "\n";
    }
}

} // namespace plr::explain
