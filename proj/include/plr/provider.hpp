#pragma once

#include "plr/common.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace plr::provider {

struct EmbeddingRecord {
    std::string key; // sha256(model_id \0 prompt)
    std::string model_id;
    size_t dim = 0;
    std::vector<float> vec; // stored as float32, the cache's on-disk precision

    Eigen::VectorXd as_eigen() const;
};

using CandidateLogits = std::map<std::string, double>;
using HeadVectors = std::map<std::string, std::vector<float>>;

// Cache key for a (model, prompt) pair.
std::string prompt_key(const std::string& model_id, const std::string& prompt);

// Source of embeddings / candidate logits / prediction-head vectors.
// Sources without a capability throw CapabilityError.
class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string model_id() const = 0;
    virtual size_t dim() const = 0; // declared dimension (0 = learn from first fetch)

    virtual EmbeddingRecord embed(const std::string& prompt) = 0;
    virtual CandidateLogits candidate_logits(const std::string& prompt,
                                             const std::vector<std::string>& candidates);
    virtual HeadVectors head_vectors(const std::vector<std::string>& candidates);
};

// Synthetic source with fully controlled class geometry:
// embedding = base + sum over present trigger words of their direction
//             + seeded Gaussian noise,
// logits = embedding . head vector (exactly, on the float32-rounded values).
class StubProvider : public Provider {
public:
    StubProvider(size_t dim, uint64_t seed, double noise_sigma);

    // Word w, when present in the prompt (whitespace/punctuation-delimited),
    // adds `scale` times a deterministic unit direction.
    void add_trigger(const std::string& word, double scale);
    // Direction shared by all prompts (class-independent base offset).
    void set_base_scale(double scale);

    std::string model_id() const override { return "stub"; }
    size_t dim() const override { return dim_; }
    EmbeddingRecord embed(const std::string& prompt) override;
    CandidateLogits candidate_logits(const std::string& prompt,
                                     const std::vector<std::string>& candidates) override;
    HeadVectors head_vectors(const std::vector<std::string>& candidates) override;

    // Deterministic unit direction associated with a trigger word (for tests
    // that reason about the stub's geometry).
    Eigen::VectorXd trigger_direction(const std::string& word) const;
    Eigen::VectorXd head_direction(const std::string& candidate) const;

    int embed_calls() const { return embed_calls_; }

private:
    size_t dim_;
    uint64_t seed_;
    double sigma_;
    double base_scale_ = 0.0;
    std::vector<std::pair<std::string, double>> triggers_;
    std::atomic<int> embed_calls_{0};
};

// Append-only on-disk embedding store: JSONL index (key, model, dim, offset)
// plus a packed little-endian float32 sidecar. Single-writer; reads are from
// the in-memory index after load.
class EmbeddingCache {
public:
    explicit EmbeddingCache(const std::string& dir);

    std::optional<EmbeddingRecord> get(const std::string& key) const;
    void put(const EmbeddingRecord& rec);
    size_t size() const { return index_.size(); }

    std::string dir() const { return dir_; }
    // All cached records (iteration order = insertion order).
    std::vector<EmbeddingRecord> all() const;

private:
    std::string dir_;
    mutable std::mutex mu_;
    struct Entry {
        std::string model_id;
        size_t dim;
        uint64_t offset; // byte offset into vectors.bin
    };
    std::map<std::string, Entry> index_;
    std::vector<std::string> order_;
};

// Cache-first wrapper around another provider.
class CachingProvider : public Provider {
public:
    CachingProvider(std::shared_ptr<Provider> inner, std::shared_ptr<EmbeddingCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    std::string model_id() const override { return inner_->model_id(); }
    size_t dim() const override { return inner_->dim(); }
    EmbeddingRecord embed(const std::string& prompt) override;
    CandidateLogits candidate_logits(const std::string& prompt,
                                     const std::vector<std::string>& candidates) override {
        return inner_->candidate_logits(prompt, candidates);
    }
    HeadVectors head_vectors(const std::vector<std::string>& candidates) override {
        return inner_->head_vectors(candidates);
    }

private:
    std::shared_ptr<Provider> inner_;
    std::shared_ptr<EmbeddingCache> cache_;
};

// Recorded-dump source: an EmbeddingCache directory with a meta.json
// ({"model_id", "dim"}) and optional logits.jsonl ({"key", "logits": {...}})
// and heads.json ({"<candidate>": [...]}). Embedding-only dumps raise
// CapabilityError for the optional surfaces.
class FileProvider : public Provider {
public:
    explicit FileProvider(const std::string& dir);

    std::string model_id() const override { return model_id_; }
    size_t dim() const override { return dim_; }
    EmbeddingRecord embed(const std::string& prompt) override;
    CandidateLogits candidate_logits(const std::string& prompt,
                                     const std::vector<std::string>& candidates) override;
    HeadVectors head_vectors(const std::vector<std::string>& candidates) override;

private:
    std::string dir_;
    std::string model_id_;
    size_t dim_ = 0;
    EmbeddingCache cache_;
    bool have_logits_ = false;
    std::map<std::string, CandidateLogits> logits_; // by prompt key
    bool have_heads_ = false;
    HeadVectors heads_;
};

// Write a FileProvider-compatible dump directory (used by the `embed` CLI
// command and by tests fabricating fixtures from the stub).
void write_file_store_meta(const std::string& dir, const std::string& model_id, size_t dim);
void append_file_store_logits(const std::string& dir, const std::string& key,
                              const CandidateLogits& logits);
void write_file_store_heads(const std::string& dir, const HeadVectors& heads);

// Local inference server over HTTP:
//   POST /embedding         {"content": "<prompt>"}        -> {"embedding": [..]}
//   POST /candidate-logits  {"content": .., "candidates": [..]} -> {"logits": {..}}
// Head vectors are not served. 3 attempts with exponential backoff.
class HttpProvider : public Provider {
public:
    HttpProvider(const std::string& endpoint, const std::string& model_id, size_t declared_dim,
                 int retries = 3, int backoff_ms = 250);

    std::string model_id() const override { return model_id_; }
    size_t dim() const override { return dim_; }
    EmbeddingRecord embed(const std::string& prompt) override;
    CandidateLogits candidate_logits(const std::string& prompt,
                                     const std::vector<std::string>& candidates) override;

private:
    std::string post_json(const std::string& path, const std::string& body);

    std::string endpoint_;
    std::string model_id_;
    size_t dim_;
    int retries_;
    int backoff_ms_;
};

} // namespace plr::provider
