#include "plr/provider.hpp"

#include <nlohmann/json.hpp>

#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

namespace plr::provider {

using nlohmann::json;
namespace fs = std::filesystem;

Eigen::VectorXd EmbeddingRecord::as_eigen() const {
    Eigen::VectorXd v(Eigen::Index(vec.size()));
    for (size_t i = 0; i < vec.size(); ++i) v[Eigen::Index(i)] = double(vec[i]);
    return v;
}

std::string prompt_key(const std::string& model_id, const std::string& prompt) {
    std::string data = model_id;
    data.push_back('\0');
    data += prompt;
    return sha256_hex(data);
}

CandidateLogits Provider::candidate_logits(const std::string&, const std::vector<std::string>&) {
    throw CapabilityError("provider '" + model_id() + "' does not serve candidate logits");
}

HeadVectors Provider::head_vectors(const std::vector<std::string>&) {
    throw CapabilityError("provider '" + model_id() + "' does not serve head vectors");
}

// ---------------------------------------------------------------------------
// StubProvider

namespace {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-' || c == '_';
}

bool contains_word(const std::string& text, const std::string& word) {
    size_t pos = 0;
    while ((pos = text.find(word, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
        size_t end = pos + word.size();
        bool right_ok = end >= text.size() || !is_word_char(text[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

Eigen::VectorXd unit_direction(uint64_t seed, size_t dim) {
    Rng rng(seed);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(Eigen::Index(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.gauss();
    return v / v.norm();
}

std::vector<float> to_float32(const Eigen::VectorXd& v) {
    std::vector<float> out(size_t(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[size_t(i)] = float(v[i]);
    return out;
}

} // namespace

StubProvider::StubProvider(size_t dim, uint64_t seed, double noise_sigma)
    : dim_(dim), seed_(seed), sigma_(noise_sigma) {}

void StubProvider::add_trigger(const std::string& word, double scale) {
    triggers_.emplace_back(word, scale);
}

void StubProvider::set_base_scale(double scale) { base_scale_ = scale; }

Eigen::VectorXd StubProvider::trigger_direction(const std::string& word) const {
    return unit_direction(stable_hash64({seed_, 0x7219ULL, fnv1a64(word)}), dim_);
}

Eigen::VectorXd StubProvider::head_direction(const std::string& candidate) const {
    return unit_direction(stable_hash64({seed_, 0xead5ULL, fnv1a64(candidate)}), dim_);
}

EmbeddingRecord StubProvider::embed(const std::string& prompt) {
    ++embed_calls_;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(Eigen::Index(dim_));
    if (base_scale_ != 0.0)
        v += base_scale_ * unit_direction(stable_hash64({seed_, 0xba5eULL}), dim_);
    for (const auto& [word, scale] : triggers_)
        if (contains_word(prompt, word)) v += scale * trigger_direction(word);
    if (sigma_ > 0.0) {
        Rng noise(stable_hash64({seed_, 0x015eULL, fnv1a64(prompt)}));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += sigma_ * noise.gauss();
    }
    EmbeddingRecord rec;
    rec.model_id = model_id();
    rec.key = prompt_key(rec.model_id, prompt);
    rec.dim = dim_;
    rec.vec = to_float32(v);
    return rec;
}

CandidateLogits StubProvider::candidate_logits(const std::string& prompt,
                                               const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw Error("candidate_logits: no candidates given");
    // Computed from the float32-rounded embedding so that logit == e . head
    // holds exactly for downstream consistency checks.
    int before = embed_calls_;
    Eigen::VectorXd e = embed(prompt).as_eigen();
    embed_calls_ = before; // logit requests do not count as embedding fetches
    CandidateLogits out;
    for (const auto& c : candidates) out[c] = e.dot(head_direction(c));
    return out;
}

HeadVectors StubProvider::head_vectors(const std::vector<std::string>& candidates) {
    HeadVectors out;
    for (const auto& c : candidates) out[c] = to_float32(head_direction(c));
    return out;
}

// ---------------------------------------------------------------------------
// EmbeddingCache

EmbeddingCache::EmbeddingCache(const std::string& dir) : dir_(dir) {
    fs::create_directories(dir_);
    std::ifstream in(dir_ + "/index.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Entry e;
        e.model_id = j.at("model").get<std::string>();
        e.dim = j.at("dim").get<size_t>();
        e.offset = j.at("offset").get<uint64_t>();
        std::string key = j.at("key").get<std::string>();
        if (index_.emplace(key, e).second) order_.push_back(key);
    }
}

std::optional<EmbeddingRecord> EmbeddingCache::get(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    EmbeddingRecord rec;
    rec.key = key;
    rec.model_id = it->second.model_id;
    rec.dim = it->second.dim;
    rec.vec.resize(rec.dim);
    std::ifstream bin(dir_ + "/vectors.bin", std::ios::binary);
    if (!bin) throw Error("cache: missing vectors.bin in " + dir_);
    bin.seekg(std::streamoff(it->second.offset));
    bin.read(reinterpret_cast<char*>(rec.vec.data()), std::streamsize(rec.dim * sizeof(float)));
    if (!bin) throw Error("cache: truncated vectors.bin in " + dir_);
    return rec;
}

void EmbeddingCache::put(const EmbeddingRecord& rec) {
    std::lock_guard<std::mutex> lock(mu_);
    if (index_.count(rec.key)) return;
    std::ofstream bin(dir_ + "/vectors.bin", std::ios::binary | std::ios::app);
    if (!bin) throw Error("cache: cannot write vectors.bin in " + dir_);
    bin.seekp(0, std::ios::end);
    uint64_t offset = uint64_t(bin.tellp());
    bin.write(reinterpret_cast<const char*>(rec.vec.data()),
              std::streamsize(rec.vec.size() * sizeof(float)));
    bin.close();
    std::ofstream idx(dir_ + "/index.jsonl", std::ios::app);
    idx << json{{"key", rec.key}, {"model", rec.model_id}, {"dim", rec.dim}, {"offset", offset}}
               .dump()
        << "\n";
    index_[rec.key] = Entry{rec.model_id, rec.dim, offset};
    order_.push_back(rec.key);
}

std::vector<EmbeddingRecord> EmbeddingCache::all() const {
    std::vector<EmbeddingRecord> out;
    std::vector<std::string> keys;
    {
        std::lock_guard<std::mutex> lock(mu_);
        keys = order_;
    }
    for (const auto& k : keys) out.push_back(*get(k));
    return out;
}

EmbeddingRecord CachingProvider::embed(const std::string& prompt) {
    std::string key = prompt_key(model_id(), prompt);
    if (auto hit = cache_->get(key)) return *hit;
    EmbeddingRecord rec = inner_->embed(prompt);
    cache_->put(rec);
    return rec;
}

// ---------------------------------------------------------------------------
// FileProvider

void write_file_store_meta(const std::string& dir, const std::string& model_id, size_t dim) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/meta.json");
    out << json{{"model_id", model_id}, {"dim", dim}}.dump(2) << "\n";
}

void append_file_store_logits(const std::string& dir, const std::string& key,
                              const CandidateLogits& logits) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/logits.jsonl", std::ios::app);
    out << json{{"key", key}, {"logits", logits}}.dump() << "\n";
}

void write_file_store_heads(const std::string& dir, const HeadVectors& heads) {
    fs::create_directories(dir);
    json j;
    for (const auto& [tok, v] : heads) j[tok] = v;
    std::ofstream out(dir + "/heads.json");
    out << j.dump() << "\n";
}

FileProvider::FileProvider(const std::string& dir) : dir_(dir), cache_(dir) {
    std::ifstream meta(dir + "/meta.json");
    if (!meta) throw Error("file provider: missing meta.json in " + dir);
    json j = json::parse(meta);
    model_id_ = j.at("model_id").get<std::string>();
    dim_ = j.at("dim").get<size_t>();

    std::ifstream lg(dir + "/logits.jsonl");
    if (lg) {
        have_logits_ = true;
        std::string line;
        while (std::getline(lg, line)) {
            if (line.empty()) continue;
            json row = json::parse(line);
            logits_[row.at("key").get<std::string>()] =
                row.at("logits").get<CandidateLogits>();
        }
    }
    std::ifstream hd(dir + "/heads.json");
    if (hd) {
        have_heads_ = true;
        json heads = json::parse(hd);
        for (auto& [tok, v] : heads.items()) heads_[tok] = v.get<std::vector<float>>();
    }
}

EmbeddingRecord FileProvider::embed(const std::string& prompt) {
    std::string key = prompt_key(model_id_, prompt);
    auto hit = cache_.get(key);
    if (!hit)
        throw Error("file provider: no recorded embedding for prompt (key " + key.substr(0, 12) +
                    "...) in " + dir_);
    if (hit->dim != dim_)
        throw Error("file provider: recorded dim " + std::to_string(hit->dim) +
                    " != declared dim " + std::to_string(dim_));
    return *hit;
}

CandidateLogits FileProvider::candidate_logits(const std::string& prompt,
                                               const std::vector<std::string>& candidates) {
    if (!have_logits_)
        throw CapabilityError("file provider: store has no logits.jsonl (embedding-only dump)");
    auto it = logits_.find(prompt_key(model_id_, prompt));
    if (it == logits_.end()) throw Error("file provider: no recorded logits for prompt");
    CandidateLogits out;
    for (const auto& c : candidates) {
        auto jt = it->second.find(c);
        if (jt == it->second.end())
            throw Error("file provider: no recorded logit for token '" + c + "'");
        out[c] = jt->second;
    }
    return out;
}

HeadVectors FileProvider::head_vectors(const std::vector<std::string>& candidates) {
    if (!have_heads_)
        throw CapabilityError("file provider: store has no heads.json");
    HeadVectors out;
    for (const auto& c : candidates) {
        auto it = heads_.find(c);
        if (it == heads_.end())
            throw Error("file provider: no recorded head vector for token '" + c + "'");
        out[c] = it->second;
    }
    return out;
}

// ---------------------------------------------------------------------------
// HttpProvider

HttpProvider::HttpProvider(const std::string& endpoint, const std::string& model_id,
                           size_t declared_dim, int retries, int backoff_ms)
    : endpoint_(endpoint), model_id_(model_id), dim_(declared_dim), retries_(retries),
      backoff_ms_(backoff_ms) {
    if (endpoint_.rfind("http://", 0) == 0) endpoint_ = endpoint_.substr(7);
    while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
}

std::string HttpProvider::post_json(const std::string& path, const std::string& body) {
    std::string last_error;
    int backoff = backoff_ms_;
    for (int attempt = 0; attempt < retries_; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        httplib::Client cli(("http://" + endpoint_).c_str());
        cli.set_connection_timeout(10);
        cli.set_read_timeout(120);
        auto res = cli.Post(path.c_str(), body, "application/json");
        if (!res) {
            last_error = "transport error (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        return res->body;
    }
    throw Error("http provider: POST " + endpoint_ + path + " failed after " +
                std::to_string(retries_) + " attempts: " + last_error);
}

EmbeddingRecord HttpProvider::embed(const std::string& prompt) {
    std::string body = post_json("/embedding", json{{"content", prompt}}.dump());
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(std::string("http provider: bad /embedding response: ") + e.what());
    }
    EmbeddingRecord rec;
    rec.model_id = model_id_;
    rec.key = prompt_key(model_id_, prompt);
    rec.vec = j.at("embedding").get<std::vector<float>>();
    rec.dim = rec.vec.size();
    if (dim_ == 0) dim_ = rec.dim;
    if (rec.dim != dim_)
        throw Error("http provider: server returned " + std::to_string(rec.dim) +
                    "-dim vector, model declares " + std::to_string(dim_));
    for (float v : rec.vec)
        if (!std::isfinite(v)) throw Error("http provider: non-finite embedding value");
    return rec;
}

CandidateLogits HttpProvider::candidate_logits(const std::string& prompt,
                                               const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw Error("candidate_logits: no candidates given");
    std::string body = post_json("/candidate-logits",
                                 json{{"content", prompt}, {"candidates", candidates}}.dump());
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(std::string("http provider: bad /candidate-logits response: ") + e.what());
    }
    auto logits = j.at("logits").get<CandidateLogits>();
    for (const auto& c : candidates)
        if (!logits.count(c))
            throw Error("http provider: response missing logit for token '" + c + "'");
    return logits;
}

} // namespace plr::provider
