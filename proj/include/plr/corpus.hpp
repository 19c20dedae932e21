#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace plr::corpus {

struct Instance {
    std::string id;
    std::string text;
    int label = 0; // index into LabeledDataset::classes
};

struct LabeledDataset {
    std::string name;
    std::vector<std::string> classes; // ordered; labels index into this
    std::vector<Instance> instances;

    int class_index(const std::string& label) const;
};

enum class Format { Csv, Jsonl };

struct TaskConfig {
    std::string dataset_path;
    Format format = Format::Csv;
    std::optional<std::vector<std::string>> class_order; // default: first appearance
    size_t subsample_size = 0; // 0 = keep all
    bool balance = false;
    size_t truncate_words = 0; // 0 = no truncation
    uint64_t seed = 0;
    std::string template_id;
    std::vector<std::string> candidate_answers; // per-class answer tokens
};

struct PredictionSet {
    std::string source; // e.g. "reference-zero-shot"
    std::map<std::string, int> predicted; // id -> class index
};

struct AnnotationExample {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<double> scores_a;
    std::vector<double> scores_b;
};

struct AnnotationSet {
    std::vector<AnnotationExample> examples;
};

// CSV needs header id,text,label (RFC 4180 quoting); JSONL one object per
// line with string fields id/text/label. Classes ordered by first appearance
// unless an explicit order is given.
LabeledDataset load_dataset(const std::string& path, Format format,
                            const std::optional<std::vector<std::string>>& class_order = {});

// Deterministic subsample. With balance on, every class contributes exactly
// floor(size / n_classes) instances.
LabeledDataset subsample(const LabeledDataset& d, size_t size, bool balance, uint64_t seed);

// Shortest prefix of whole sentences whose cumulative whitespace-word count
// reaches `limit`; a single over-long first sentence is returned whole.
// limit == 0 returns the text unchanged.
std::string truncate_text(const std::string& text, size_t limit);

// CSV with header id,predicted_label; every id must exist in the dataset.
PredictionSet load_reference_predictions(const std::string& path, const LabeledDataset& d,
                                         const std::string& source_label = "reference");

// JSONL {id, tokens:[...], scores_a:[...], scores_b:[...]}; token sequences
// are validated against `tokenizer` applied to the dataset text.
AnnotationSet load_annotations(
    const std::string& path, const LabeledDataset& d,
    const std::function<std::vector<std::string>(const std::string&)>& tokenizer);

// Minimal RFC 4180 CSV reader, exposed for the prediction/annotation loaders
// and the CLI.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

} // namespace plr::corpus
