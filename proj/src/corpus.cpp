#include "plr/corpus.hpp"

#include "plr/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace plr::corpus {

using nlohmann::json;

int LabeledDataset::class_index(const std::string& label) const {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw Error("unknown label '" + label + "' in dataset " + name);
    return int(it - classes.begin());
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    size_t i = 0;
    auto end_field = [&] { row.push_back(field); field.clear(); };
    auto end_row = [&] {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    while (i < data.size()) {
        char c = data[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r') {
            // swallow; handled by the following \n (or end of line)
        } else if (c == '\n') {
            end_row();
        } else {
            field.push_back(c);
        }
        ++i;
    }
    if (quoted) throw Error("unterminated quoted field in " + path);
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

namespace {

LabeledDataset finish_dataset(const std::string& path,
                              std::vector<std::tuple<std::string, std::string, std::string>> raw,
                              const std::optional<std::vector<std::string>>& class_order) {
    if (raw.empty()) throw Error("no instances in " + path);
    LabeledDataset d;
    d.name = path;
    if (class_order) d.classes = *class_order;
    std::set<std::string> seen_ids;
    for (auto& [id, text, label] : raw) {
        if (!seen_ids.insert(id).second) throw Error("duplicate id '" + id + "' in " + path);
        if (std::find(d.classes.begin(), d.classes.end(), label) == d.classes.end()) {
            if (class_order) throw Error("unknown label '" + label + "' in " + path);
            d.classes.push_back(label);
        }
        Instance inst;
        inst.id = std::move(id);
        inst.text = std::move(text);
        inst.label = int(std::find(d.classes.begin(), d.classes.end(), label) - d.classes.begin());
        d.instances.push_back(std::move(inst));
    }
    if (d.classes.size() < 2) throw Error("dataset " + path + " has fewer than 2 classes");
    return d;
}

} // namespace

LabeledDataset load_dataset(const std::string& path, Format format,
                            const std::optional<std::vector<std::string>>& class_order) {
    std::vector<std::tuple<std::string, std::string, std::string>> raw;
    if (format == Format::Csv) {
        auto rows = read_csv(path);
        if (rows.empty()) throw Error("no instances in " + path);
        const auto& header = rows[0];
        auto col = [&](const std::string& name) {
            auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end()) throw Error("missing column '" + name + "' in " + path);
            return size_t(it - header.begin());
        };
        size_t ci = col("id"), ct = col("text"), cl = col("label");
        for (size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != header.size())
                throw Error("malformed row " + std::to_string(r + 1) + " in " + path);
            raw.emplace_back(rows[r][ci], rows[r][ct], rows[r][cl]);
        }
    } else {
        std::ifstream in(path);
        if (!in) throw Error("cannot open file: " + path);
        std::string line;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw Error("malformed row " + std::to_string(lineno) + " in " + path + ": " + e.what());
            }
            if (!j.contains("id") || !j.contains("text") || !j.contains("label"))
                throw Error("malformed row " + std::to_string(lineno) + " in " + path +
                            ": need id, text, label");
            raw.emplace_back(j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                             j.at("label").get<std::string>());
        }
    }
    return finish_dataset(path, std::move(raw), class_order);
}

LabeledDataset subsample(const LabeledDataset& d, size_t size, bool balance, uint64_t seed) {
    LabeledDataset out;
    out.name = d.name;
    out.classes = d.classes;
    Rng rng(stable_hash64({seed, 0x5ab5a317eULL, d.instances.size()}));
    if (!balance) {
        if (size > d.instances.size())
            throw Error("subsample size exceeds dataset size (" +
                        std::to_string(d.instances.size()) + ")");
        auto idx = rng.sample_indices(d.instances.size(), size);
        std::sort(idx.begin(), idx.end()); // keep file order for reproducible output
        for (size_t i : idx) out.instances.push_back(d.instances[i]);
        return out;
    }
    size_t quota = size / d.classes.size();
    if (quota == 0) throw Error("subsample size below one instance per class");
    std::vector<std::vector<size_t>> by_class(d.classes.size());
    for (size_t i = 0; i < d.instances.size(); ++i)
        by_class[size_t(d.instances[i].label)].push_back(i);
    std::vector<size_t> chosen;
    for (size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < quota)
            throw Error("class '" + d.classes[c] + "' has only " +
                        std::to_string(by_class[c].size()) + " instances, quota is " +
                        std::to_string(quota));
        auto pick = rng.sample_indices(by_class[c].size(), quota);
        for (size_t p : pick) chosen.push_back(by_class[c][p]);
    }
    std::sort(chosen.begin(), chosen.end());
    for (size_t i : chosen) out.instances.push_back(d.instances[i]);
    return out;
}

namespace {

bool is_sentence_end(const std::string& s, size_t i) {
    char c = s[i];
    if (c != '.' && c != '!' && c != '?') return false;
    return i + 1 >= s.size() || std::isspace(static_cast<unsigned char>(s[i + 1]));
}

size_t count_words(const std::string& s) {
    std::istringstream is(s);
    std::string w;
    size_t n = 0;
    while (is >> w) ++n;
    return n;
}

} // namespace

std::string truncate_text(const std::string& text, size_t limit) {
    if (limit == 0) return text;
    // Split into sentences at ./!/? followed by whitespace or end.
    std::vector<std::string> sentences;
    size_t start = 0;
    for (size_t i = 0; i < text.size(); ++i) {
        if (is_sentence_end(text, i)) {
            sentences.push_back(text.substr(start, i - start + 1));
            start = i + 1;
        }
    }
    if (start < text.size()) sentences.push_back(text.substr(start));
    if (sentences.empty()) return text;

    std::string out;
    size_t words = 0;
    for (size_t i = 0; i < sentences.size(); ++i) {
        out += sentences[i];
        words += count_words(sentences[i]);
        if (words >= limit) break;
    }
    return out;
}

PredictionSet load_reference_predictions(const std::string& path, const LabeledDataset& d,
                                         const std::string& source_label) {
    auto rows = read_csv(path);
    if (rows.empty()) throw Error("no rows in " + path);
    const auto& header = rows[0];
    if (header.size() < 2 || header[0] != "id" || header[1] != "predicted_label")
        throw Error("predictions file must have header id,predicted_label: " + path);
    std::set<std::string> known;
    for (const auto& inst : d.instances) known.insert(inst.id);
    PredictionSet out;
    out.source = source_label;
    for (size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() < 2) throw Error("malformed row " + std::to_string(r + 1) + " in " + path);
        const std::string& id = rows[r][0];
        if (!known.count(id)) throw Error("prediction for unknown id '" + id + "' in " + path);
        out.predicted[id] = d.class_index(rows[r][1]);
    }
    return out;
}

AnnotationSet load_annotations(
    const std::string& path, const LabeledDataset& d,
    const std::function<std::vector<std::string>(const std::string&)>& tokenizer) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    std::map<std::string, const Instance*> by_id;
    for (const auto& inst : d.instances) by_id[inst.id] = &inst;
    AnnotationSet out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("malformed row " + std::to_string(lineno) + " in " + path + ": " + e.what());
        }
        AnnotationExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.tokens = j.at("tokens").get<std::vector<std::string>>();
        ex.scores_a = j.at("scores_a").get<std::vector<double>>();
        ex.scores_b = j.at("scores_b").get<std::vector<double>>();
        auto it = by_id.find(ex.id);
        if (it == by_id.end()) throw Error("annotation for unknown id '" + ex.id + "'");
        auto expected = tokenizer(it->second->text);
        if (expected != ex.tokens)
            throw Error("annotation tokens for id '" + ex.id + "' do not match the tokenizer output");
        if (ex.scores_a.size() != ex.tokens.size() || ex.scores_b.size() != ex.tokens.size())
            throw Error("annotation score length mismatch for id '" + ex.id + "'");
        out.examples.push_back(std::move(ex));
    }
    return out;
}

} // namespace plr::corpus
