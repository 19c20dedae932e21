#pragma once

#include "plr/corpus.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace plr::prompting {

enum class AnswerStyle { Lettered, FreeWord, None };

struct PromptTemplate {
    std::string id;
    std::string prefix;     // may be empty
    std::string suffix;     // may be empty; already contains any answer choices
    AnswerStyle answer_style = AnswerStyle::None;
    std::vector<std::string> answer_letters; // per class, when Lettered
    std::vector<std::string> answer_words;   // per class
    std::string distortion;   // optional random alphanumeric token
    std::string terminal_cue; // e.g. "Answer: ("

    nlohmann::json to_json() const;
    static PromptTemplate from_json(const nlohmann::json& j);
};

struct FewShotSpec {
    int shots_per_class = 0;
    uint64_t seed = 0;
    const corpus::LabeledDataset* pool = nullptr;
};

// Parts from which the eight built-in prompt variants are assembled.
// question_stem + enumerated choices + question_tail form the baseline
// suffix, e.g. "Does the sentence have" / {positive,...} / "sentiment?".
struct VariantParts {
    std::string task_id;
    std::string prefix;          // "The following sentence contains financial news:"
    std::string question_stem;   // "Does the sentence have"
    std::string question_tail;   // "sentiment?"
    std::string generic_question; // "What is the sentiment of the sentence?"
    std::string minimal_prefix;  // "Sentiment of"
    std::vector<std::string> class_words; // "positive", "negative", ...
};

// prefix + text + suffix + distortion + terminal cue, single-space joined,
// empty parts skipped.
std::string render_prompt(const PromptTemplate& t, const std::string& text);

// Gold answer string appended after a demonstration's cue (letter plus
// closing parenthesis for lettered templates, class word otherwise).
std::string demonstration_answer(const PromptTemplate& t, int class_index);

// m demonstrations per class, classes interleaved round-robin, then the
// query rendered zero-shot. Demonstrations never reuse `query_id`.
std::string render_few_shot(const PromptTemplate& t, const FewShotSpec& spec,
                            const std::string& text, const std::string& query_id = "");

// 8-character alphanumeric distortion string ("X9asd7bV"-like), seeded.
std::string make_distortion(uint64_t seed);

// The eight prompt variants (baseline; no letters; no prefix; no choices;
// minimal instructions; distortion; no instructions; no instructions +
// distortion), instantiated from the task's wording.
std::vector<PromptTemplate> builtin_variants(const VariantParts& parts,
                                             uint64_t distortion_seed);

// Baseline template alone (first row of builtin_variants).
PromptTemplate baseline_template(const VariantParts& parts);

VariantParts variant_parts_from_json(const nlohmann::json& j);

} // namespace plr::prompting
