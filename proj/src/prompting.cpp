#include "plr/prompting.hpp"

#include "plr/common.hpp"

#include <algorithm>

namespace plr::prompting {

using nlohmann::json;

namespace {

std::string join_nonempty(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (p.empty()) continue;
        if (!out.empty()) out += ' ';
        out += p;
    }
    return out;
}

std::string style_name(AnswerStyle s) {
    switch (s) {
        case AnswerStyle::Lettered: return "lettered";
        case AnswerStyle::FreeWord: return "free-word";
        case AnswerStyle::None: return "none";
    }
    return "none";
}

AnswerStyle style_from_name(const std::string& s) {
    if (s == "lettered") return AnswerStyle::Lettered;
    if (s == "free-word") return AnswerStyle::FreeWord;
    if (s == "none") return AnswerStyle::None;
    throw Error("unknown answer style: " + s);
}

} // namespace

json PromptTemplate::to_json() const {
    return json{{"id", id},
                {"prefix", prefix},
                {"suffix", suffix},
                {"answer_style", style_name(answer_style)},
                {"answer_letters", answer_letters},
                {"answer_words", answer_words},
                {"distortion", distortion},
                {"terminal_cue", terminal_cue}};
}

PromptTemplate PromptTemplate::from_json(const json& j) {
    PromptTemplate t;
    t.id = j.at("id").get<std::string>();
    t.prefix = j.value("prefix", "");
    t.suffix = j.value("suffix", "");
    t.answer_style = style_from_name(j.value("answer_style", "none"));
    t.answer_letters = j.value("answer_letters", std::vector<std::string>{});
    t.answer_words = j.value("answer_words", std::vector<std::string>{});
    t.distortion = j.value("distortion", "");
    t.terminal_cue = j.value("terminal_cue", "");
    if (t.answer_style == AnswerStyle::Lettered) {
        auto letters = t.answer_letters;
        std::sort(letters.begin(), letters.end());
        if (std::adjacent_find(letters.begin(), letters.end()) != letters.end())
            throw Error("template '" + t.id + "': answer letters must be distinct");
    }
    return t;
}

std::string render_prompt(const PromptTemplate& t, const std::string& text) {
    return join_nonempty({t.prefix, text, t.suffix, t.distortion, t.terminal_cue});
}

std::string demonstration_answer(const PromptTemplate& t, int class_index) {
    size_t c = size_t(class_index);
    if (t.answer_style == AnswerStyle::Lettered) {
        if (c >= t.answer_letters.size()) throw Error("class index out of range for answer letters");
        return t.answer_letters[c] + ")";
    }
    if (c >= t.answer_words.size()) throw Error("class index out of range for answer words");
    return t.answer_words[c];
}

std::string render_few_shot(const PromptTemplate& t, const FewShotSpec& spec,
                            const std::string& text, const std::string& query_id) {
    if (spec.shots_per_class < 0) throw Error("shots per class must be >= 0");
    if (spec.shots_per_class == 0) return render_prompt(t, text);
    if (!spec.pool) throw Error("few-shot spec has no example pool");
    const auto& pool = *spec.pool;
    size_t m = size_t(spec.shots_per_class);

    std::vector<std::vector<size_t>> by_class(pool.classes.size());
    for (size_t i = 0; i < pool.instances.size(); ++i) {
        if (pool.instances[i].id == query_id) continue;
        by_class[size_t(pool.instances[i].label)].push_back(i);
    }
    Rng rng(stable_hash64({spec.seed, uint64_t(spec.shots_per_class)}));
    std::vector<std::vector<size_t>> picks(by_class.size());
    for (size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < m)
            throw Error("class '" + pool.classes[c] + "' has fewer than " + std::to_string(m) +
                        " pool instances");
        for (size_t p : rng.sample_indices(by_class[c].size(), m))
            picks[c].push_back(by_class[c][p]);
    }

    std::string out;
    for (size_t shot = 0; shot < m; ++shot) {
        for (size_t c = 0; c < picks.size(); ++c) {
            const auto& inst = pool.instances[picks[c][shot]];
            std::string demo = render_prompt(t, inst.text);
            std::string ans = demonstration_answer(t, inst.label);
            out += demo;
            if (!demo.empty()) out += ' ';
            out += ans;
            out += "\n\n";
        }
    }
    out += render_prompt(t, text);
    return out;
}

std::string make_distortion(uint64_t seed) {
    static const std::string alphabet =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    Rng rng(stable_hash64({seed, 0xd157ULL}));
    std::string out;
    for (int i = 0; i < 8; ++i) out.push_back(alphabet[rng.below(alphabet.size())]);
    return out;
}

namespace {

std::vector<std::string> letters_for(size_t n) {
    std::vector<std::string> out;
    for (size_t i = 0; i < n; ++i) out.push_back(std::string(1, char('a' + i)));
    return out;
}

// "(a) positive, (b) negative, (c) neutral"
std::string lettered_choices(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ", ";
        out += "(" + std::string(1, char('a' + i)) + ") " + words[i];
    }
    return out;
}

// "positive, negative, neutral"
std::string plain_choices(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ", ";
        out += words[i];
    }
    return out;
}

} // namespace

PromptTemplate baseline_template(const VariantParts& p) {
    PromptTemplate t;
    t.id = p.task_id + "/baseline";
    t.prefix = p.prefix;
    t.suffix = p.question_stem + " " + lettered_choices(p.class_words) + " " + p.question_tail;
    t.answer_style = AnswerStyle::Lettered;
    t.answer_letters = letters_for(p.class_words.size());
    t.answer_words = p.class_words;
    t.terminal_cue = "Answer: (";
    return t;
}

std::vector<PromptTemplate> builtin_variants(const VariantParts& p, uint64_t distortion_seed) {
    std::vector<PromptTemplate> out;
    std::string distortion = make_distortion(distortion_seed);

    out.push_back(baseline_template(p)); // 1. Baseline

    PromptTemplate t = out.back(); // 2. No a,b,c,d
    t.id = p.task_id + "/no-letters";
    t.suffix = p.question_stem + " " + plain_choices(p.class_words) + " " + p.question_tail +
               " Answer with a single word.";
    t.answer_style = AnswerStyle::FreeWord;
    t.answer_letters.clear();
    t.terminal_cue = "Answer:";
    out.push_back(t);

    t = out.back(); // 3. No prefix
    t.id = p.task_id + "/no-prefix";
    t.prefix.clear();
    t.suffix = p.question_stem + " " + plain_choices(p.class_words) + " " + p.question_tail;
    out.push_back(t);

    t = PromptTemplate{}; // 4. No choices
    t.id = p.task_id + "/no-choices";
    t.suffix = p.generic_question;
    t.answer_style = AnswerStyle::FreeWord;
    t.answer_words = p.class_words;
    t.terminal_cue = "Answer:";
    out.push_back(t);

    t = PromptTemplate{}; // 5. Minimal instructions (prefix only, no cue)
    t.id = p.task_id + "/minimal";
    t.prefix = p.minimal_prefix;
    t.answer_words = p.class_words;
    out.push_back(t);

    t = baseline_template(p); // 6. Distortions
    t.id = p.task_id + "/distortion";
    t.distortion = distortion;
    out.push_back(t);

    t = PromptTemplate{}; // 7. No instructions
    t.id = p.task_id + "/no-instructions";
    t.answer_words = p.class_words;
    out.push_back(t);

    t = PromptTemplate{}; // 8. No instructions + distortion
    t.id = p.task_id + "/no-instructions-distortion";
    t.answer_words = p.class_words;
    t.distortion = distortion;
    out.push_back(t);

    return out;
}

VariantParts variant_parts_from_json(const json& j) {
    VariantParts p;
    p.task_id = j.at("task_id").get<std::string>();
    p.prefix = j.at("prefix").get<std::string>();
    p.question_stem = j.at("question_stem").get<std::string>();
    p.question_tail = j.at("question_tail").get<std::string>();
    p.generic_question = j.at("generic_question").get<std::string>();
    p.minimal_prefix = j.at("minimal_prefix").get<std::string>();
    p.class_words = j.at("class_words").get<std::vector<std::string>>();
    return p;
}

} // namespace plr::prompting
