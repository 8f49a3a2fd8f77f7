#include "povid/dispref.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "povid/errors.hpp"
#include "povid/lexicon.hpp"
#include "povid/rng.hpp"

#include "json.hpp"

namespace povid {

namespace {

constexpr std::uint64_t kForgeStream = 0xF074E;

const std::map<std::string, std::string> kRelationAntonyms = {
    {"left", "right"}, {"right", "left"}, {"above", "below"}, {"below", "above"}};

struct Mention {
    int kind;
    int row;
    int col;
};

std::string render_mentions(const std::vector<Mention>& mentions) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::string out;
    for (std::size_t i = 0; i < mentions.size(); ++i) {
        const std::string& name = vocab.object_name(mentions[i].kind);
        out += i == 0 ? "there is " : " and ";
        out += article_for(name) + " " + name + " at (" + std::to_string(mentions[i].row) +
               "," + std::to_string(mentions[i].col) + ")";
    }
    return out;
}

// Splits a two-part answer into its mention list and result tokens. Returns
// false when the answer does not follow the "reason: ... result: ..." form.
bool parse_two_part(const TokenSeq& tokens, std::vector<Mention>* mentions,
                    TokenSeq* result_tokens) {
    const Vocabulary& vocab = Vocabulary::standard();
    const std::int32_t reason_id = vocab.id("reason");
    const std::int32_t result_id = vocab.id("result");
    const std::int32_t colon_id = vocab.id(":");
    const std::int32_t period_id = vocab.id(".");
    const std::int32_t at_id = vocab.id("at");
    if (tokens.size() < 6 || tokens[0] != reason_id || tokens[1] != colon_id) return false;

    std::size_t i = 2;
    mentions->clear();
    while (i < tokens.size() && tokens[i] != period_id) {
        const int kind = vocab.kind_of_token(tokens[i]);
        if (kind >= 0 && i + 2 < tokens.size() && tokens[i + 1] == at_id) {
            const std::string& cell = vocab.word(tokens[i + 2]);
            if (cell.size() == 5 && cell.front() == '(' && cell.back() == ')') {
                mentions->push_back({kind, cell[1] - '0', cell[3] - '0'});
                i += 3;
                continue;
            }
        }
        ++i;
    }
    if (i >= tokens.size() || tokens[i] != period_id) return false;
    if (i + 2 >= tokens.size() || tokens[i + 1] != result_id || tokens[i + 2] != colon_id)
        return false;
    result_tokens->assign(tokens.begin() + static_cast<long>(i) + 3, tokens.end());
    return !mentions->empty() && !result_tokens->empty();
}

}  // namespace

std::string inject_cooccurrence(const Scene& scene, const std::string& answer,
                                const CooccurrencePrior& prior, std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    const std::vector<int> present = scene.present_kinds();
    std::vector<int> candidates;
    std::vector<double> mass;
    for (int k = 0; k < kNumKinds; ++k) {
        if (scene.has_kind(k)) continue;
        const double m = prior.boost_mass_into(k, present);
        if (m > 0.0) {
            candidates.push_back(k);
            mass.push_back(m);
        }
    }
    if (candidates.empty())
        throw NoCandidateError("no absent kind receives boost mass from the scene");

    CounterRng rng(derive_seed(seed, 0xC0));
    double total = 0.0;
    for (double m : mass) total += m;
    double u = rng.next_double() * total;
    std::size_t pick = 0;
    for (; pick + 1 < candidates.size(); ++pick) {
        u -= mass[pick];
        if (u < 0.0) break;
    }
    const int kind = candidates[pick];
    const int color = static_cast<int>(rng.next_below(kNumColors));
    const std::string& color_name = vocab.color_name(color);
    const std::string& kind_name = vocab.object_name(kind);
    return answer + " and " + article_for(color_name) + " " + color_name + " " + kind_name;
}

std::string inject_relation_error(const Scene&, const std::string& answer, std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    TokenSeq tokens = vocab.tokenize(answer);
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (kRelationAntonyms.count(vocab.word(tokens[i]))) sites.push_back(i);
    if (sites.empty()) throw NoRelationError("answer contains no spatial relation word");
    CounterRng rng(derive_seed(seed, 0xB1));
    const std::size_t site = sites[rng.next_below(sites.size())];
    tokens[site] = vocab.id(kRelationAntonyms.at(vocab.word(tokens[site])));
    return vocab.detokenize(tokens);
}

std::string inject_attribute_error(const Scene& scene, const std::string& answer,
                                   std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    TokenSeq tokens = vocab.tokenize(answer);
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        if (vocab.is_color_token(tokens[i]) && vocab.is_object_token(tokens[i + 1]))
            sites.push_back(i);
    if (sites.empty()) throw NoAttributeError("answer mentions no colored object");

    CounterRng rng(derive_seed(seed, 0xA7));
    const std::size_t site = sites[rng.next_below(sites.size())];
    const int old_color = vocab.color_of_token(tokens[site]);
    const int kind = vocab.kind_of_token(tokens[site + 1]);

    auto combo_in_scene = [&](int color) {
        for (const auto& inst : scene.instances)
            if (inst.kind == kind && inst.color == color) return true;
        return false;
    };
    std::vector<int> preferred, fallback;
    for (int c = 0; c < kNumColors; ++c) {
        if (c == old_color) continue;
        (combo_in_scene(c) ? fallback : preferred).push_back(c);
    }
    const std::vector<int>& pool = preferred.empty() ? fallback : preferred;
    tokens[site] = vocab.color_token(pool[rng.next_below(pool.size())]);
    return vocab.detokenize(tokens);
}

std::string hallucinate_reasoning(const Scene&, const std::string& question,
                                  const std::string& answer, std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    if (answer.empty()) throw MalformedAnswerError("empty answer");
    TokenSeq tokens = vocab.tokenize(answer);
    CounterRng rng(derive_seed(seed, 0x4EA));

    // Case 1: short answers.
    if (tokens.size() == 1) {
        const std::string& w = vocab.word(tokens[0]);
        if (w == "yes") return "no";
        if (w == "no") return "yes";
        char* end = nullptr;
        const long n = std::strtol(w.c_str(), &end, 10);
        if (end && *end == '\0') return std::to_string(n + 1);
        throw MalformedAnswerError("short answer is neither yes/no nor a number: " + w);
    }

    // Case 2: two-part reason/result answers.
    std::vector<Mention> mentions;
    TokenSeq result_tokens;
    if (!parse_two_part(tokens, &mentions, &result_tokens))
        throw MalformedAnswerError("answer is not in reason/result form: " + answer);

    const bool can_drop = mentions.size() >= 2;
    const bool do_drop = can_drop && rng.next_below(2) == 0;
    const std::size_t site = rng.next_below(mentions.size());
    if (do_drop) {
        mentions.erase(mentions.begin() + static_cast<long>(site));
    } else {
        const Mention copy = mentions[site];
        mentions.insert(mentions.begin() + static_cast<long>(site), copy);
    }

    // Recompute the result from the corrupted reason; when the corruption does
    // not change it the original result is kept by construction.
    TokenSeq question_tokens = vocab.tokenize(question);
    auto has_word = [&](const char* w) {
        const std::int32_t id = vocab.id(w);
        return std::find(question_tokens.begin(), question_tokens.end(), id) !=
               question_tokens.end();
    };
    std::vector<int> asked_kinds;
    for (std::int32_t t : question_tokens) {
        const int k = vocab.kind_of_token(t);
        if (k >= 0) asked_kinds.push_back(k);
    }
    auto count_of = [&](int kind) {
        int n = 0;
        for (const auto& m : mentions)
            if (m.kind == kind) ++n;
        return n;
    };

    std::string result;
    if (has_word("many") && asked_kinds.size() == 1) {
        result = std::to_string(count_of(asked_kinds[0]));
    } else if (has_word("more") && asked_kinds.size() == 2) {
        result = count_of(asked_kinds[0]) > count_of(asked_kinds[1]) ? "yes" : "no";
    } else {
        throw MalformedAnswerError("cannot recompute a result for question: " + question);
    }
    return "reason: " + render_mentions(mentions) + ". result: " + result;
}

std::string caption_annotator_prompt(const std::string& question, const std::string& answer) {
    return
        "Help me generate one highly confusing response based on the image and the standard "
        "caption in the Question-Answer Pair.\n"
        "*****************************************\n"
        "Question-answer Pair:\n"
        "Q: " + question + "\n"
        "A: " + answer + "\n"
        "Requirements:\n"
        "(1) The generated caption is generally similar to the given A, with the same main "
        "meaning; (2) You can refer to the following errors to generate the wrong caption (1. "
        "The wrong caption can contain some co-occurring objects, which are prone to appear in "
        "such scenarios but do not appear in the image; 2. The wrong caption can be an error in "
        "the number of entities or the logical relationships between entities; 3. The "
        "attributes of entities in the caption can also be modified, such as color, appearance, "
        "etc.) (3) Compared to the original caption A, the caption you modified is incorrect "
        "based on the provided image.\n"
        "*****************************************\n"
        "Output Format:\n"
        "Answer: your answer";
}

std::string reasoning_annotator_prompt(const std::string& question, const std::string& answer) {
    return
        "Now, please help me generate new answers with hallucination errors based on the image, "
        "question, and answer provided. There are two cases now:\n"
        "1. If the given question and answer are short and do not require logical reasoning, "
        "then modify the answer to a hallucination error answer, such as some quantity errors "
        "or entity and property errors.\n"
        "2. If the entire question requires logical reasoning, then help me reorganize the "
        "answers based on the given image, questions, and answers into the format \"Reason: "
        "xxx, Result: xxx\" (Answer 1). Modify the reasons by introducing errors related to "
        "logical relationships, entity information, entity attributes, etc. If the error in the "
        "reason would lead to a new result, modify the result accordingly. If the error does "
        "not lead to a new result, keep the original result. Similarly, organize it in the "
        "format \"Reason: xxx, Result: xxx\" (Answer 2).\n"
        "*****************************************\n"
        "Question-answer Pair:\n"
        "Q: " + question + "\n"
        "A: " + answer + "\n\n"
        "Requirements:\n"
        "(1) The generated wrong answer and reasoning process should be combined with the image "
        "and be misleading..\n"
        "*****************************************\n"
        "Output Format:\n"
        "Answer: your answer";
}

std::optional<std::string> parse_annotator_reply(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string prefix = "Answer:";
        if (line.rfind(prefix, 0) == 0) {
            std::string rest = line.substr(prefix.size());
            const auto begin = rest.find_first_not_of(" \t");
            if (begin == std::string::npos) return std::string();
            const auto end = rest.find_last_not_of(" \t\r");
            return rest.substr(begin, end - begin + 1);
        }
    }
    return std::nullopt;
}

std::pair<std::string, std::string> oracle_dispreference(const CorpusRecord& record,
                                                         const CooccurrencePrior& prior,
                                                         std::uint64_t seed) {
    if (record.task == kCaptionTask) {
        std::vector<std::string> applicable;
        const std::vector<int> present = record.scene.present_kinds();
        bool has_cooc = false;
        for (int k = 0; k < kNumKinds && !has_cooc; ++k)
            if (!record.scene.has_kind(k) && prior.boost_mass_into(k, present) > 0.0)
                has_cooc = true;
        if (has_cooc) applicable.push_back("cooccurrence");
        const Vocabulary& vocab = Vocabulary::standard();
        TokenSeq tokens = vocab.tokenize(record.answer);
        for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
            if (vocab.is_color_token(tokens[i]) && vocab.is_object_token(tokens[i + 1])) {
                applicable.push_back("attribute");
                break;
            }
        for (std::int32_t t : tokens)
            if (kRelationAntonyms.count(vocab.word(t))) {
                applicable.push_back("relation");
                break;
            }
        if (applicable.empty())
            throw NoCandidateError("no caption injector applies to record " +
                                   std::to_string(record.id));
        CounterRng rng(derive_seed(seed, 0x5E1));
        const std::string rule = applicable[rng.next_below(applicable.size())];
        if (rule == "cooccurrence")
            return {inject_cooccurrence(record.scene, record.answer, prior, seed), rule};
        if (rule == "attribute")
            return {inject_attribute_error(record.scene, record.answer, seed), rule};
        return {inject_relation_error(record.scene, record.answer, seed), rule};
    }
    if (record.task == "relation")
        return {inject_relation_error(record.scene, record.answer, seed), "relation"};
    return {hallucinate_reasoning(record.scene, record.prompt, record.answer, seed),
            "reasoning"};
}

std::vector<PreferencePairRecord> forge_pairs(const std::vector<CorpusRecord>& corpus,
                                              const CooccurrencePrior& prior,
                                              const AnnotatorConfig& annotator,
                                              std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    AnnotatorClient client;
    if (annotator.backend == AnnotatorConfig::Backend::Remote)
        client = make_remote_client(annotator);

    std::vector<PreferencePairRecord> pairs;
    pairs.reserve(corpus.size());
    for (const auto& record : corpus) {
        const std::uint64_t pair_seed =
            derive_seed(seed, kForgeStream, static_cast<std::uint64_t>(record.id));
        PreferencePairRecord pair;
        pair.id = record.id;
        pair.scene = record.scene;
        pair.prompt = record.prompt;
        pair.preferred = record.answer;

        auto [oracle_text, oracle_rule] = oracle_dispreference(record, prior, pair_seed);
        pair.dispreferred_text = oracle_text;
        pair.rule = oracle_rule;
        pair.provenance = "oracle";

        if (client) {
            const std::string body =
                record.task == kCaptionTask
                    ? caption_annotator_prompt(record.prompt, record.answer)
                    : reasoning_annotator_prompt(record.prompt, record.answer);
            std::optional<std::string> remote_text;
            try {
                remote_text = parse_annotator_reply(client(body));
            } catch (const AnnotatorError&) {
                if (!annotator.fallback_on_error) throw;
                remote_text = std::nullopt;
            }
            bool valid = false;
            if (remote_text && !remote_text->empty() && *remote_text != record.answer) {
                try {
                    valid = !vocab.tokenize(*remote_text).empty();
                } catch (const UnknownWordError&) {
                    valid = false;
                }
            }
            if (valid) {
                pair.dispreferred_text = *remote_text;
                pair.rule = "annotator";
                pair.provenance = "remote";
            } else {
                pair.provenance = "fallback";
                std::cerr << "annotator reply rejected for record " << record.id
                          << "; using the rule oracle\n";
            }
        }

        if (pair.dispreferred_text.empty() || pair.dispreferred_text == pair.preferred)
            throw ConfigError("forged pair violates preferred != dispreferred for record " +
                              std::to_string(record.id));
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

std::string pair_to_json(const PreferencePairRecord& pair) {
    nlohmann::ordered_json j;
    j["id"] = pair.id;
    j["prompt"] = pair.prompt;
    j["preferred"] = pair.preferred;
    j["dispreferred_text"] = pair.dispreferred_text;
    j["rule"] = pair.rule;
    j["provenance"] = pair.provenance;
    return j.dump();
}

PreferencePairRecord pair_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    PreferencePairRecord pair;
    pair.id = j.at("id").get<std::int64_t>();
    pair.prompt = j.at("prompt").get<std::string>();
    pair.preferred = j.at("preferred").get<std::string>();
    pair.dispreferred_text = j.at("dispreferred_text").get<std::string>();
    pair.rule = j.at("rule").get<std::string>();
    pair.provenance = j.at("provenance").get<std::string>();
    return pair;
}

void write_pairs(const std::vector<PreferencePairRecord>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& pair : pairs) out << pair_to_json(pair) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::vector<PreferencePairRecord> read_pairs(const std::string& path,
                                             const std::vector<CorpusRecord>& corpus) {
    std::map<std::int64_t, const CorpusRecord*> by_id;
    for (const auto& rec : corpus) by_id[rec.id] = &rec;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<PreferencePairRecord> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        PreferencePairRecord pair = pair_from_json(line);
        auto it = by_id.find(pair.id);
        if (it == by_id.end())
            throw ConfigError("pair id " + std::to_string(pair.id) + " missing from corpus");
        pair.scene = it->second->scene;
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

AnnotatorConfig AnnotatorConfig::remote_from_env() {
    AnnotatorConfig config;
    config.backend = Backend::Remote;
    if (const char* url = std::getenv("POVID_ANNOTATOR_URL")) config.endpoint = url;
    if (const char* key = std::getenv("POVID_ANNOTATOR_KEY")) config.api_key = key;
    return config;
}

}  // namespace povid
