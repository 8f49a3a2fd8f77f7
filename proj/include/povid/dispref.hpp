#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "povid/scenegen.hpp"

namespace povid {

// One preference pair: the ground-truth answer as y_w and a corrupted answer
// as y_l^t. Scenes are re-attached from the corpus when pairs are loaded.
struct PreferencePairRecord {
    std::int64_t id = 0;
    Scene scene;
    std::string prompt;
    std::string preferred;
    std::string dispreferred_text;
    std::string rule;        // cooccurrence | relation | attribute | reasoning
    std::string provenance;  // oracle | remote | fallback
};

struct AnnotatorConfig {
    enum class Backend { Oracle, Remote };
    Backend backend = Backend::Oracle;
    std::string endpoint;
    std::string api_key;
    int timeout_ms = 10000;
    int retries = 2;
    std::string cache_dir;  // empty disables the on-disk cache
    bool fallback_on_error = false;

    static AnnotatorConfig oracle() { return {}; }
    // Endpoint and credential from POVID_ANNOTATOR_URL / POVID_ANNOTATOR_KEY.
    static AnnotatorConfig remote_from_env();
};

// Inserts one mention of an absent-but-boosted kind at the end of a caption;
// the kind is chosen proportional to the boost mass flowing into it from the
// present kinds.
std::string inject_cooccurrence(const Scene& scene, const std::string& answer,
                                const CooccurrencePrior& prior, std::uint64_t seed);

// Swaps exactly one relation word with its antonym (left<->right, above<->below).
std::string inject_relation_error(const Scene& scene, const std::string& answer,
                                  std::uint64_t seed);

// Replaces exactly one color token of a colored-object mention with a
// different color, preferring combinations absent from the scene.
std::string inject_attribute_error(const Scene& scene, const std::string& answer,
                                   std::uint64_t seed);

// Short answers get a result corruption (+1 on a number, yes<->no flip);
// two-part "reason: ... result: ..." answers get one instance mention dropped
// or duplicated, with the result recomputed only if the corruption changes it.
std::string hallucinate_reasoning(const Scene& scene, const std::string& question,
                                  const std::string& answer, std::uint64_t seed);

// The annotator instruction bodies sent over the wire, with {question} and
// {answer} substituted.
std::string caption_annotator_prompt(const std::string& question, const std::string& answer);
std::string reasoning_annotator_prompt(const std::string& question, const std::string& answer);

// Parses the first line starting with "Answer:" out of an annotator reply.
std::optional<std::string> parse_annotator_reply(const std::string& text);

// Applies the oracle rule for one corpus record; returns (dispreferred, rule).
std::pair<std::string, std::string> oracle_dispreference(const CorpusRecord& record,
                                                         const CooccurrencePrior& prior,
                                                         std::uint64_t seed);

// Sends one annotator request; used by forge_pairs for the remote backend.
// Implemented over HTTP with retries and an on-disk cache.
using AnnotatorClient = std::function<std::string(const std::string& prompt_body)>;
AnnotatorClient make_remote_client(const AnnotatorConfig& config);

// One pair per corpus record. Captioning records draw a seed-uniform choice
// among the applicable caption injectors; relation records use the relation
// injector; QA and reasoning records use hallucinate_reasoning. The remote
// backend fills dispreferred_text from the annotator after validation and
// falls back to the oracle (provenance "fallback") when the reply is invalid.
std::vector<PreferencePairRecord> forge_pairs(const std::vector<CorpusRecord>& corpus,
                                              const CooccurrencePrior& prior,
                                              const AnnotatorConfig& annotator,
                                              std::uint64_t seed);

std::string pair_to_json(const PreferencePairRecord& pair);
PreferencePairRecord pair_from_json(const std::string& line);  // scene left empty

void write_pairs(const std::vector<PreferencePairRecord>& pairs, const std::string& path);
// Loads pairs and re-attaches scenes by id from the corpus.
std::vector<PreferencePairRecord> read_pairs(const std::string& path,
                                             const std::vector<CorpusRecord>& corpus);

}  // namespace povid
