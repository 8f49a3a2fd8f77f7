#pragma once

#include <string>
#include <vector>

#include "povid/policy.hpp"
#include "povid/scenegen.hpp"

namespace povid {

struct ChairResult {
    double chair_s = 0.0;  // fraction of captions with >= 1 hallucinated mention
    double chair_i = 0.0;  // hallucinated mentions / total mentions
    long captions = 0;
    long hallucinated_captions = 0;
    long mentions = 0;
    long hallucinated_mentions = 0;
};

// Definition arithmetic on already-produced captions: a mention is
// hallucinated iff its kind is absent from the scene. Empty captions count as
// zero mentions.
ChairResult chair_from_captions(const std::vector<TokenSeq>& captions,
                                const std::vector<Scene>& scenes);

// Greedy-decodes a caption per scene, then scores.
template <class Scalar>
ChairResult chair(const PolicyParams<Scalar>& policy, const std::vector<Scene>& scenes,
                  const TokenSeq& prompt, int max_tokens) {
    std::vector<TokenSeq> captions;
    captions.reserve(scenes.size());
    for (const auto& scene : scenes) {
        const ImageFeatures<Scalar> image = render_features<Scalar>(scene);
        captions.push_back(greedy_continuation(policy, image, prompt, {}, max_tokens));
    }
    return chair_from_captions(captions, scenes);
}

struct PopeProbe {
    std::size_t scene_index = 0;
    std::string question;
    bool expect_yes = false;
    int kind = 0;
};

// One present-object and one absent-object probe per scene; the absent kind is
// the one drawing the most boost mass from the present kinds (adversarial),
// with seeded tie-breaking.
std::vector<PopeProbe> build_pope_probes(const std::vector<Scene>& scenes,
                                         const CooccurrencePrior& prior, std::uint64_t seed);

struct PopeResult {
    double accuracy = 0.0;
    long probes = 0;
    long correct = 0;
};

// answers[i] holds the generated tokens for probe i; only a leading yes/no
// counts as an answer.
PopeResult pope_from_answers(const std::vector<TokenSeq>& answers,
                             const std::vector<PopeProbe>& probes);

template <class Scalar>
PopeResult pope(const PolicyParams<Scalar>& policy, const std::vector<Scene>& scenes,
                const CooccurrencePrior& prior, std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    const std::vector<PopeProbe> probes = build_pope_probes(scenes, prior, seed);
    std::vector<TokenSeq> answers;
    answers.reserve(probes.size());
    for (const auto& probe : probes) {
        const ImageFeatures<Scalar> image =
            render_features<Scalar>(scenes[probe.scene_index]);
        answers.push_back(
            greedy_continuation(policy, image, vocab.tokenize(probe.question), {}, 2));
    }
    return pope_from_answers(answers, probes);
}

// Mean attention_image_mass over (scene, response) pairs; empty responses are
// skipped.
template <class Scalar>
double attention_report(const PolicyParams<Scalar>& policy, const std::vector<Scene>& scenes,
                        const TokenSeq& prompt, const std::vector<TokenSeq>& responses) {
    double total = 0.0;
    long counted = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        if (responses[i].empty()) continue;
        const ImageFeatures<Scalar> image = render_features<Scalar>(scenes[i]);
        total += attention_image_mass(policy, image, prompt, responses[i]);
        ++counted;
    }
    return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

struct EvalReport {
    std::string checkpoint;
    std::uint64_t eval_seed = 0;
    long num_scenes = 0;
    ChairResult chair;
    PopeResult pope;
    double attention_image_mass = 0.0;
    long attention_sequences = 0;
};

// Stable-key JSON with rate validation on write.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void emit_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

}  // namespace povid
