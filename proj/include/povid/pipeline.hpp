#pragma once

#include <map>
#include <string>
#include <vector>

#include "povid/checkpoint.hpp"
#include "povid/dispref.hpp"
#include "povid/evalsuite.hpp"
#include "povid/trainer.hpp"

namespace povid {

// Merged experiment configuration; fully serialized into every run directory.
// Unknown keys are rejected when loading.
struct RunConfig {
    std::uint64_t seed = 12345;

    std::int64_t num_records = 2000;
    std::string prior_preset = "default";

    int embed_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 96;

    int sft_epochs = 3;
    int dpo_epochs = 3;
    int povid_epochs = 1;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double alpha = 0.1;
    double beta1 = 0.1;
    double beta2 = 0.1;
    int noise_step = 499;
    int noise_steps_total = 500;

    int eval_scenes = 200;
    int caption_max_tokens = 40;

    PolicyConfig policy_config() const;
    TrainingConfig training_config(Stage stage, std::uint64_t stage_seed) const;

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
};

CooccurrencePrior prior_from_preset(const std::string& name);  // default | unbiased

// Stream tags for deriving per-phase seeds from the root seed.
enum class Phase : std::uint64_t {
    Corpus = 1,
    Forge = 2,
    Init = 3,
    Sft = 4,
    Dpo = 5,
    Povid = 6,
    ImageOnly = 7,
    Eval = 8
};

std::uint64_t phase_seed(std::uint64_t root, Phase phase);

template <class Scalar>
std::vector<SftItem<Scalar>> make_sft_items(const std::vector<CorpusRecord>& corpus) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::vector<SftItem<Scalar>> items;
    items.reserve(corpus.size());
    for (const auto& rec : corpus) {
        SftItem<Scalar> item;
        item.image = render_features<Scalar>(rec.scene);
        item.prompt = vocab.tokenize(rec.prompt);
        item.response = vocab.tokenize(rec.answer);
        item.response.push_back(kEosId);
        items.push_back(std::move(item));
    }
    return items;
}

template <class Scalar>
std::vector<PreferenceItem<Scalar>> make_preference_items(
    const std::vector<PreferencePairRecord>& pairs) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::vector<PreferenceItem<Scalar>> items;
    items.reserve(pairs.size());
    for (const auto& pair : pairs) {
        PreferenceItem<Scalar> item;
        item.image = render_features<Scalar>(pair.scene);
        item.prompt = vocab.tokenize(pair.prompt);
        item.preferred = vocab.tokenize(pair.preferred);
        item.preferred.push_back(kEosId);
        item.dispreferred_text = vocab.tokenize(pair.dispreferred_text);
        item.dispreferred_text.push_back(kEosId);
        items.push_back(std::move(item));
    }
    return items;
}

// Evaluates a checkpoint on freshly sampled scenes. Scenes come from the
// boost-free version of the prior so co-occurrence shortcuts are wrong often;
// the biased prior still drives the adversarial POPE probe selection.
EvalReport evaluate_checkpoint(const PolicyParams<float>& params, const RunConfig& cfg,
                               const CooccurrencePrior& prior, std::uint64_t eval_seed,
                               const std::string& checkpoint_name);

inline const std::vector<std::string> kAblationVariants = {"none", "text", "image", "both"};

struct AblationOutcome {
    std::uint64_t seed = 0;
    std::map<std::string, EvalReport> by_variant;
};

// Full single-seed pipeline: corpus, pairs, SFT, then the requested variants
// ("none" = SFT baseline, "text" = stage 1 only, "image" = noisy-trigger term
// only from the SFT base, "both" = stage 1 + stage 2), each evaluated on the
// same eval scenes.
AblationOutcome run_ablation_for_seed(const RunConfig& cfg, std::uint64_t seed,
                                      const std::vector<std::string>& variants);

std::string compare_to_json(const std::vector<AblationOutcome>& outcomes);

}  // namespace povid
