#include "povid/pipeline.hpp"

#include <set>

#include "povid/errors.hpp"

#include "json.hpp"

namespace povid {

PolicyConfig RunConfig::policy_config() const {
    PolicyConfig cfg;
    cfg.embed_dim = embed_dim;
    cfg.num_layers = num_layers;
    cfg.num_heads = num_heads;
    cfg.ffn_dim = ffn_dim;
    cfg.max_seq_len = max_seq_len;
    cfg.vocab_size = Vocabulary::standard().size();
    cfg.validate();
    return cfg;
}

TrainingConfig RunConfig::training_config(Stage stage, std::uint64_t stage_seed) const {
    TrainingConfig cfg;
    cfg.stage = stage;
    cfg.epochs = stage == Stage::Sft ? sft_epochs
               : stage == Stage::Dpo ? dpo_epochs
                                     : povid_epochs;
    cfg.batch_size = batch_size;
    cfg.learning_rate = learning_rate;
    cfg.alpha = alpha;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.noise_step = noise_step;
    cfg.noise_steps_total = noise_steps_total;
    cfg.seed = stage_seed;
    return cfg;
}

std::string RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["num_records"] = num_records;
    j["prior_preset"] = prior_preset;
    j["embed_dim"] = embed_dim;
    j["num_layers"] = num_layers;
    j["num_heads"] = num_heads;
    j["ffn_dim"] = ffn_dim;
    j["max_seq_len"] = max_seq_len;
    j["sft_epochs"] = sft_epochs;
    j["dpo_epochs"] = dpo_epochs;
    j["povid_epochs"] = povid_epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["alpha"] = alpha;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["noise_step"] = noise_step;
    j["noise_steps_total"] = noise_steps_total;
    j["eval_scenes"] = eval_scenes;
    j["caption_max_tokens"] = caption_max_tokens;
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    static const std::set<std::string> known = {
        "seed",        "num_records",  "prior_preset", "embed_dim",
        "num_layers",  "num_heads",    "ffn_dim",      "max_seq_len",
        "sft_epochs",  "dpo_epochs",   "povid_epochs", "batch_size",
        "learning_rate", "alpha",      "beta1",        "beta2",
        "noise_step",  "noise_steps_total", "eval_scenes", "caption_max_tokens"};
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown config key: " + it.key());
    RunConfig cfg;
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("num_records")) cfg.num_records = j["num_records"].get<std::int64_t>();
    if (j.contains("prior_preset")) cfg.prior_preset = j["prior_preset"].get<std::string>();
    if (j.contains("embed_dim")) cfg.embed_dim = j["embed_dim"].get<int>();
    if (j.contains("num_layers")) cfg.num_layers = j["num_layers"].get<int>();
    if (j.contains("num_heads")) cfg.num_heads = j["num_heads"].get<int>();
    if (j.contains("ffn_dim")) cfg.ffn_dim = j["ffn_dim"].get<int>();
    if (j.contains("max_seq_len")) cfg.max_seq_len = j["max_seq_len"].get<int>();
    if (j.contains("sft_epochs")) cfg.sft_epochs = j["sft_epochs"].get<int>();
    if (j.contains("dpo_epochs")) cfg.dpo_epochs = j["dpo_epochs"].get<int>();
    if (j.contains("povid_epochs")) cfg.povid_epochs = j["povid_epochs"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("alpha")) cfg.alpha = j["alpha"].get<double>();
    if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
    if (j.contains("noise_step")) cfg.noise_step = j["noise_step"].get<int>();
    if (j.contains("noise_steps_total"))
        cfg.noise_steps_total = j["noise_steps_total"].get<int>();
    if (j.contains("eval_scenes")) cfg.eval_scenes = j["eval_scenes"].get<int>();
    if (j.contains("caption_max_tokens"))
        cfg.caption_max_tokens = j["caption_max_tokens"].get<int>();
    return cfg;
}

CooccurrencePrior prior_from_preset(const std::string& name) {
    if (name == "default") return CooccurrencePrior::biased_default();
    if (name == "unbiased") return CooccurrencePrior::biased_default().without_boosts();
    throw ConfigError("unknown prior preset: " + name);
}

std::uint64_t phase_seed(std::uint64_t root, Phase phase) {
    return derive_seed(root, 0x9A5E, static_cast<std::uint64_t>(phase));
}

EvalReport evaluate_checkpoint(const PolicyParams<float>& params, const RunConfig& cfg,
                               const CooccurrencePrior& prior, std::uint64_t eval_seed,
                               const std::string& checkpoint_name) {
    const Vocabulary& vocab = Vocabulary::standard();
    const CooccurrencePrior eval_prior = prior.without_boosts();
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.eval_scenes));
    for (int i = 0; i < cfg.eval_scenes; ++i)
        scenes.push_back(
            sample_scene(eval_prior, derive_seed(eval_seed, 0xE5C, static_cast<std::uint64_t>(i))));

    const TokenSeq prompt = vocab.tokenize(kCaptionPrompt);
    std::vector<TokenSeq> captions;
    captions.reserve(scenes.size());
    for (const auto& scene : scenes) {
        const ImageFeatures<float> image = render_features<float>(scene);
        captions.push_back(
            greedy_continuation(params, image, prompt, {}, cfg.caption_max_tokens));
    }

    EvalReport report;
    report.checkpoint = checkpoint_name;
    report.eval_seed = eval_seed;
    report.num_scenes = static_cast<long>(scenes.size());
    report.chair = chair_from_captions(captions, scenes);
    report.pope = pope(params, scenes, prior, eval_seed);
    report.attention_image_mass = attention_report(params, scenes, prompt, captions);
    report.attention_sequences = static_cast<long>(captions.size());
    return report;
}

AblationOutcome run_ablation_for_seed(const RunConfig& cfg, std::uint64_t seed,
                                      const std::vector<std::string>& variants) {
    for (const auto& v : variants)
        if (std::find(kAblationVariants.begin(), kAblationVariants.end(), v) ==
            kAblationVariants.end())
            throw ConfigError("unknown ablation variant: " + v);
    const CooccurrencePrior prior = prior_from_preset(cfg.prior_preset);
    const auto corpus = generate_corpus(prior, phase_seed(seed, Phase::Corpus), cfg.num_records);
    const auto pairs =
        forge_pairs(corpus, prior, AnnotatorConfig::oracle(), phase_seed(seed, Phase::Forge));

    const auto sft_items = make_sft_items<float>(corpus);
    const auto pref_items = make_preference_items<float>(pairs);
    const NoiseSchedule schedule = NoiseSchedule::build(cfg.noise_steps_total);

    PolicyParams<float> base =
        init_policy<float>(cfg.policy_config(), phase_seed(seed, Phase::Init));
    const PolicyParams<float> sft = sft_train(
        std::move(base), sft_items, cfg.training_config(Stage::Sft, phase_seed(seed, Phase::Sft)));
    const PolicyParams<float>& ref = sft;

    auto wants = [&](const std::string& v) {
        return std::find(variants.begin(), variants.end(), v) != variants.end();
    };

    const std::uint64_t eval_seed = phase_seed(seed, Phase::Eval);
    AblationOutcome outcome;
    outcome.seed = seed;

    if (wants("none"))
        outcome.by_variant["none"] = evaluate_checkpoint(sft, cfg, prior, eval_seed, "none");

    PolicyParams<float> stage1;
    bool have_stage1 = false;
    if (wants("text") || wants("both")) {
        stage1 = stage1_dpo(sft, ref, pref_items,
                            cfg.training_config(Stage::Dpo, phase_seed(seed, Phase::Dpo)));
        have_stage1 = true;
    }
    if (wants("text"))
        outcome.by_variant["text"] = evaluate_checkpoint(stage1, cfg, prior, eval_seed, "text");

    if (wants("both")) {
        const PolicyParams<float> stage2 =
            stage2_povid(stage1, ref, pref_items, schedule,
                         cfg.training_config(Stage::Povid, phase_seed(seed, Phase::Povid)));
        outcome.by_variant["both"] = evaluate_checkpoint(stage2, cfg, prior, eval_seed, "both");
    }
    (void)have_stage1;

    if (wants("image")) {
        TrainingConfig image_cfg =
            cfg.training_config(Stage::Povid, phase_seed(seed, Phase::ImageOnly));
        image_cfg.beta1 = 0.0;
        const PolicyParams<float> image_only =
            stage2_povid(sft, ref, pref_items, schedule, image_cfg);
        outcome.by_variant["image"] =
            evaluate_checkpoint(image_only, cfg, prior, eval_seed, "image");
    }
    return outcome;
}

std::string compare_to_json(const std::vector<AblationOutcome>& outcomes) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    for (const auto& o : outcomes) seeds.push_back(o.seed);
    j["seeds"] = seeds;

    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    std::map<std::string, std::vector<const EvalReport*>> grouped;
    for (const auto& o : outcomes)
        for (const auto& [variant, report] : o.by_variant) {
            nlohmann::ordered_json row;
            row["seed"] = o.seed;
            row["variant"] = variant;
            row["chair_s"] = report.chair.chair_s;
            row["chair_i"] = report.chair.chair_i;
            row["pope_accuracy"] = report.pope.accuracy;
            row["attention_image_mass"] = report.attention_image_mass;
            rows.push_back(row);
            grouped[variant].push_back(&report);
        }
    j["results"] = rows;

    nlohmann::ordered_json means;
    for (const std::string& variant : kAblationVariants) {
        auto it = grouped.find(variant);
        if (it == grouped.end()) continue;
        double cs = 0.0, ci = 0.0, pa = 0.0, am = 0.0;
        for (const EvalReport* r : it->second) {
            cs += r->chair.chair_s;
            ci += r->chair.chair_i;
            pa += r->pope.accuracy;
            am += r->attention_image_mass;
        }
        const double n = static_cast<double>(it->second.size());
        means[variant] = {{"chair_s", cs / n},
                          {"chair_i", ci / n},
                          {"pope_accuracy", pa / n},
                          {"attention_image_mass", am / n}};
    }
    j["means"] = means;
    return j.dump(2);
}

}  // namespace povid
