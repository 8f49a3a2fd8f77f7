#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "povid/errors.hpp"
#include "povid/pipeline.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace povid;

namespace {

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

CooccurrencePrior resolve_prior(const std::string& spec) {
    if (fs::exists(spec)) return CooccurrencePrior::from_json(read_file(spec));
    return prior_from_preset(spec);
}

RunConfig load_run_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::from_json(read_file(config_path));
    if (seed) cfg.seed = *seed;
    return cfg;
}

// A run directory is complete once .complete exists; completed runs are only
// overwritten with --force.
void prepare_run_dir(const std::string& dir, bool force) {
    const fs::path marker = fs::path(dir) / ".complete";
    if (fs::exists(marker)) {
        if (!force)
            throw UsageError("run directory " + dir +
                             " already holds a completed run (use --force to overwrite)");
        fs::remove(marker);
    }
    fs::create_directories(fs::path(dir) / "checkpoints");
}

void mark_complete(const std::string& dir) {
    write_file((fs::path(dir) / ".complete").string(), "");
}

std::ofstream open_metrics(const std::string& dir) {
    std::ofstream out(fs::path(dir) / "metrics.jsonl", std::ios::binary);
    if (!out) throw IoError("cannot open metrics.jsonl in " + dir);
    return out;
}

MetricsSink metrics_sink(std::ofstream& out) {
    return [&out](const MetricsRow& row) {
        nlohmann::ordered_json j;
        j["step"] = row.step;
        j["stage"] = row.stage;
        j["loss"] = row.loss;
        j["margin"] = row.margin;
        j["attention_mass"] = row.attention_mass;
        out << j.dump() << "\n";
    };
}

void write_invocation(const std::string& dir, const nlohmann::ordered_json& extra) {
    write_file((fs::path(dir) / "invocation.json").string(), extra.dump(2));
}

int cmd_gen_corpus(const std::string& out, std::int64_t scenes, std::uint64_t seed,
                   const std::string& prior_spec) {
    const CooccurrencePrior prior = resolve_prior(prior_spec);
    const auto records = generate_corpus(prior, seed, scenes);
    write_corpus(records, out);
    write_file(out + ".prior.json", prior.to_json());
    std::cout << "wrote " << records.size() << " records to " << out << "\n";
    return 0;
}

int cmd_forge_prefs(const std::string& corpus_path, const std::string& out,
                    const std::string& annotator_name, std::uint64_t seed,
                    const std::string& prior_spec, bool fallback, const std::string& cache_dir,
                    int timeout_ms, int retries) {
    const auto corpus = read_corpus(corpus_path);
    const CooccurrencePrior prior = resolve_prior(prior_spec);
    AnnotatorConfig annotator;
    if (annotator_name == "oracle") {
        annotator = AnnotatorConfig::oracle();
    } else if (annotator_name == "remote") {
        annotator = AnnotatorConfig::remote_from_env();
        annotator.fallback_on_error = fallback;
        annotator.cache_dir = cache_dir;
        annotator.timeout_ms = timeout_ms;
        annotator.retries = retries;
    } else {
        throw UsageError("--annotator must be oracle or remote");
    }
    const auto pairs = forge_pairs(corpus, prior, annotator, seed);
    write_pairs(pairs, out);
    std::cout << "wrote " << pairs.size() << " pairs to " << out << "\n";
    return 0;
}

// Spot finite-difference check of the configured stage loss in 64-bit on the
// first batch; exits nonzero when the worst relative error exceeds 1e-4.
int run_gradient_check(Stage stage, const RunConfig& cfg,
                       const std::vector<CorpusRecord>& corpus,
                       const std::vector<PreferencePairRecord>& pairs);

int cmd_train(const std::string& stage_name_str, const std::string& corpus_path,
              const std::string& pairs_path, const std::string& from_ckpt,
              const std::string& ref_ckpt, const std::string& out_dir,
              const std::string& config_path, std::optional<std::uint64_t> seed, bool force,
              bool grad_check) {
    const Stage stage = stage_from_name(stage_name_str);
    if (corpus_path.empty()) throw UsageError("train requires --corpus");
    if (stage != Stage::Sft && pairs_path.empty())
        throw UsageError("train --stage " + stage_name_str + " requires --pairs");
    if (stage != Stage::Sft && from_ckpt.empty())
        throw UsageError("train --stage " + stage_name_str +
                         " requires --from (the checkpoint to start from)");
    if (stage == Stage::Povid && ref_ckpt.empty())
        throw UsageError("train --stage povid requires --ref (the frozen reference checkpoint)");

    const RunConfig cfg = load_run_config(config_path, seed);
    const auto corpus = read_corpus(corpus_path);
    std::vector<PreferencePairRecord> pairs;
    if (!pairs_path.empty()) pairs = read_pairs(pairs_path, corpus);

    if (grad_check) return run_gradient_check(stage, cfg, corpus, pairs);

    prepare_run_dir(out_dir, force);
    write_file((fs::path(out_dir) / "config.json").string(), cfg.to_json());
    nlohmann::ordered_json inv;
    inv["stage"] = stage_name_str;
    inv["corpus"] = corpus_path;
    if (!pairs_path.empty()) inv["pairs"] = pairs_path;
    if (!from_ckpt.empty()) inv["from"] = from_ckpt;
    if (!ref_ckpt.empty()) inv["ref"] = ref_ckpt;
    write_invocation(out_dir, inv);

    std::ofstream metrics = open_metrics(out_dir);
    const MetricsSink sink = metrics_sink(metrics);

    std::string ckpt_name;
    if (stage == Stage::Sft) {
        const auto items = make_sft_items<float>(corpus);
        PolicyParams<float> params =
            init_policy<float>(cfg.policy_config(), phase_seed(cfg.seed, Phase::Init));
        params = sft_train(std::move(params), items,
                           cfg.training_config(Stage::Sft, phase_seed(cfg.seed, Phase::Sft)),
                           sink);
        ckpt_name = "sft-final.povd";
        save_checkpoint(params, (fs::path(out_dir) / "checkpoints" / ckpt_name).string());
    } else if (stage == Stage::Dpo) {
        const auto items = make_preference_items<float>(pairs);
        const PolicyParams<float> ref = load_checkpoint(from_ckpt);
        PolicyParams<float> params = stage1_dpo(
            ref, ref, items, cfg.training_config(Stage::Dpo, phase_seed(cfg.seed, Phase::Dpo)),
            sink);
        ckpt_name = "stage1-final.povd";
        save_checkpoint(params, (fs::path(out_dir) / "checkpoints" / ckpt_name).string());
    } else {
        const auto items = make_preference_items<float>(pairs);
        const PolicyParams<float> start = load_checkpoint(from_ckpt);
        const PolicyParams<float> ref = load_checkpoint(ref_ckpt);
        const NoiseSchedule schedule = NoiseSchedule::build(cfg.noise_steps_total);
        PolicyParams<float> params = stage2_povid(
            start, ref, items, schedule,
            cfg.training_config(Stage::Povid, phase_seed(cfg.seed, Phase::Povid)), sink);
        ckpt_name = "stage2-final.povd";
        save_checkpoint(params, (fs::path(out_dir) / "checkpoints" / ckpt_name).string());
    }
    mark_complete(out_dir);
    std::cout << "run complete: " << (fs::path(out_dir) / "checkpoints" / ckpt_name).string()
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& out, const std::string& suite_csv,
             int seeds, const std::string& prior_spec, const std::string& config_path,
             std::optional<std::uint64_t> seed) {
    const RunConfig cfg = load_run_config(config_path, seed);
    const CooccurrencePrior prior = resolve_prior(prior_spec);
    const PolicyParams<float> params = load_checkpoint(ckpt);

    std::set<std::string> suite;
    std::stringstream ss(suite_csv);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part != "chair" && part != "pope" && part != "attention")
            throw UsageError("unknown suite entry: " + part);
        suite.insert(part);
    }
    if (suite.empty()) throw UsageError("--suite must name at least one metric");

    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    double mean_cs = 0, mean_ci = 0, mean_pa = 0, mean_am = 0;
    for (int i = 0; i < seeds; ++i) {
        const std::uint64_t eval_seed = derive_seed(cfg.seed, 0xE7A1, static_cast<std::uint64_t>(i));
        const EvalReport r = evaluate_checkpoint(params, cfg, prior, eval_seed, ckpt);
        nlohmann::ordered_json row = nlohmann::ordered_json::parse(report_to_json(r));
        if (!suite.count("chair")) row.erase("chair");
        if (!suite.count("pope")) row.erase("pope");
        if (!suite.count("attention")) row.erase("attention");
        per_seed.push_back(row);
        mean_cs += r.chair.chair_s;
        mean_ci += r.chair.chair_i;
        mean_pa += r.pope.accuracy;
        mean_am += r.attention_image_mass;
    }
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["checkpoint"] = ckpt;
    j["seeds"] = seeds;
    nlohmann::ordered_json mean;
    if (suite.count("chair")) {
        mean["chair_s"] = mean_cs / seeds;
        mean["chair_i"] = mean_ci / seeds;
    }
    if (suite.count("pope")) mean["pope_accuracy"] = mean_pa / seeds;
    if (suite.count("attention")) mean["attention_image_mass"] = mean_am / seeds;
    j["mean"] = mean;
    j["per_seed"] = per_seed;
    write_file(out, j.dump(2) + "\n");
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_ablate(const std::string& out_dir, const std::string& variants_csv, int seeds,
               const std::string& config_path, std::optional<std::uint64_t> seed, bool force) {
    const RunConfig cfg = load_run_config(config_path, seed);
    std::vector<std::string> variants;
    std::stringstream ss(variants_csv);
    std::string part;
    while (std::getline(ss, part, ',')) variants.push_back(part);
    if (variants.empty()) throw UsageError("--variants must name at least one variant");

    const fs::path marker = fs::path(out_dir) / ".complete";
    if (fs::exists(marker)) {
        if (!force)
            throw UsageError("directory " + out_dir +
                             " already holds a completed run (use --force to overwrite)");
        fs::remove(marker);
    }
    fs::create_directories(fs::path(out_dir) / "reports");
    write_file((fs::path(out_dir) / "config.json").string(), cfg.to_json());

    std::vector<AblationOutcome> outcomes;
    for (int i = 0; i < seeds; ++i) {
        const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(i);
        std::cout << "ablation seed " << run_seed << " (" << (i + 1) << "/" << seeds << ")\n";
        AblationOutcome outcome = run_ablation_for_seed(cfg, run_seed, variants);
        for (const auto& [variant, report] : outcome.by_variant)
            emit_report(report, (fs::path(out_dir) / "reports" /
                                 ("report-" + variant + "-seed" + std::to_string(run_seed) +
                                  ".json"))
                                    .string());
        outcomes.push_back(std::move(outcome));
    }
    write_file((fs::path(out_dir) / "compare.json").string(), compare_to_json(outcomes) + "\n");
    mark_complete(out_dir);
    std::cout << "wrote " << (fs::path(out_dir) / "compare.json").string() << "\n";
    return 0;
}

int run_gradient_check(Stage stage, const RunConfig& cfg,
                       const std::vector<CorpusRecord>& corpus,
                       const std::vector<PreferencePairRecord>& pairs) {
    PolicyConfig pc = cfg.policy_config();
    PolicyParams<double> params =
        init_policy<double>(pc, phase_seed(cfg.seed, Phase::Init));
    const PolicyParams<double> ref =
        init_policy<double>(pc, derive_seed(cfg.seed, 0x8EF));

    const int batch = std::min<int>(cfg.batch_size, 3);
    std::function<double()> loss_fn;
    std::function<PolicyParams<double>()> grad_fn;

    std::vector<SftItem<double>> sft_items;
    std::vector<PreferenceItem<double>> pref_items;
    if (stage == Stage::Sft) {
        auto all = make_sft_items<double>(corpus);
        sft_items.assign(all.begin(), all.begin() + std::min<std::size_t>(all.size(), batch));
        loss_fn = [&]() { return next_token_loss(params, sft_items, false).mean_ce; };
        grad_fn = [&]() { return next_token_loss(params, sft_items).grads; };
    } else {
        auto all = make_preference_items<double>(pairs);
        pref_items.assign(all.begin(), all.begin() + std::min<std::size_t>(all.size(), batch));
        if (stage == Stage::Povid) {
            const NoiseSchedule schedule = NoiseSchedule::build(cfg.noise_steps_total);
            for (std::size_t i = 0; i < pref_items.size(); ++i) {
                auto& item = pref_items[i];
                item.noisy_image = add_noise(schedule, item.image, cfg.noise_step,
                                             derive_seed(cfg.seed, 0x6C, i));
                item.triggered =
                    triggered_dispref(params, *item.noisy_image, item.prompt, item.preferred);
            }
            loss_fn = [&]() {
                return povid_loss(params, ref, pref_items, cfg.alpha, cfg.beta1, cfg.beta2).loss;
            };
            grad_fn = [&]() {
                return povid_loss(params, ref, pref_items, cfg.alpha, cfg.beta1, cfg.beta2).grads;
            };
        } else {
            loss_fn = [&]() { return dpo_loss(params, ref, pref_items, cfg.alpha).loss; };
            grad_fn = [&]() { return dpo_loss(params, ref, pref_items, cfg.alpha).grads; };
        }
    }

    const PolicyParams<double> grads = grad_fn();
    CounterRng rng(derive_seed(cfg.seed, 0xFD));
    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    const int samples = 150;

    std::vector<std::pair<std::string, Mat<double>*>> mats;
    params.for_each([&](const std::string& name, Mat<double>& m) { mats.emplace_back(name, &m); });
    std::vector<const Mat<double>*> grad_mats;
    grads.for_each([&](const std::string&, const Mat<double>& m) { grad_mats.push_back(&m); });

    for (int s = 0; s < samples; ++s) {
        const std::size_t mi = rng.next_below(mats.size());
        Mat<double>& m = *mats[mi].second;
        const Eigen::Index r = static_cast<Eigen::Index>(rng.next_below(m.rows()));
        const Eigen::Index c = static_cast<Eigen::Index>(rng.next_below(m.cols()));
        const double kept = m(r, c);
        m(r, c) = kept + h;
        const double up = loss_fn();
        m(r, c) = kept - h;
        const double down = loss_fn();
        m(r, c) = kept;
        const double fd = (up - down) / (2 * h);
        const double an = (*grad_mats[mi])(r, c);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        if (rel > worst) {
            worst = rel;
            worst_name = mats[mi].first;
        }
    }
    std::cout << "gradient check (" << samples << " coordinates): max relative error " << worst
              << (worst_name.empty() ? "" : " at " + worst_name) << "\n";
    return worst <= 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference-tuning laboratory for a tiny multimodal policy"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic grounded-caption corpus");
    std::string gen_out = "corpus.jsonl", gen_prior = "default";
    std::int64_t gen_scenes = 2000;
    std::uint64_t gen_seed = 12345;
    gen->add_option("--out", gen_out, "Output JSONL path");
    gen->add_option("--scenes", gen_scenes, "Number of records")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", gen_seed, "Corpus seed");
    gen->add_option("--prior", gen_prior, "Prior preset name or prior JSON path");

    // forge-prefs
    auto* forge = app.add_subcommand("forge-prefs", "Forge preference pairs from a corpus");
    std::string fp_corpus, fp_out = "pairs.jsonl", fp_annotator = "oracle",
                fp_prior = "default", fp_cache;
    std::uint64_t fp_seed = 12345;
    bool fp_fallback = false;
    int fp_timeout = 10000, fp_retries = 2;
    forge->add_option("--corpus", fp_corpus, "Corpus JSONL path")->required();
    forge->add_option("--out", fp_out, "Output pair JSONL path");
    forge->add_option("--annotator", fp_annotator, "oracle or remote");
    forge->add_option("--seed", fp_seed, "Forging seed");
    forge->add_option("--prior", fp_prior, "Prior preset name or prior JSON path");
    forge->add_flag("--fallback", fp_fallback, "Fall back to the oracle on annotator failure");
    forge->add_option("--cache-dir", fp_cache, "Annotator response cache directory");
    forge->add_option("--timeout-ms", fp_timeout, "Annotator request timeout");
    forge->add_option("--retries", fp_retries, "Annotator retry count");

    // train
    auto* train = app.add_subcommand("train", "Train one stage");
    std::string tr_stage, tr_corpus, tr_pairs, tr_from, tr_ref, tr_out = "run", tr_config;
    std::optional<std::uint64_t> tr_seed;
    bool tr_force = false, tr_grad_check = false;
    train->add_option("--stage", tr_stage, "sft, dpo or povid")->required();
    train->add_option("--corpus", tr_corpus, "Corpus JSONL path");
    train->add_option("--pairs", tr_pairs, "Pair JSONL path");
    train->add_option("--from", tr_from, "Checkpoint to start from");
    train->add_option("--ref", tr_ref, "Frozen reference checkpoint (povid)");
    train->add_option("--out", tr_out, "Run directory");
    train->add_option("--config", tr_config, "Run config JSON path");
    train->add_option("--seed", tr_seed, "Root seed override");
    train->add_flag("--force", tr_force, "Overwrite a completed run directory");
    train->add_flag("--grad-check", tr_grad_check,
                    "Finite-difference check of the stage loss, then exit");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_out = "report.json", ev_suite = "chair,pope,attention",
                ev_prior = "default", ev_config;
    int ev_seeds = 1;
    std::optional<std::uint64_t> ev_seed;
    eval->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
    eval->add_option("--out", ev_out, "Report path");
    eval->add_option("--suite", ev_suite, "Comma list of chair,pope,attention");
    eval->add_option("--seeds", ev_seeds, "Number of eval seeds")->check(CLI::PositiveNumber);
    eval->add_option("--prior", ev_prior, "Prior preset name or prior JSON path");
    eval->add_option("--config", ev_config, "Run config JSON path");
    eval->add_option("--seed", ev_seed, "Root seed override");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run the 2x2 dispreference ablation");
    std::string ab_out = "ablation", ab_variants = "none,text,image,both", ab_config;
    int ab_seeds = 5;
    std::optional<std::uint64_t> ab_seed;
    bool ab_force = false;
    ablate->add_option("--out", ab_out, "Output directory");
    ablate->add_option("--variants", ab_variants, "Comma list of none,text,image,both");
    ablate->add_option("--seeds", ab_seeds, "Number of seeds")->check(CLI::PositiveNumber);
    ablate->add_option("--config", ab_config, "Run config JSON path");
    ablate->add_option("--seed", ab_seed, "Root seed override");
    ablate->add_flag("--force", ab_force, "Overwrite a completed directory");

    try {
        app.parse(argc, argv);
        if (gen->parsed())
            return cmd_gen_corpus(gen_out, gen_scenes, gen_seed, gen_prior);
        if (forge->parsed())
            return cmd_forge_prefs(fp_corpus, fp_out, fp_annotator, fp_seed, fp_prior,
                                   fp_fallback, fp_cache, fp_timeout, fp_retries);
        if (train->parsed())
            return cmd_train(tr_stage, tr_corpus, tr_pairs, tr_from, tr_ref, tr_out, tr_config,
                             tr_seed, tr_force, tr_grad_check);
        if (eval->parsed())
            return cmd_eval(ev_ckpt, ev_out, ev_suite, ev_seeds, ev_prior, ev_config, ev_seed);
        if (ablate->parsed())
            return cmd_ablate(ab_out, ab_variants, ab_seeds, ab_config, ab_seed, ab_force);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
