#include "povid/evalsuite.hpp"

#include <fstream>
#include <set>

#include "povid/errors.hpp"
#include "povid/rng.hpp"

#include "json.hpp"

namespace povid {

ChairResult chair_from_captions(const std::vector<TokenSeq>& captions,
                                const std::vector<Scene>& scenes) {
    if (captions.size() != scenes.size())
        throw ConfigError("chair needs one caption per scene");
    const Vocabulary& vocab = Vocabulary::standard();
    ChairResult result;
    result.captions = static_cast<long>(captions.size());
    for (std::size_t i = 0; i < captions.size(); ++i) {
        long hallucinated_here = 0;
        for (const auto& [kind, count] : vocab.extract_objects(captions[i])) {
            result.mentions += count;
            if (!scenes[i].has_kind(kind)) {
                result.hallucinated_mentions += count;
                hallucinated_here += count;
            }
        }
        if (hallucinated_here > 0) ++result.hallucinated_captions;
    }
    if (result.captions > 0)
        result.chair_s = static_cast<double>(result.hallucinated_captions) /
                         static_cast<double>(result.captions);
    if (result.mentions > 0)
        result.chair_i = static_cast<double>(result.hallucinated_mentions) /
                         static_cast<double>(result.mentions);
    return result;
}

std::vector<PopeProbe> build_pope_probes(const std::vector<Scene>& scenes,
                                         const CooccurrencePrior& prior, std::uint64_t seed) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::vector<PopeProbe> probes;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const Scene& scene = scenes[i];
        if (scene.empty()) continue;
        CounterRng rng(derive_seed(seed, 0xB0BE, static_cast<std::uint64_t>(i)));
        const std::vector<int> present = scene.present_kinds();

        PopeProbe yes_probe;
        yes_probe.scene_index = i;
        yes_probe.kind = present[rng.next_below(present.size())];
        yes_probe.expect_yes = true;
        const std::string& yes_name = vocab.object_name(yes_probe.kind);
        yes_probe.question =
            "is there " + article_for(yes_name) + " " + yes_name + " in the image";
        probes.push_back(yes_probe);

        // Adversarial absent probe: maximize boost mass from the present kinds.
        std::vector<int> best_kinds;
        double best_mass = -1.0;
        for (int k = 0; k < kNumKinds; ++k) {
            if (scene.has_kind(k)) continue;
            const double mass = prior.boost_mass_into(k, present);
            if (mass > best_mass) {
                best_mass = mass;
                best_kinds = {k};
            } else if (mass == best_mass) {
                best_kinds.push_back(k);
            }
        }
        if (best_kinds.empty()) continue;
        PopeProbe no_probe;
        no_probe.scene_index = i;
        no_probe.kind = best_kinds[rng.next_below(best_kinds.size())];
        no_probe.expect_yes = false;
        const std::string& no_name = vocab.object_name(no_probe.kind);
        no_probe.question =
            "is there " + article_for(no_name) + " " + no_name + " in the image";
        probes.push_back(no_probe);
    }
    return probes;
}

PopeResult pope_from_answers(const std::vector<TokenSeq>& answers,
                             const std::vector<PopeProbe>& probes) {
    if (answers.size() != probes.size())
        throw ConfigError("pope needs one answer per probe");
    const Vocabulary& vocab = Vocabulary::standard();
    const std::int32_t yes_id = vocab.id("yes");
    const std::int32_t no_id = vocab.id("no");
    PopeResult result;
    result.probes = static_cast<long>(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
        if (answers[i].empty()) continue;
        const std::int32_t first = answers[i].front();
        if (first != yes_id && first != no_id) continue;
        if ((first == yes_id) == probes[i].expect_yes) ++result.correct;
    }
    if (result.probes > 0)
        result.accuracy =
            static_cast<double>(result.correct) / static_cast<double>(result.probes);
    return result;
}

namespace {

void validate_rate(double value, const char* name) {
    if (!(value >= 0.0 && value <= 1.0))
        throw IoError(std::string(name) + " outside [0,1]: " + std::to_string(value));
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
    validate_rate(report.chair.chair_s, "chair_s");
    validate_rate(report.chair.chair_i, "chair_i");
    validate_rate(report.pope.accuracy, "pope_accuracy");
    validate_rate(report.attention_image_mass, "attention_image_mass");
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["checkpoint"] = report.checkpoint;
    j["eval_seed"] = report.eval_seed;
    j["num_scenes"] = report.num_scenes;
    j["chair"] = {{"chair_s", report.chair.chair_s},
                  {"chair_i", report.chair.chair_i},
                  {"captions", report.chair.captions},
                  {"hallucinated_captions", report.chair.hallucinated_captions},
                  {"mentions", report.chair.mentions},
                  {"hallucinated_mentions", report.chair.hallucinated_mentions}};
    j["pope"] = {{"accuracy", report.pope.accuracy},
                 {"probes", report.pope.probes},
                 {"correct", report.pope.correct}};
    j["attention"] = {{"mean_image_mass", report.attention_image_mass},
                      {"sequences", report.attention_sequences}};
    return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("schema_version").get<int>() != 1)
        throw IoError("unsupported report schema version");
    EvalReport r;
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.eval_seed = j.at("eval_seed").get<std::uint64_t>();
    r.num_scenes = j.at("num_scenes").get<long>();
    const auto& c = j.at("chair");
    r.chair.chair_s = c.at("chair_s").get<double>();
    r.chair.chair_i = c.at("chair_i").get<double>();
    r.chair.captions = c.at("captions").get<long>();
    r.chair.hallucinated_captions = c.at("hallucinated_captions").get<long>();
    r.chair.mentions = c.at("mentions").get<long>();
    r.chair.hallucinated_mentions = c.at("hallucinated_mentions").get<long>();
    const auto& p = j.at("pope");
    r.pope.accuracy = p.at("accuracy").get<double>();
    r.pope.probes = p.at("probes").get<long>();
    r.pope.correct = p.at("correct").get<long>();
    const auto& a = j.at("attention");
    r.attention_image_mass = a.at("mean_image_mass").get<double>();
    r.attention_sequences = a.at("sequences").get<long>();
    return r;
}

void emit_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << report_to_json(report) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

EvalReport read_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return report_from_json(text);
}

}  // namespace povid
