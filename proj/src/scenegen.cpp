#include "povid/scenegen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "povid/errors.hpp"

#include "json.hpp"

namespace povid {

namespace {

constexpr std::uint64_t kSceneStream = 1;
constexpr std::uint64_t kTaskStream = 2;
constexpr std::uint64_t kQaStream = 3;

constexpr double kDuplicateProb = 0.3;
constexpr int kMaxSampleAttempts = 64;

void shuffle_ints(std::vector<int>& v, CounterRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.next_below(i)]);
}

std::string mention_with_color(const Vocabulary& vocab, const ObjectInstance& inst) {
    const std::string& color = vocab.color_name(inst.color);
    const std::string& kind = vocab.object_name(inst.kind);
    return article_for(color) + " " + color + " " + kind;
}

std::string cell_word(int row, int col) {
    return "(" + std::to_string(row) + "," + std::to_string(col) + ")";
}

}  // namespace

bool Scene::has_kind(int kind) const {
    for (const auto& inst : instances)
        if (inst.kind == kind) return true;
    return false;
}

int Scene::count_kind(int kind) const {
    int n = 0;
    for (const auto& inst : instances)
        if (inst.kind == kind) ++n;
    return n;
}

std::vector<int> Scene::present_kinds() const {
    std::set<int> kinds;
    for (const auto& inst : instances) kinds.insert(inst.kind);
    return {kinds.begin(), kinds.end()};
}

CooccurrencePrior::CooccurrencePrior(Eigen::VectorXd base, Eigen::MatrixXd boost)
    : base_(std::move(base)), boost_(std::move(boost)) {
    if (base_.size() != kNumKinds || boost_.rows() != kNumKinds || boost_.cols() != kNumKinds)
        throw ConfigError("co-occurrence prior has wrong shape");
    for (int i = 0; i < kNumKinds; ++i) {
        if (base_[i] < 0.0 || base_[i] > 1.0)
            throw ConfigError("base probability out of [0,1]");
        for (int j = 0; j < kNumKinds; ++j)
            if (boost_(i, j) < 0.0 || boost_(i, j) > 1.0)
                throw ConfigError("boost out of [0,1]");
    }
}

CooccurrencePrior CooccurrencePrior::uniform(double base_prob) {
    return CooccurrencePrior(Eigen::VectorXd::Constant(kNumKinds, base_prob),
                             Eigen::MatrixXd::Zero(kNumKinds, kNumKinds));
}

CooccurrencePrior CooccurrencePrior::biased_default() {
    const Vocabulary& vocab = Vocabulary::standard();
    Eigen::VectorXd base = Eigen::VectorXd::Constant(kNumKinds, 0.18);
    Eigen::MatrixXd boost = Eigen::MatrixXd::Zero(kNumKinds, kNumKinds);
    auto edge = [&](const char* a, const char* b, double w) {
        boost(vocab.kind_by_name(a), vocab.kind_by_name(b)) = w;
    };
    edge("plate", "fork", 0.75);
    edge("bowl", "spoon", 0.70);
    edge("apple", "banana", 0.65);
    edge("dog", "cat", 0.60);
    return CooccurrencePrior(std::move(base), std::move(boost));
}

CooccurrencePrior CooccurrencePrior::without_boosts() const {
    return CooccurrencePrior(base_, Eigen::MatrixXd::Zero(kNumKinds, kNumKinds));
}

double CooccurrencePrior::boost_mass_into(int kind, const std::vector<int>& present) const {
    double mass = 0.0;
    for (int a : present)
        if (a != kind) mass += boost_(a, kind);
    return mass;
}

std::string CooccurrencePrior::to_json() const {
    nlohmann::ordered_json j;
    j["base"] = std::vector<double>(base_.data(), base_.data() + base_.size());
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int i = 0; i < kNumKinds; ++i) {
        std::vector<double> row(kNumKinds);
        for (int c = 0; c < kNumKinds; ++c) row[c] = boost_(i, c);
        rows.push_back(row);
    }
    j["boost"] = rows;
    return j.dump();
}

CooccurrencePrior CooccurrencePrior::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    auto base_vals = j.at("base").get<std::vector<double>>();
    if (base_vals.size() != kNumKinds) throw ConfigError("prior base has wrong length");
    Eigen::VectorXd base(kNumKinds);
    for (int i = 0; i < kNumKinds; ++i) base[i] = base_vals[i];
    Eigen::MatrixXd boost(kNumKinds, kNumKinds);
    const auto& rows = j.at("boost");
    if (rows.size() != kNumKinds) throw ConfigError("prior boost has wrong shape");
    for (int i = 0; i < kNumKinds; ++i) {
        auto row = rows[i].get<std::vector<double>>();
        if (row.size() != kNumKinds) throw ConfigError("prior boost has wrong shape");
        for (int c = 0; c < kNumKinds; ++c) boost(i, c) = row[c];
    }
    return CooccurrencePrior(std::move(base), std::move(boost));
}

namespace {

// One inclusion pass: base draws, then every kind that becomes present gives
// each absent kind a residual chance targeting P(b|a) = min(1, base_b + boost_ab).
std::vector<int> sample_kind_set(const CooccurrencePrior& prior, CounterRng& rng) {
    std::vector<bool> in(kNumKinds, false);
    std::vector<int> frontier;
    for (int k = 0; k < kNumKinds; ++k) {
        if (rng.next_double() < prior.base()[k]) {
            in[k] = true;
            frontier.push_back(k);
        }
    }
    while (!frontier.empty()) {
        std::vector<int> next;
        for (int a : frontier) {
            for (int b = 0; b < kNumKinds; ++b) {
                if (in[b] || b == a) continue;
                const double boost = prior.boost()(a, b);
                if (boost <= 0.0) continue;
                const double base_b = prior.base()[b];
                const double target = std::min(1.0, base_b + boost);
                const double denom = 1.0 - base_b;
                const double residual = denom <= 0.0 ? 1.0 : std::min(1.0, (target - base_b) / denom);
                if (rng.next_double() < residual) {
                    in[b] = true;
                    next.push_back(b);
                }
            }
        }
        frontier = std::move(next);
    }
    std::vector<int> kinds;
    for (int k = 0; k < kNumKinds; ++k)
        if (in[k]) kinds.push_back(k);
    return kinds;
}

}  // namespace

Scene sample_scene(const CooccurrencePrior& prior, std::uint64_t seed) {
    std::vector<int> kinds;
    CounterRng rng(0);
    for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
        rng = CounterRng(derive_seed(seed, kSceneStream, static_cast<std::uint64_t>(attempt)));
        kinds = sample_kind_set(prior, rng);
        if (kinds.empty()) kinds.push_back(static_cast<int>(rng.next_below(kNumKinds)));
        if (static_cast<int>(kinds.size()) <= kMaxInstances) break;
    }
    if (static_cast<int>(kinds.size()) > kMaxInstances) kinds.resize(kMaxInstances);

    // Duplicate some kinds (count questions need multiplicity), capped at
    // kMaxInstances total instances.
    std::vector<int> dup_order = kinds;
    shuffle_ints(dup_order, rng);
    std::vector<int> instance_kinds = kinds;
    for (int k : dup_order) {
        if (static_cast<int>(instance_kinds.size()) >= kMaxInstances) break;
        if (rng.next_double() < kDuplicateProb) instance_kinds.push_back(k);
    }

    std::vector<int> cells(kNumCells);
    std::iota(cells.begin(), cells.end(), 0);
    shuffle_ints(cells, rng);

    Scene scene;
    scene.seed = seed;
    for (std::size_t i = 0; i < instance_kinds.size(); ++i) {
        ObjectInstance inst;
        inst.kind = instance_kinds[i];
        inst.color = static_cast<int>(rng.next_below(kNumColors));
        inst.row = cells[i] / kGridCols;
        inst.col = cells[i] % kGridCols;
        scene.instances.push_back(inst);
    }
    std::sort(scene.instances.begin(), scene.instances.end(),
              [](const ObjectInstance& a, const ObjectInstance& b) {
                  return std::tie(a.row, a.col) < std::tie(b.row, b.col);
              });
    return scene;
}

std::vector<ObjectInstance> decode_features(const ImageFeatures<double>& feats) {
    if (feats.rows() != kNumCells || feats.cols() != kFeatureDim)
        throw ConfigError("feature matrix has wrong shape");
    std::vector<ObjectInstance> instances;
    for (int cell = 0; cell < kNumCells; ++cell) {
        int hot = -1;
        for (int j = 0; j < kFeatureDim; ++j) {
            if (feats(cell, j) == 1.0) {
                if (hot >= 0) throw ConfigError("feature row is not one-hot");
                hot = j;
            } else if (feats(cell, j) != 0.0) {
                throw ConfigError("feature row is not one-hot");
            }
        }
        if (hot < 0) throw ConfigError("feature row is not one-hot");
        if (hot == kFeatureDim - 1) continue;
        ObjectInstance inst;
        inst.kind = hot / kNumColors;
        inst.color = hot % kNumColors;
        inst.row = cell / kGridCols;
        inst.col = cell % kGridCols;
        instances.push_back(inst);
    }
    return instances;
}

std::string caption(const Scene& scene) {
    if (scene.empty()) return "the image is empty";
    const Vocabulary& vocab = Vocabulary::standard();
    std::string out = scene.instances.size() == 1 ? "in the image there is"
                                                  : "in the image there are";
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        if (i > 0) out += " and";
        out += " " + mention_with_color(vocab, scene.instances[i]);
    }
    return out;
}

const char* qa_kind_name(QaKind kind) {
    switch (kind) {
        case QaKind::Existence: return "existence";
        case QaKind::Count: return "count";
        case QaKind::Relation: return "relation";
        case QaKind::Reasoning: return "reasoning";
    }
    return "existence";
}

QaKind qa_kind_from_name(const std::string& name) {
    if (name == "existence") return QaKind::Existence;
    if (name == "count") return QaKind::Count;
    if (name == "relation") return QaKind::Relation;
    if (name == "reasoning") return QaKind::Reasoning;
    throw ConfigError("unknown qa kind: " + name);
}

namespace {

QaPair make_existence_qa(const Scene& scene, CounterRng& rng) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::vector<int> present = scene.present_kinds();
    std::vector<int> absent;
    for (int k = 0; k < kNumKinds; ++k)
        if (!scene.has_kind(k)) absent.push_back(k);

    bool ask_present;
    if (present.empty())
        ask_present = false;
    else if (absent.empty())
        ask_present = true;
    else
        ask_present = rng.next_below(2) == 0;
    const std::vector<int>& pool = ask_present ? present : absent;
    const int kind = pool[rng.next_below(pool.size())];

    const std::string& name = vocab.object_name(kind);
    QaPair qa;
    qa.question = "is there " + article_for(name) + " " + name + " in the image";
    qa.answer = ask_present ? "yes" : "no";
    return qa;
}

std::string count_mentions(const Vocabulary& vocab, const Scene& scene,
                           const std::vector<int>& kinds) {
    std::string out;
    bool first = true;
    for (int kind : kinds) {
        const std::string& name = vocab.object_name(kind);
        for (const auto& inst : scene.instances) {
            if (inst.kind != kind) continue;
            out += first ? "there is " : " and ";
            out += article_for(name) + " " + name + " at " + cell_word(inst.row, inst.col);
            first = false;
        }
    }
    return out;
}

QaPair make_count_qa(const Scene& scene, CounterRng& rng) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::vector<int> present = scene.present_kinds();
    const int kind = present[rng.next_below(present.size())];
    const std::string& name = vocab.object_name(kind);
    QaPair qa;
    qa.question = "how many " + name + " are there in the image";
    qa.answer = "reason: " + count_mentions(vocab, scene, {kind}) +
                ". result: " + std::to_string(scene.count_kind(kind));
    return qa;
}

QaPair make_relation_qa(const Scene& scene, CounterRng& rng) {
    if (scene.instances.size() < 2)
        throw EmptySceneError("relation question needs at least two instances");
    const Vocabulary& vocab = Vocabulary::standard();

    // Prefer pairs whose (color, kind) descriptors differ so the question is
    // unambiguous.
    std::vector<std::pair<int, int>> pairs;
    const int n = static_cast<int>(scene.instances.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto& a = scene.instances[i];
            const auto& b = scene.instances[j];
            if (a.kind != b.kind || a.color != b.color) pairs.emplace_back(i, j);
        }
    std::pair<int, int> pick;
    if (!pairs.empty())
        pick = pairs[rng.next_below(pairs.size())];
    else
        pick = {0, 1};

    const auto& a = scene.instances[pick.first];
    const auto& b = scene.instances[pick.second];
    // "left of"/"right of" carry an "of"; "above"/"below" do not, so an
    // antonym swap always touches exactly one token.
    std::string rel;
    if (a.row != b.row)
        rel = a.row < b.row ? "above" : "below";
    else
        rel = a.col < b.col ? "left of" : "right of";

    const std::string am = mention_with_color(vocab, a);
    const std::string bm = mention_with_color(vocab, b);
    // mention_with_color yields "a <color> <kind>"; swap the article for "the".
    auto the_form = [](const std::string& m) {
        return "the" + m.substr(m.find(' '));
    };
    QaPair qa;
    qa.question = "where is " + the_form(am) + " relative to " + the_form(bm);
    qa.answer = the_form(am) + " is " + rel + " " + the_form(bm);
    return qa;
}

QaPair make_reasoning_qa(const Scene& scene, CounterRng& rng) {
    const Vocabulary& vocab = Vocabulary::standard();
    std::vector<int> present = scene.present_kinds();
    const int kind_a = present[rng.next_below(present.size())];
    int kind_b = static_cast<int>(rng.next_below(kNumKinds - 1));
    if (kind_b >= kind_a) ++kind_b;

    const std::string& name_a = vocab.object_name(kind_a);
    const std::string& name_b = vocab.object_name(kind_b);
    QaPair qa;
    qa.question = "are there more " + name_a + " than " + name_b + " in the image";
    qa.answer = "reason: " + count_mentions(vocab, scene, {kind_a, kind_b}) + ". result: " +
                (scene.count_kind(kind_a) > scene.count_kind(kind_b) ? "yes" : "no");
    return qa;
}

}  // namespace

QaPair make_qa(const Scene& scene, QaKind kind, std::uint64_t seed) {
    if (scene.empty() && kind != QaKind::Existence)
        throw EmptySceneError("only existence questions apply to the empty scene");
    CounterRng rng(derive_seed(seed, kQaStream, static_cast<std::uint64_t>(kind)));
    switch (kind) {
        case QaKind::Existence: return make_existence_qa(scene, rng);
        case QaKind::Count: return make_count_qa(scene, rng);
        case QaKind::Relation: return make_relation_qa(scene, rng);
        case QaKind::Reasoning: return make_reasoning_qa(scene, rng);
    }
    throw ConfigError("unreachable qa kind");
}

std::string assign_task(const Scene& scene, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, kTaskStream));
    const double u = rng.next_double();
    std::string task;
    if (u < 0.40)
        task = kCaptionTask;
    else if (u < 0.60)
        task = "existence";
    else if (u < 0.75)
        task = "count";
    else if (u < 0.90)
        task = "relation";
    else
        task = "reasoning";
    if (task == "relation" && scene.instances.size() < 2) task = "count";
    if (scene.empty() && task != kCaptionTask) task = "existence";
    return task;
}

CorpusRecord make_corpus_record(const CooccurrencePrior& prior, std::uint64_t corpus_seed,
                                std::int64_t index) {
    CorpusRecord rec;
    rec.id = index;
    rec.seed = corpus_seed + static_cast<std::uint64_t>(index);
    rec.scene = sample_scene(prior, rec.seed);
    rec.task = assign_task(rec.scene, rec.seed);
    if (rec.task == kCaptionTask) {
        rec.prompt = kCaptionPrompt;
        rec.answer = caption(rec.scene);
    } else {
        QaPair qa = make_qa(rec.scene, qa_kind_from_name(rec.task), rec.seed);
        rec.prompt = qa.question;
        rec.answer = qa.answer;
    }
    return rec;
}

std::vector<CorpusRecord> generate_corpus(const CooccurrencePrior& prior,
                                          std::uint64_t corpus_seed, std::int64_t count) {
    std::vector<CorpusRecord> records;
    records.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i)
        records.push_back(make_corpus_record(prior, corpus_seed, i));
    return records;
}

std::string corpus_record_to_json(const CorpusRecord& record) {
    const Vocabulary& vocab = Vocabulary::standard();
    nlohmann::ordered_json j;
    j["id"] = record.id;
    j["seed"] = record.seed;
    nlohmann::ordered_json insts = nlohmann::ordered_json::array();
    for (const auto& inst : record.scene.instances) {
        nlohmann::ordered_json ji;
        ji["kind"] = vocab.object_name(inst.kind);
        ji["color"] = vocab.color_name(inst.color);
        ji["row"] = inst.row;
        ji["col"] = inst.col;
        insts.push_back(ji);
    }
    j["scene"] = nlohmann::ordered_json{{"instances", insts}};
    j["task"] = record.task;
    j["prompt"] = record.prompt;
    j["answer"] = record.answer;
    return j.dump();
}

CorpusRecord corpus_record_from_json(const std::string& line) {
    const Vocabulary& vocab = Vocabulary::standard();
    nlohmann::json j = nlohmann::json::parse(line);
    CorpusRecord rec;
    rec.id = j.at("id").get<std::int64_t>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.scene.seed = rec.seed;
    for (const auto& ji : j.at("scene").at("instances")) {
        ObjectInstance inst;
        inst.kind = vocab.kind_by_name(ji.at("kind").get<std::string>());
        inst.color = vocab.color_by_name(ji.at("color").get<std::string>());
        inst.row = ji.at("row").get<int>();
        inst.col = ji.at("col").get<int>();
        if (inst.kind < 0 || inst.color < 0 || inst.row < 0 || inst.row >= kGridRows ||
            inst.col < 0 || inst.col >= kGridCols)
            throw ConfigError("corpus record has an invalid instance");
        rec.scene.instances.push_back(inst);
    }
    rec.task = j.at("task").get<std::string>();
    rec.prompt = j.at("prompt").get<std::string>();
    rec.answer = j.at("answer").get<std::string>();
    return rec;
}

void write_corpus(const std::vector<CorpusRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& rec : records) out << corpus_record_to_json(rec) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

std::vector<CorpusRecord> read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<CorpusRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(corpus_record_from_json(line));
    }
    return records;
}

}  // namespace povid
