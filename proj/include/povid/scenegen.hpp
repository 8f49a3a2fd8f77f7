#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "povid/lexicon.hpp"
#include "povid/rng.hpp"
#include "povid/types.hpp"

namespace povid {

struct ObjectInstance {
    int kind = 0;
    int color = 0;
    int row = 0;
    int col = 0;
};

// A grid scene. Sampled scenes carry 1..kMaxInstances instances in raster
// order with at most one instance per cell; the empty scene is representable
// for the degenerate caption/render cases.
struct Scene {
    std::vector<ObjectInstance> instances;
    std::uint64_t seed = 0;

    bool empty() const { return instances.empty(); }
    bool has_kind(int kind) const;
    int count_kind(int kind) const;
    std::vector<int> present_kinds() const;  // sorted, unique
};

// Per-kind inclusion probabilities plus a conditional boost matrix realizing
// spurious co-occurrence between kinds. Diagonal entries are ignored.
class CooccurrencePrior {
public:
    CooccurrencePrior(Eigen::VectorXd base, Eigen::MatrixXd boost);

    static CooccurrencePrior uniform(double base_prob);
    // The default biased prior used by corpus generation: moderate bases with
    // a few strong boost edges that a policy can exploit.
    static CooccurrencePrior biased_default();
    CooccurrencePrior without_boosts() const;

    const Eigen::VectorXd& base() const { return base_; }
    const Eigen::MatrixXd& boost() const { return boost_; }

    // Total boost mass flowing into `kind` from the given present kinds.
    double boost_mass_into(int kind, const std::vector<int>& present) const;

    std::string to_json() const;
    static CooccurrencePrior from_json(const std::string& json_text);

private:
    Eigen::VectorXd base_;   // kNumKinds
    Eigen::MatrixXd boost_;  // kNumKinds x kNumKinds
};

// Deterministic in (prior, seed). Kind inclusion follows the base
// probabilities; whenever kind `a` becomes present, each absent kind `b` gets
// one extra chance sized so that P(b | a) = min(1, base_b + boost[a][b]).
Scene sample_scene(const CooccurrencePrior& prior, std::uint64_t seed);

// Row r*kGridCols+c is the one-hot for the instance at (r, c), or the empty
// flag. Exactly invertible before noising.
template <class Scalar>
ImageFeatures<Scalar> render_features(const Scene& scene) {
    ImageFeatures<Scalar> feats = ImageFeatures<Scalar>::Zero(kNumCells, kFeatureDim);
    for (int cell = 0; cell < kNumCells; ++cell) feats(cell, kFeatureDim - 1) = Scalar(1);
    for (const auto& inst : scene.instances) {
        const int cell = inst.row * kGridCols + inst.col;
        feats(cell, kFeatureDim - 1) = Scalar(0);
        feats(cell, inst.kind * kNumColors + inst.color) = Scalar(1);
    }
    return feats;
}

// Inverse of render_features on un-noised features.
std::vector<ObjectInstance> decode_features(const ImageFeatures<double>& feats);

// Deterministic grounded caption: every instance mentioned exactly once in
// raster order; the empty scene gets a fixed caption.
std::string caption(const Scene& scene);

enum class QaKind { Existence, Count, Relation, Reasoning };

const char* qa_kind_name(QaKind kind);
QaKind qa_kind_from_name(const std::string& name);

struct QaPair {
    std::string question;
    std::string answer;
};

// Ground-truth-consistent question/answer for the scene. Count and reasoning
// answers use the two-part "reason: ... result: ..." form.
QaPair make_qa(const Scene& scene, QaKind kind, std::uint64_t seed);

// One corpus record; the JSON-lines schema of the corpus file.
struct CorpusRecord {
    std::int64_t id = 0;
    std::uint64_t seed = 0;
    Scene scene;
    std::string task;  // "caption" or a QaKind name
    std::string prompt;
    std::string answer;
};

inline constexpr const char* kCaptionTask = "caption";
inline constexpr const char* kCaptionPrompt = "describe the image";

// Task mix used when generating a corpus record; seeded per record.
std::string assign_task(const Scene& scene, std::uint64_t seed);

CorpusRecord make_corpus_record(const CooccurrencePrior& prior, std::uint64_t corpus_seed,
                                std::int64_t index);

std::vector<CorpusRecord> generate_corpus(const CooccurrencePrior& prior,
                                          std::uint64_t corpus_seed, std::int64_t count);

std::string corpus_record_to_json(const CorpusRecord& record);
CorpusRecord corpus_record_from_json(const std::string& line);

void write_corpus(const std::vector<CorpusRecord>& records, const std::string& path);
std::vector<CorpusRecord> read_corpus(const std::string& path);

}  // namespace povid
