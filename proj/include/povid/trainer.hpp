#pragma once

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "povid/noiser.hpp"
#include "povid/objective.hpp"
#include "povid/policy.hpp"
#include "povid/rng.hpp"

namespace povid {

enum class Stage { Sft, Dpo, Povid };

const char* stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

// Plain gradient descent; stage-1 preference tuning defaults to 3 epochs and
// stage 2 to 1 epoch. Noise step 499 of a 500-step schedule feeds the stage-2
// corruption. Learning rate and batch size are toy-scale; full-scale
// reference values (batch 1, learning rate 1e-7) would not move this policy.
struct TrainingConfig {
    Stage stage = Stage::Sft;
    int epochs = 3;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double alpha = 0.1;
    double beta1 = 0.1;
    double beta2 = 0.1;
    int noise_step = 499;
    int noise_steps_total = 500;
    std::uint64_t seed = 0;
    bool shadow_check = false;  // re-derive y_l^n before each update and compare
};

struct MetricsRow {
    long step = 0;
    std::string stage;
    double loss = 0.0;
    double margin = 0.0;
    double attention_mass = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// Triggered responses of the first batch, captured at the first step and
// regenerated with the final parameters over the same noisy images.
struct TriggerLog {
    std::vector<TokenSeq> first_step;
    std::vector<TokenSeq> final_step;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                           std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(derive_seed(seed, 0x5F1E, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

inline std::uint64_t noise_seed(std::uint64_t seed, long step, std::size_t item_index) {
    return derive_seed(seed, 0x401E, static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(item_index));
}

}  // namespace detail

// Supervised fine-tuning on ground-truth answers; the result is later frozen
// as the reference policy.
template <class Scalar>
PolicyParams<Scalar> sft_train(PolicyParams<Scalar> params,
                               const std::vector<SftItem<Scalar>>& data,
                               const TrainingConfig& config, const MetricsSink& sink = {}) {
    if (data.empty()) throw ConfigError("sft_train needs data");
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch_idx :
             detail::epoch_batches(data.size(), config.batch_size, config.seed, epoch)) {
            std::vector<SftItem<Scalar>> batch;
            batch.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) batch.push_back(data[i]);
            SftLossValue<Scalar> result;
            try {
                result = next_token_loss(params, batch);
            } catch (const NonFiniteLoss& e) {
                throw DivergenceError(e.what());
            }
            add_scaled(params, result.grads, static_cast<Scalar>(-config.learning_rate));
            if (sink)
                sink({step, stage_name(Stage::Sft), static_cast<double>(result.mean_ce), 0.0,
                      result.attention_mass});
            ++step;
        }
    }
    if (!all_finite(params)) throw DivergenceError("sft parameters are not finite");
    return params;
}

// Stage 1: preference tuning on textual dispreferences only.
template <class Scalar>
PolicyParams<Scalar> stage1_dpo(PolicyParams<Scalar> params, const PolicyParams<Scalar>& ref,
                                const std::vector<PreferenceItem<Scalar>>& pairs,
                                const TrainingConfig& config, const MetricsSink& sink = {}) {
    if (pairs.empty()) throw ConfigError("stage1_dpo needs pairs");
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch_idx :
             detail::epoch_batches(pairs.size(), config.batch_size, config.seed, epoch)) {
            std::vector<PreferenceItem<Scalar>> batch;
            batch.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) batch.push_back(pairs[i]);
            LossValue<Scalar> result;
            try {
                result = dpo_loss(params, ref, batch, static_cast<Scalar>(config.alpha));
            } catch (const NonFiniteLoss& e) {
                throw DivergenceError(e.what());
            }
            add_scaled(params, result.grads, static_cast<Scalar>(-config.learning_rate));
            if (sink)
                sink({step, stage_name(Stage::Dpo), static_cast<double>(result.loss),
                      static_cast<double>(result.mean_margin), result.attention_mass});
            ++step;
        }
    }
    if (!all_finite(params)) throw DivergenceError("stage-1 parameters are not finite");
    return params;
}

// Stage 2: every step corrupts each image at the fixed noise step and derives
// y_l^n from the *current* parameters before the update; triggered responses
// are never cached across steps. With beta2 == 0 the noising and triggering
// are skipped and the run is step-equivalent to stage1_dpo.
template <class Scalar>
PolicyParams<Scalar> stage2_povid(PolicyParams<Scalar> params, const PolicyParams<Scalar>& ref,
                                  const std::vector<PreferenceItem<Scalar>>& pairs,
                                  const NoiseSchedule& schedule, const TrainingConfig& config,
                                  const MetricsSink& sink = {},
                                  TriggerLog* trigger_log = nullptr) {
    if (pairs.empty()) throw ConfigError("stage2_povid needs pairs");
    if (config.noise_step < 0 || config.noise_step >= schedule.steps())
        throw StepOutOfRange("configured noise step outside the schedule");
    const bool use_noisy = config.beta2 > 0.0;

    std::vector<std::size_t> logged_indices;
    std::vector<std::uint64_t> logged_seeds;

    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch_idx :
             detail::epoch_batches(pairs.size(), config.batch_size, config.seed, epoch)) {
            std::vector<PreferenceItem<Scalar>> batch;
            batch.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) {
                PreferenceItem<Scalar> item = pairs[i];
                if (use_noisy) {
                    const std::uint64_t eps_seed = detail::noise_seed(config.seed, step, i);
                    item.noisy_image =
                        add_noise(schedule, item.image, config.noise_step, eps_seed);
                    item.triggered =
                        triggered_dispref(params, *item.noisy_image, item.prompt, item.preferred);
                    if (trigger_log && step == 0) {
                        logged_indices.push_back(i);
                        logged_seeds.push_back(eps_seed);
                        trigger_log->first_step.push_back(*item.triggered);
                    }
                    if (config.shadow_check) {
                        const TokenSeq again = triggered_dispref(params, *item.noisy_image,
                                                                 item.prompt, item.preferred);
                        if (again != *item.triggered)
                            throw DivergenceError(
                                "shadow check: y_l^n is not a pure function of the current "
                                "parameters");
                    }
                }
                batch.push_back(std::move(item));
            }
            LossValue<Scalar> result;
            try {
                result = povid_loss(params, ref, batch, static_cast<Scalar>(config.alpha),
                                    static_cast<Scalar>(config.beta1),
                                    static_cast<Scalar>(config.beta2));
            } catch (const NonFiniteLoss& e) {
                throw DivergenceError(e.what());
            }
            add_scaled(params, result.grads, static_cast<Scalar>(-config.learning_rate));
            if (sink)
                sink({step, stage_name(Stage::Povid), static_cast<double>(result.loss),
                      static_cast<double>(result.mean_margin), result.attention_mass});
            ++step;
        }
    }
    if (!all_finite(params)) throw DivergenceError("stage-2 parameters are not finite");

    if (trigger_log && use_noisy) {
        for (std::size_t j = 0; j < logged_indices.size(); ++j) {
            const auto& item = pairs[logged_indices[j]];
            const ImageFeatures<Scalar> noisy =
                add_noise(schedule, item.image, config.noise_step, logged_seeds[j]);
            trigger_log->final_step.push_back(
                triggered_dispref(params, noisy, item.prompt, item.preferred));
        }
    }
    return params;
}

}  // namespace povid
