#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "povid/errors.hpp"
#include "povid/policy.hpp"
#include "povid/types.hpp"

namespace povid {

// log(1 + exp(z)) without overflow.
template <class Scalar>
Scalar softplus(Scalar z) {
    if (z > Scalar(0)) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

template <class Scalar>
Scalar sigmoid(Scalar z) {
    if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
    const Scalar e = std::exp(z);
    return e / (Scalar(1) + e);
}

// Pairwise preference probability sigma(r_w - r_l).
inline double bradley_terry_prob(double reward_w, double reward_l) {
    return sigmoid(reward_w - reward_l);
}

template <class Scalar>
struct PreferenceItem {
    ImageFeatures<Scalar> image;
    TokenSeq prompt;
    TokenSeq preferred;          // y_w
    TokenSeq dispreferred_text;  // y_l^t
    std::optional<ImageFeatures<Scalar>> noisy_image;  // x^n, stage 2 only
    std::optional<TokenSeq> triggered;                 // y_l^n, stage 2 only
};

template <class Scalar>
struct LossValue {
    Scalar loss = Scalar(0);
    Scalar mean_margin = Scalar(0);  // mean pre-sigmoid argument
    double attention_mass = 0.0;     // mean image-attention mass of the y_w passes
    PolicyParams<Scalar> grads;
};

namespace detail {

template <class Scalar>
Scalar sequence_logprob(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                        const TokenSeq& prompt, const TokenSeq& response,
                        ForwardTrace<Scalar>* trace = nullptr, double* mass = nullptr) {
    if (response.empty()) throw ConfigError("sequence logprob needs a nonempty response");
    const TokenSeq seq = concat(prompt, response);
    Mat<Scalar> logits;
    if (trace) {
        forward_policy(params, image, seq, trace, kNumCells + static_cast<int>(prompt.size()),
                       static_cast<int>(response.size()), mass);
        logits = trace->logits;
    } else {
        ForwardTrace<Scalar>* no_trace = nullptr;
        logits = forward_policy(params, image, seq, no_trace,
                                kNumCells + static_cast<int>(prompt.size()),
                                static_cast<int>(response.size()), mass);
    }
    return response_logprobs_from_logits(logits, static_cast<int>(prompt.size()), response)
        .sum();
}

// Adds weight * d(sum log pi(response))/d(theta) into grads.
template <class Scalar>
void accumulate_sequence_grad(const PolicyParams<Scalar>& params,
                              const ImageFeatures<Scalar>& image, const TokenSeq& prompt,
                              const TokenSeq& response, const ForwardTrace<Scalar>& trace,
                              Scalar weight, PolicyParams<Scalar>& grads) {
    const int prompt_len = static_cast<int>(prompt.size());
    Mat<Scalar> dlogits = Mat<Scalar>::Zero(trace.logits.rows(), trace.logits.cols());
    for (std::size_t i = 0; i < response.size(); ++i) {
        const int row = kNumCells + prompt_len + static_cast<int>(i) - 1;
        auto l = trace.logits.row(row);
        const Scalar m = l.maxCoeff();
        Eigen::Array<Scalar, 1, Eigen::Dynamic> p = (l.array() - m).exp();
        p /= p.sum();
        dlogits.row(row) -= weight * p.matrix();
        dlogits(row, response[i]) += weight;
    }
    backward_policy(params, image, concat(prompt, response), trace, dlogits, grads);
}

}  // namespace detail

// -log sigma( alpha * [Delta(y_w) - Delta(y_l^t)] ), mean over the batch,
// with Delta = log pi_theta - log pi_ref summed over response tokens.
template <class Scalar>
LossValue<Scalar> dpo_loss(const PolicyParams<Scalar>& params, const PolicyParams<Scalar>& ref,
                           const std::vector<PreferenceItem<Scalar>>& batch, Scalar alpha) {
    if (alpha <= Scalar(0)) throw ConfigError("dpo_loss needs alpha > 0");
    if (batch.empty()) throw ConfigError("empty batch");
    LossValue<Scalar> out;
    out.grads = zeros_like_policy<Scalar>(params.config);
    const Scalar inv_b = Scalar(1) / static_cast<Scalar>(batch.size());
    for (const auto& item : batch) {
        ForwardTrace<Scalar> trace_w, trace_l;
        double mass = 0.0;
        const Scalar lp_w = detail::sequence_logprob(params, item.image, item.prompt,
                                                     item.preferred, &trace_w, &mass);
        const Scalar lp_l = detail::sequence_logprob(params, item.image, item.prompt,
                                                     item.dispreferred_text, &trace_l);
        const Scalar lp_w_ref =
            detail::sequence_logprob(ref, item.image, item.prompt, item.preferred);
        const Scalar lp_l_ref =
            detail::sequence_logprob(ref, item.image, item.prompt, item.dispreferred_text);
        const Scalar delta_w = lp_w - lp_w_ref;
        const Scalar delta_l = lp_l - lp_l_ref;
        const Scalar z = alpha * delta_w - alpha * delta_l;
        if (!std::isfinite(static_cast<double>(z)))
            throw NonFiniteLoss("dpo margin is not finite");
        out.loss += softplus(-z) * inv_b;
        out.mean_margin += z * inv_b;
        out.attention_mass += mass / static_cast<double>(batch.size());
        const Scalar coeff = sigmoid(-z) * inv_b;
        detail::accumulate_sequence_grad(params, item.image, item.prompt, item.preferred,
                                         trace_w, -alpha * coeff, out.grads);
        detail::accumulate_sequence_grad(params, item.image, item.prompt,
                                         item.dispreferred_text, trace_l, alpha * coeff,
                                         out.grads);
    }
    if (!std::isfinite(static_cast<double>(out.loss))) throw NonFiniteLoss("dpo loss not finite");
    return out;
}

// -log sigma( alpha*Delta(y_w|x) - [beta1*Delta(y_l^t|x) + beta2*Delta(y_l^n|x^n)] ).
// A zero coefficient drops its term; with beta2 = 0 and beta1 = alpha this is
// exactly dpo_loss. Triggered tokens are constants (no gradient through the
// argmax selection).
template <class Scalar>
LossValue<Scalar> povid_loss(const PolicyParams<Scalar>& params, const PolicyParams<Scalar>& ref,
                             const std::vector<PreferenceItem<Scalar>>& batch, Scalar alpha,
                             Scalar beta1, Scalar beta2) {
    if (alpha <= Scalar(0)) throw ConfigError("povid_loss needs alpha > 0");
    if (beta1 < Scalar(0) || beta2 < Scalar(0))
        throw ConfigError("povid_loss needs beta1, beta2 >= 0");
    if (batch.empty()) throw ConfigError("empty batch");
    LossValue<Scalar> out;
    out.grads = zeros_like_policy<Scalar>(params.config);
    const Scalar inv_b = Scalar(1) / static_cast<Scalar>(batch.size());
    for (const auto& item : batch) {
        ForwardTrace<Scalar> trace_w, trace_t, trace_n;
        double mass = 0.0;
        const Scalar lp_w = detail::sequence_logprob(params, item.image, item.prompt,
                                                     item.preferred, &trace_w, &mass);
        const Scalar lp_w_ref =
            detail::sequence_logprob(ref, item.image, item.prompt, item.preferred);
        const Scalar delta_w = lp_w - lp_w_ref;

        Scalar negative = Scalar(0);
        bool has_text = beta1 > Scalar(0);
        if (has_text) {
            const Scalar lp_t = detail::sequence_logprob(params, item.image, item.prompt,
                                                         item.dispreferred_text, &trace_t);
            const Scalar lp_t_ref =
                detail::sequence_logprob(ref, item.image, item.prompt, item.dispreferred_text);
            negative = beta1 * (lp_t - lp_t_ref);
        }
        const bool has_noisy = beta2 > Scalar(0) && item.triggered.has_value();
        if (beta2 > Scalar(0) && !item.triggered.has_value())
            throw ConfigError("povid_loss with beta2 > 0 needs triggered responses");
        if (has_noisy) {
            if (!item.noisy_image.has_value())
                throw ConfigError("triggered response without a noisy image");
            const Scalar lp_n = detail::sequence_logprob(params, *item.noisy_image, item.prompt,
                                                         *item.triggered, &trace_n);
            const Scalar lp_n_ref = detail::sequence_logprob(ref, *item.noisy_image, item.prompt,
                                                             *item.triggered);
            negative += beta2 * (lp_n - lp_n_ref);
        }

        const Scalar z = alpha * delta_w - negative;
        if (!std::isfinite(static_cast<double>(z)))
            throw NonFiniteLoss("povid margin is not finite");
        out.loss += softplus(-z) * inv_b;
        out.mean_margin += z * inv_b;
        out.attention_mass += mass / static_cast<double>(batch.size());
        const Scalar coeff = sigmoid(-z) * inv_b;
        detail::accumulate_sequence_grad(params, item.image, item.prompt, item.preferred,
                                         trace_w, -alpha * coeff, out.grads);
        if (has_text)
            detail::accumulate_sequence_grad(params, item.image, item.prompt,
                                             item.dispreferred_text, trace_t, beta1 * coeff,
                                             out.grads);
        if (has_noisy)
            detail::accumulate_sequence_grad(params, *item.noisy_image, item.prompt,
                                             *item.triggered, trace_n, beta2 * coeff, out.grads);
    }
    if (!std::isfinite(static_cast<double>(out.loss)))
        throw NonFiniteLoss("povid loss not finite");
    return out;
}

// Diagnostic only: r - alpha * (log pi_theta(y|x) - log pi_ref(y|x)).
template <class Scalar>
Scalar kl_regularized_reward(const PolicyParams<Scalar>& params, const PolicyParams<Scalar>& ref,
                             const ImageFeatures<Scalar>& image, const TokenSeq& prompt,
                             const TokenSeq& response, Scalar reward, Scalar alpha) {
    if (!std::isfinite(static_cast<double>(reward)))
        throw ConfigError("kl_regularized_reward needs a finite reward");
    const Scalar lp = detail::sequence_logprob(params, image, prompt, response);
    const Scalar lp_ref = detail::sequence_logprob(ref, image, prompt, response);
    return reward - alpha * (lp - lp_ref);
}

// Supervised next-token training pieces.
template <class Scalar>
struct SftItem {
    ImageFeatures<Scalar> image;
    TokenSeq prompt;
    TokenSeq response;
};

template <class Scalar>
struct SftLossValue {
    Scalar mean_ce = Scalar(0);
    double attention_mass = 0.0;
    PolicyParams<Scalar> grads;
};

// Mean next-token cross-entropy over all response tokens in the batch, with
// gradients unless `with_grads` is false.
template <class Scalar>
SftLossValue<Scalar> next_token_loss(const PolicyParams<Scalar>& params,
                                     const std::vector<SftItem<Scalar>>& batch,
                                     bool with_grads = true) {
    if (batch.empty()) throw ConfigError("empty batch");
    SftLossValue<Scalar> out;
    if (with_grads) out.grads = zeros_like_policy<Scalar>(params.config);
    long total_tokens = 0;
    for (const auto& item : batch) total_tokens += static_cast<long>(item.response.size());
    if (total_tokens == 0) throw ConfigError("batch has no response tokens");
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(total_tokens);
    for (const auto& item : batch) {
        ForwardTrace<Scalar> trace;
        double mass = 0.0;
        const Scalar lp = detail::sequence_logprob(params, item.image, item.prompt,
                                                   item.response, &trace, &mass);
        out.mean_ce -= lp * inv_n;
        out.attention_mass += mass / static_cast<double>(batch.size());
        if (with_grads)
            detail::accumulate_sequence_grad(params, item.image, item.prompt, item.response,
                                             trace, -inv_n, out.grads);
    }
    if (!std::isfinite(static_cast<double>(out.mean_ce)))
        throw NonFiniteLoss("cross-entropy not finite");
    return out;
}

template <class Scalar>
Scalar mean_cross_entropy(const PolicyParams<Scalar>& params,
                          const std::vector<SftItem<Scalar>>& batch) {
    if (batch.empty()) throw ConfigError("empty batch");
    Scalar total = Scalar(0);
    long tokens = 0;
    for (const auto& item : batch) {
        total -= detail::sequence_logprob(params, item.image, item.prompt, item.response);
        tokens += static_cast<long>(item.response.size());
    }
    if (tokens == 0) throw ConfigError("batch has no response tokens");
    return total / static_cast<Scalar>(tokens);
}

}  // namespace povid
