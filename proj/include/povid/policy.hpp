#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "povid/errors.hpp"
#include "povid/rng.hpp"
#include "povid/types.hpp"

namespace povid {

// Causal decoder over [image cells ; prompt ; response]. The 16 image rows
// come first; every text position follows them in full causal order.
struct PolicyConfig {
    int embed_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 96;
    int vocab_size = 0;

    void validate() const {
        if (embed_dim <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_dim <= 0 ||
            vocab_size <= 0)
            throw ConfigError("policy config fields must be positive");
        if (embed_dim % num_heads != 0)
            throw ConfigError("embed_dim must be divisible by num_heads");
        if (max_seq_len < kNumCells + 2)
            throw ConfigError("max_seq_len too small for image plus text");
    }
};

template <class Scalar>
struct PolicyParams {
    struct Layer {
        Mat<Scalar> wq, wk, wv, wo;  // embed_dim x embed_dim
        Mat<Scalar> w1;              // embed_dim x ffn_dim
        Mat<Scalar> w2;              // ffn_dim x embed_dim
    };

    PolicyConfig config;
    Mat<Scalar> img_proj;    // kFeatureDim x embed_dim, shared across cells
    Mat<Scalar> tok_embed;   // vocab_size x embed_dim
    std::vector<Layer> layers;
    Mat<Scalar> out_proj;    // embed_dim x vocab_size

    // Visits every parameter matrix in a fixed order (also the checkpoint and
    // initialization order).
    template <class Fn>
    void for_each(Fn&& fn) {
        fn("img_proj", img_proj);
        fn("tok_embed", tok_embed);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "wq", layers[l].wq);
            fn(p + "wk", layers[l].wk);
            fn(p + "wv", layers[l].wv);
            fn(p + "wo", layers[l].wo);
            fn(p + "w1", layers[l].w1);
            fn(p + "w2", layers[l].w2);
        }
        fn("out_proj", out_proj);
    }

    template <class Fn>
    void for_each(Fn&& fn) const {
        const_cast<PolicyParams*>(this)->for_each(
            [&](const std::string& name, const Mat<Scalar>& m) { fn(name, m); });
    }
};

template <class Scalar>
PolicyParams<Scalar> zeros_like_policy(const PolicyConfig& config) {
    config.validate();
    PolicyParams<Scalar> p;
    p.config = config;
    const int d = config.embed_dim;
    p.img_proj = Mat<Scalar>::Zero(kFeatureDim, d);
    p.tok_embed = Mat<Scalar>::Zero(config.vocab_size, d);
    p.layers.resize(static_cast<std::size_t>(config.num_layers));
    for (auto& layer : p.layers) {
        layer.wq = Mat<Scalar>::Zero(d, d);
        layer.wk = Mat<Scalar>::Zero(d, d);
        layer.wv = Mat<Scalar>::Zero(d, d);
        layer.wo = Mat<Scalar>::Zero(d, d);
        layer.w1 = Mat<Scalar>::Zero(d, config.ffn_dim);
        layer.w2 = Mat<Scalar>::Zero(config.ffn_dim, d);
    }
    p.out_proj = Mat<Scalar>::Zero(d, config.vocab_size);
    return p;
}

// Scaled-uniform initialization with bound 1/sqrt(embed_dim), deterministic in
// the seed.
template <class Scalar>
PolicyParams<Scalar> init_policy(const PolicyConfig& config, std::uint64_t seed) {
    PolicyParams<Scalar> p = zeros_like_policy<Scalar>(config);
    CounterRng rng(derive_seed(seed, 0x1A17));
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
    p.for_each([&](const std::string&, Mat<Scalar>& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = static_cast<Scalar>(rng.next_uniform(-bound, bound));
    });
    return p;
}

template <class Scalar>
void add_scaled(PolicyParams<Scalar>& dst, const PolicyParams<Scalar>& src, Scalar a) {
    dst.img_proj += a * src.img_proj;
    dst.tok_embed += a * src.tok_embed;
    for (std::size_t l = 0; l < dst.layers.size(); ++l) {
        dst.layers[l].wq += a * src.layers[l].wq;
        dst.layers[l].wk += a * src.layers[l].wk;
        dst.layers[l].wv += a * src.layers[l].wv;
        dst.layers[l].wo += a * src.layers[l].wo;
        dst.layers[l].w1 += a * src.layers[l].w1;
        dst.layers[l].w2 += a * src.layers[l].w2;
    }
    dst.out_proj += a * src.out_proj;
}

template <class Scalar>
bool identical_params(const PolicyParams<Scalar>& a, const PolicyParams<Scalar>& b) {
    bool same = true;
    std::vector<const Mat<Scalar>*> lhs, rhs;
    a.for_each([&](const std::string&, const Mat<Scalar>& m) { lhs.push_back(&m); });
    b.for_each([&](const std::string&, const Mat<Scalar>& m) { rhs.push_back(&m); });
    if (lhs.size() != rhs.size()) return false;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        if (lhs[i]->rows() != rhs[i]->rows() || lhs[i]->cols() != rhs[i]->cols()) return false;
        if (std::memcmp(lhs[i]->data(), rhs[i]->data(),
                        sizeof(Scalar) * static_cast<std::size_t>(lhs[i]->size())) != 0)
            same = false;
    }
    return same;
}

template <class Scalar>
bool all_finite(const PolicyParams<Scalar>& p) {
    bool ok = true;
    p.for_each([&](const std::string&, const Mat<Scalar>& m) {
        if (!m.allFinite()) ok = false;
    });
    return ok;
}

// Fixed sinusoidal position encoding; not a parameter.
template <class Scalar>
const Mat<Scalar>& positional_encoding(int rows, int dim) {
    static std::map<std::pair<int, int>, Mat<Scalar>> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find({rows, dim});
    if (it != cache.end()) return it->second;
    Mat<Scalar> pe(rows, dim);
    for (int pos = 0; pos < rows; ++pos)
        for (int i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / dim);
            const double angle = pos * freq;
            pe(pos, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return cache.emplace(std::make_pair(rows, dim), std::move(pe)).first->second;
}

template <class Scalar>
struct LayerTrace {
    Mat<Scalar> x_in, n1, q, k, v, ctx, h, n2, a;
    std::vector<Mat<Scalar>> attn;  // per head, causal row-softmax (S x S)
};

template <class Scalar>
struct ForwardTrace {
    Mat<Scalar> x0;
    std::vector<LayerTrace<Scalar>> layers;
    Mat<Scalar> out_final;  // input of the final norm
    Mat<Scalar> nf;
    Mat<Scalar> logits;  // S x vocab
};

namespace detail {

template <class Scalar>
Mat<Scalar> rmsnorm_rows(const Mat<Scalar>& x) {
    const Scalar eps = Scalar(1e-6);
    const Scalar inv_d = Scalar(1) / static_cast<Scalar>(x.cols());
    Mat<Scalar> out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar ms = x.row(r).squaredNorm() * inv_d + eps;
        out.row(r) = x.row(r) / std::sqrt(ms);
    }
    return out;
}

template <class Scalar>
Mat<Scalar> rmsnorm_backward_rows(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
    const Scalar eps = Scalar(1e-6);
    const Scalar d = static_cast<Scalar>(x.cols());
    Mat<Scalar> dx(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar ms = x.row(r).squaredNorm() / d + eps;
        const Scalar rinv = Scalar(1) / std::sqrt(ms);
        const Scalar dot = dy.row(r).dot(x.row(r));
        dx.row(r) = dy.row(r) * rinv - x.row(r) * (dot * rinv * rinv * rinv / d);
    }
    return dx;
}

template <class Scalar>
void check_inputs(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                  const TokenSeq& tokens) {
    if (image.rows() != kNumCells || image.cols() != kFeatureDim)
        throw ConfigError("image features must be kNumCells x kFeatureDim");
    const int total = kNumCells + static_cast<int>(tokens.size());
    if (total > params.config.max_seq_len)
        throw LengthExceeded("sequence length " + std::to_string(total) + " exceeds max " +
                             std::to_string(params.config.max_seq_len));
    for (std::int32_t t : tokens)
        if (t < 0 || t >= params.config.vocab_size)
            throw ConfigError("token id out of vocabulary range");
}

}  // namespace detail

// Full forward pass over [image ; tokens]. Returns logits per position. When
// `trace` is given the intermediate activations are kept for the backward
// pass. When `mass_rows > 0`, the mean attention mass on the 16 image columns
// over rows [mass_first, mass_first + mass_rows), all layers and heads, is
// written to `mass_out`.
template <class Scalar>
Mat<Scalar> forward_policy(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                           const TokenSeq& tokens, ForwardTrace<Scalar>* trace = nullptr,
                           int mass_first = -1, int mass_rows = 0, double* mass_out = nullptr) {
    detail::check_inputs(params, image, tokens);
    const PolicyConfig& cfg = params.config;
    const int S = kNumCells + static_cast<int>(tokens.size());
    const int d = cfg.embed_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const Scalar sqrt_d = std::sqrt(static_cast<Scalar>(d));

    Mat<Scalar> x(S, d);
    x.topRows(kNumCells) = sqrt_d * (image * params.img_proj);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        x.row(kNumCells + static_cast<Eigen::Index>(i)) =
            sqrt_d * params.tok_embed.row(tokens[i]);
    x += positional_encoding<Scalar>(cfg.max_seq_len, d).topRows(S);

    if (trace) {
        trace->x0 = x;
        trace->layers.assign(static_cast<std::size_t>(cfg.num_layers), {});
    }

    double mass_sum = 0.0;

    for (int l = 0; l < cfg.num_layers; ++l) {
        const auto& layer = params.layers[static_cast<std::size_t>(l)];
        LayerTrace<Scalar>* lt = trace ? &trace->layers[static_cast<std::size_t>(l)] : nullptr;

        Mat<Scalar> n1 = detail::rmsnorm_rows(x);
        Mat<Scalar> q = n1 * layer.wq;
        Mat<Scalar> k = n1 * layer.wk;
        Mat<Scalar> v = n1 * layer.wv;

        Mat<Scalar> ctx(S, d);
        std::vector<Mat<Scalar>> attn;
        if (lt) attn.reserve(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            auto qh = q.middleCols(hd * dh, dh);
            auto kh = k.middleCols(hd * dh, dh);
            auto vh = v.middleCols(hd * dh, dh);
            Mat<Scalar> scores = qh * kh.transpose() * inv_sqrt_dh;
            Mat<Scalar> probs = Mat<Scalar>::Zero(S, S);
            for (int r = 0; r < S; ++r) {
                auto row = scores.row(r).head(r + 1);
                const Scalar m = row.maxCoeff();
                Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (row.array() - m).exp();
                probs.row(r).head(r + 1) = e / e.sum();
            }
            if (mass_rows > 0)
                mass_sum += static_cast<double>(
                    probs.block(mass_first, 0, mass_rows, kNumCells).sum());
            ctx.middleCols(hd * dh, dh) = probs * vh;
            if (lt) attn.push_back(std::move(probs));
        }
        Mat<Scalar> h = x + ctx * layer.wo;
        Mat<Scalar> n2 = detail::rmsnorm_rows(h);
        Mat<Scalar> a = (n2 * layer.w1).array().tanh();
        Mat<Scalar> out = h + a * layer.w2;

        if (lt) {
            lt->x_in = std::move(x);
            lt->n1 = std::move(n1);
            lt->q = std::move(q);
            lt->k = std::move(k);
            lt->v = std::move(v);
            lt->ctx = std::move(ctx);
            lt->h = std::move(h);
            lt->n2 = std::move(n2);
            lt->a = std::move(a);
            lt->attn = std::move(attn);
        }
        x = std::move(out);
    }

    Mat<Scalar> nf = detail::rmsnorm_rows(x);
    Mat<Scalar> logits = nf * params.out_proj;
    if (trace) {
        trace->out_final = std::move(x);
        trace->nf = std::move(nf);
        trace->logits = logits;
    }
    if (mass_out) {
        const long denom =
            static_cast<long>(cfg.num_layers) * heads * (mass_rows > 0 ? mass_rows : 1);
        *mass_out = mass_rows > 0 ? mass_sum / static_cast<double>(denom) : 0.0;
    }
    return logits;
}

// Accumulates parameter gradients of sum_positions dlogits . logits into
// `grads`, given the trace of the matching forward pass.
template <class Scalar>
void backward_policy(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                     const TokenSeq& tokens, const ForwardTrace<Scalar>& trace,
                     const Mat<Scalar>& dlogits, PolicyParams<Scalar>& grads) {
    const PolicyConfig& cfg = params.config;
    const int S = kNumCells + static_cast<int>(tokens.size());
    const int d = cfg.embed_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const Scalar sqrt_d = std::sqrt(static_cast<Scalar>(d));

    grads.out_proj += trace.nf.transpose() * dlogits;
    Mat<Scalar> d_out = detail::rmsnorm_backward_rows(
        trace.out_final, Mat<Scalar>(dlogits * params.out_proj.transpose()));

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const auto& layer = params.layers[static_cast<std::size_t>(l)];
        const auto& t = trace.layers[static_cast<std::size_t>(l)];
        auto& g = grads.layers[static_cast<std::size_t>(l)];

        // out = h + tanh(n2 * w1) * w2
        Mat<Scalar> da = d_out * layer.w2.transpose();
        g.w2 += t.a.transpose() * d_out;
        Mat<Scalar> du = da.array() * (Scalar(1) - t.a.array().square());
        g.w1 += t.n2.transpose() * du;
        Mat<Scalar> dh_total =
            d_out + detail::rmsnorm_backward_rows(t.h, Mat<Scalar>(du * layer.w1.transpose()));

        // h = x_in + ctx * wo
        Mat<Scalar> dctx = dh_total * layer.wo.transpose();
        g.wo += t.ctx.transpose() * dh_total;

        Mat<Scalar> dq = Mat<Scalar>::Zero(S, d);
        Mat<Scalar> dk = Mat<Scalar>::Zero(S, d);
        Mat<Scalar> dv = Mat<Scalar>::Zero(S, d);
        for (int hd = 0; hd < heads; ++hd) {
            const Mat<Scalar>& probs = t.attn[static_cast<std::size_t>(hd)];
            auto qh = t.q.middleCols(hd * dh, dh);
            auto kh = t.k.middleCols(hd * dh, dh);
            auto vh = t.v.middleCols(hd * dh, dh);
            auto dctx_h = dctx.middleCols(hd * dh, dh);

            dv.middleCols(hd * dh, dh) += probs.transpose() * dctx_h;
            Mat<Scalar> dprobs = dctx_h * vh.transpose();
            Mat<Scalar> dscores = Mat<Scalar>::Zero(S, S);
            for (int r = 0; r < S; ++r) {
                auto p = probs.row(r).head(r + 1).array();
                auto dp = dprobs.row(r).head(r + 1).array();
                const Scalar dot = (p * dp).sum();
                dscores.row(r).head(r + 1) = (p * (dp - dot)).matrix();
            }
            dq.middleCols(hd * dh, dh) += dscores * kh * inv_sqrt_dh;
            dk.middleCols(hd * dh, dh) += dscores.transpose() * qh * inv_sqrt_dh;
        }
        g.wq += t.n1.transpose() * dq;
        g.wk += t.n1.transpose() * dk;
        g.wv += t.n1.transpose() * dv;

        Mat<Scalar> dn1 =
            dq * layer.wq.transpose() + dk * layer.wk.transpose() + dv * layer.wv.transpose();
        d_out = dh_total + detail::rmsnorm_backward_rows(t.x_in, dn1);
    }

    grads.img_proj += sqrt_d * image.transpose() * d_out.topRows(kNumCells);
    for (std::size_t i = 0; i < tokens.size(); ++i)
        grads.tok_embed.row(tokens[i]) +=
            sqrt_d * d_out.row(kNumCells + static_cast<Eigen::Index>(i));
}

namespace detail {

inline TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
    TokenSeq out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

template <class Scalar>
Vec<Scalar> response_logprobs_from_logits(const Mat<Scalar>& logits, int prompt_len,
                                          const TokenSeq& response) {
    Vec<Scalar> lp(static_cast<Eigen::Index>(response.size()));
    for (std::size_t i = 0; i < response.size(); ++i) {
        const int row = kNumCells + prompt_len + static_cast<int>(i) - 1;
        auto l = logits.row(row);
        const Scalar m = l.maxCoeff();
        const Scalar lse = m + std::log((l.array() - m).exp().sum());
        lp(static_cast<Eigen::Index>(i)) = l(response[i]) - lse;
    }
    return lp;
}

template <class Scalar>
int argmax_lowest_id(const Eigen::Ref<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>& row) {
    int best = 0;
    for (int j = 1; j < row.cols(); ++j)
        if (row(j) > row(best)) best = j;
    return best;
}

}  // namespace detail

// Per-token log-probabilities of `response` under causal conditioning on
// [image ; prompt ; response]; the sum is log pi(response | image, prompt).
template <class Scalar>
Vec<Scalar> token_logprobs(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                           const TokenSeq& prompt, const TokenSeq& response) {
    if (response.empty()) return Vec<Scalar>();
    Mat<Scalar> logits = forward_policy(params, image, detail::concat(prompt, response));
    return detail::response_logprobs_from_logits(logits, static_cast<int>(prompt.size()),
                                                 response);
}

// Deterministic argmax decoding, ties broken toward the lowest token id.
// Stops at <eos>, after `steps` tokens, or when the context is full.
template <class Scalar>
TokenSeq greedy_continuation(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                             const TokenSeq& prompt, const TokenSeq& prefix, int steps) {
    TokenSeq seq = detail::concat(prompt, prefix);
    detail::check_inputs(params, image, seq);
    TokenSeq generated;
    for (int s = 0; s < steps; ++s) {
        if (kNumCells + static_cast<int>(seq.size()) >= params.config.max_seq_len) break;
        Mat<Scalar> logits = forward_policy(params, image, seq);
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> last = logits.row(logits.rows() - 1);
        const int next = detail::argmax_lowest_id<Scalar>(last);
        generated.push_back(next);
        seq.push_back(next);
        if (next == kEosId) break;
    }
    return generated;
}

// Teacher-forced dispreference: position i is the argmax next token after the
// *preferred* prefix y_w[0..i) under the (noisy) image. Single forward pass;
// the result carries no gradients.
template <class Scalar>
TokenSeq triggered_dispref(const PolicyParams<Scalar>& params,
                           const ImageFeatures<Scalar>& noisy_image, const TokenSeq& prompt,
                           const TokenSeq& preferred) {
    if (preferred.empty()) throw ConfigError("triggered_dispref needs a nonempty preferred");
    Mat<Scalar> logits = forward_policy(params, noisy_image, detail::concat(prompt, preferred));
    const int prompt_len = static_cast<int>(prompt.size());
    TokenSeq out(preferred.size());
    for (std::size_t i = 0; i < preferred.size(); ++i) {
        const int row = kNumCells + prompt_len + static_cast<int>(i) - 1;
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> r = logits.row(row);
        out[i] = detail::argmax_lowest_id<Scalar>(r);
    }
    return out;
}

// Mean attention weight mass on the 16 image positions over response rows,
// layers and heads.
template <class Scalar>
double attention_image_mass(const PolicyParams<Scalar>& params, const ImageFeatures<Scalar>& image,
                            const TokenSeq& prompt, const TokenSeq& response) {
    if (response.empty()) return 0.0;
    double mass = 0.0;
    ForwardTrace<Scalar>* no_trace = nullptr;
    forward_policy(params, image, detail::concat(prompt, response), no_trace,
                   kNumCells + static_cast<int>(prompt.size()),
                   static_cast<int>(response.size()), &mass);
    return mass;
}

}  // namespace povid
