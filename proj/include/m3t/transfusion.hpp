#pragma once

#include <random>
#include <string>
#include <vector>

#include "m3t/keyword_encoder.hpp"
#include "m3t/ops.hpp"
#include "m3t/visual_encoder.hpp"

namespace m3t {

// Multi-head scaled dot-product attention parameters for one cross- or
// self-attention block. Queries may project from a different width than
// keys/values (image tokens vs keyword embeddings).
template <class S>
struct AttentionParams {
    std::vector<Tensor<S>> w_q, w_k, w_v;  // per head
    Tensor<S> w_o;                         // [heads*d_k, d_model]
    idx heads = 0;
    idx d_k = 0;

    static AttentionParams init(idx q_dim, idx kv_dim, idx d_model, idx heads,
                                std::mt19937_64& rng, ParamSet<S>& params,
                                const std::string& prefix) {
        if (d_model % heads != 0)
            throw ContractError(strf("attention: d_model %lld not divisible by %lld heads",
                                     static_cast<long long>(d_model),
                                     static_cast<long long>(heads)));
        AttentionParams p;
        p.heads = heads;
        p.d_k = d_model / heads;
        for (idx h = 0; h < heads; ++h) {
            const std::string hp = strf("%s.h%lld", prefix.c_str(), static_cast<long long>(h));
            p.w_q.push_back(params.add(hp + ".w_q", uniform_init<S>({q_dim, p.d_k}, q_dim, rng)));
            p.w_k.push_back(params.add(hp + ".w_k", uniform_init<S>({kv_dim, p.d_k}, kv_dim, rng)));
            p.w_v.push_back(params.add(hp + ".w_v", uniform_init<S>({kv_dim, p.d_k}, kv_dim, rng)));
        }
        p.w_o = params.add(prefix + ".w_o",
                           uniform_init<S>({heads * p.d_k, d_model}, heads * p.d_k, rng));
        return p;
    }
};

// Z_h = softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated and
// merged through w_o. `blocked` marks score positions (full [rows x keys]
// layout) that must not receive attention; empty means none.
template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& q_src, const Tensor<S>& kv_src,
                               const AttentionParams<S>& p,
                               const std::vector<std::uint8_t>& blocked = {}) {
    if (q_src.rank() != 2 || kv_src.rank() != 2)
        throw ShapeError(strf("attention wants rank-2 sources, got %s and %s",
                              shape_str(q_src.shape()).c_str(),
                              shape_str(kv_src.shape()).c_str()));
    if (kv_src.extent(0) < 1) throw ShapeError("attention needs at least one key");
    const S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(p.d_k)));
    std::vector<Tensor<S>> heads;
    heads.reserve(static_cast<size_t>(p.heads));
    for (idx h = 0; h < p.heads; ++h) {
        Tensor<S> q = matmul(q_src, p.w_q[static_cast<size_t>(h)]);
        Tensor<S> k = matmul(kv_src, p.w_k[static_cast<size_t>(h)]);
        Tensor<S> v = matmul(kv_src, p.w_v[static_cast<size_t>(h)]);
        Tensor<S> scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
        if (!blocked.empty()) scores = masked_fill(scores, blocked, static_cast<S>(-1e9));
        heads.push_back(matmul(softmax(scores, 1), v));
    }
    return matmul(concat_cols(heads), p.w_o);
}

// Attention weight rows (softmax(QK^T/sqrt(d_k))) for one head; used by
// invariant checks that assert each row is a probability distribution.
template <class S>
Tensor<S> attention_weights(const Tensor<S>& q_src, const Tensor<S>& kv_src,
                            const AttentionParams<S>& p, idx head,
                            const std::vector<std::uint8_t>& blocked = {}) {
    Tensor<S> q = matmul(q_src, p.w_q[static_cast<size_t>(head)]);
    Tensor<S> k = matmul(kv_src, p.w_k[static_cast<size_t>(head)]);
    Tensor<S> scores = scale(matmul(q, transpose(k)),
                             static_cast<S>(1.0 / std::sqrt(static_cast<double>(p.d_k))));
    if (!blocked.empty()) scores = masked_fill(scores, blocked, static_cast<S>(-1e9));
    return softmax(scores, 1);
}

// Fused features F' emitted by the cross-modal encoder block.
template <class S>
struct FusedFeatures {
    Tensor<S> f_prime;  // [L, d_model]
};

template <class S>
struct TransFusionParams {
    Tensor<S> w_in;  // [C, d_model] image token projection
    AttentionParams<S> attn;
    Tensor<S> ffn_w1, ffn_w2;  // [d_model, d_ff], [d_ff, d_model]
    Tensor<S> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

    static TransFusionParams init(idx channels, idx d_emb, idx d_model, idx heads, idx d_ff,
                                  std::mt19937_64& rng, ParamSet<S>& params) {
        TransFusionParams p;
        p.w_in = params.add("fusion.w_in", uniform_init<S>({channels, d_model}, channels, rng));
        p.attn = AttentionParams<S>::init(d_model, d_emb, d_model, heads, rng, params, "fusion.attn");
        p.ffn_w1 = params.add("fusion.ffn_w1", uniform_init<S>({d_model, d_ff}, d_model, rng));
        p.ffn_w2 = params.add("fusion.ffn_w2", uniform_init<S>({d_ff, d_model}, d_ff, rng));
        p.ln1_gamma = params.add("fusion.ln1_gamma", Tensor<S>::full({d_model}, S(1)));
        p.ln1_beta = params.add("fusion.ln1_beta", Tensor<S>::zeros({d_model}));
        p.ln2_gamma = params.add("fusion.ln2_gamma", Tensor<S>::full({d_model}, S(1)));
        p.ln2_beta = params.add("fusion.ln2_beta", Tensor<S>::zeros({d_model}));
        return p;
    }
};

// Row-major flatten of the spatial grid followed by a linear projection.
template <class S>
Tensor<S> image_tokens(const FeatureMap<S>& f_att, const Tensor<S>& w_in) {
    if (f_att.channels() != w_in.extent(0))
        throw ShapeError(strf("image_tokens: %lld channels vs w_in %s",
                              static_cast<long long>(f_att.channels()),
                              shape_str(w_in.shape()).c_str()));
    const idx L = f_att.height() * f_att.width();
    return matmul(reshape(f_att.values, {L, f_att.channels()}), w_in);
}

// Image queries attend over keyword keys/values, then residual + layer
// norm + FFN + residual + layer norm.
template <class S>
FusedFeatures<S> encoder_block(const Tensor<S>& tokens, const Tensor<S>& ke_att,
                               const TransFusionParams<S>& p, double dropout_rate = 0.0,
                               const std::vector<std::uint8_t>& key_pad = {}) {
    std::vector<std::uint8_t> blocked;
    if (!key_pad.empty()) blocked = expand_key_pad_mask(key_pad, tokens.extent(0));
    Tensor<S> z = multi_head_attention(tokens, ke_att, p.attn, blocked);
    z = dropout(z, dropout_rate);
    Tensor<S> z_norm = layer_norm(add(tokens, z), p.ln1_gamma, p.ln1_beta);
    Tensor<S> hidden = matmul(relu(matmul(z_norm, p.ffn_w1)), p.ffn_w2);
    hidden = dropout(hidden, dropout_rate);
    return FusedFeatures<S>{layer_norm(add(hidden, z_norm), p.ln2_gamma, p.ln2_beta)};
}

}  // namespace m3t
