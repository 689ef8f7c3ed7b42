#pragma once

#include <random>
#include <string>
#include <vector>

#include "m3t/ops.hpp"

namespace m3t {

// Context-aware keyword embeddings: learned table lookup followed by
// dot-product self-attention over the keyword positions. The bilinear
// projection w_ke starts at identity, so at init the attention scores are
// exactly the plain pairwise dot products.

template <class S>
struct KeywordAttentionParams {
    Tensor<S> table;  // [V, d_emb]
    Tensor<S> w_ke;   // [d_emb, d_emb]

    static KeywordAttentionParams init(idx vocab_size, idx d_emb, std::mt19937_64& rng,
                                       ParamSet<S>& params, bool with_attention) {
        KeywordAttentionParams p;
        p.table = params.add("keyword.table", uniform_init<S>({vocab_size, d_emb}, d_emb, rng));
        if (with_attention) {
            Tensor<S> eye = Tensor<S>::zeros({d_emb, d_emb});
            for (idx i = 0; i < d_emb; ++i) eye.data()[i * d_emb + i] = S(1);
            p.w_ke = params.add("keyword.w_ke", eye);
        }
        return p;
    }
};

template <class S>
Tensor<S> embed_keywords(const std::vector<idx>& ids, const Tensor<S>& table) {
    return embedding_lookup(table, ids);
}

// Pairwise dot products: score[s][t] = ke_s . ke_t.
template <class S>
Tensor<S> align_scores(const Tensor<S>& e) {
    if (e.rank() != 2) throw ShapeError("align_scores wants [n, d] embeddings");
    return matmul(e, transpose(e));
}

// Mask grows score[s][t] to -1e9 wherever position t is padding.
inline std::vector<std::uint8_t> expand_key_pad_mask(const std::vector<std::uint8_t>& pad, idx rows) {
    const idx n = static_cast<idx>(pad.size());
    std::vector<std::uint8_t> full(static_cast<size_t>(rows * n));
    for (idx s = 0; s < rows; ++s)
        for (idx t = 0; t < n; ++t) full[static_cast<size_t>(s * n + t)] = pad[static_cast<size_t>(t)];
    return full;
}

// KE_att row s = sum_t softmax_t((e w_ke) e^T)[s][t] * e_t. Each output row
// is a convex combination of the input embeddings.
template <class S>
Tensor<S> keyword_attention(const Tensor<S>& e, const KeywordAttentionParams<S>& p,
                            const std::vector<std::uint8_t>& pad = {}) {
    if (e.rank() != 2 || e.extent(1) != p.w_ke.extent(0))
        throw ShapeError(strf("keyword_attention: embeddings %s vs w_ke %s",
                              shape_str(e.shape()).c_str(), shape_str(p.w_ke.shape()).c_str()));
    const idx n = e.extent(0);
    Tensor<S> scores = matmul(matmul(e, p.w_ke), transpose(e));
    if (!pad.empty()) {
        if (static_cast<idx>(pad.size()) != n)
            throw ShapeError("keyword_attention: pad mask length mismatch");
        scores = masked_fill(scores, expand_key_pad_mask(pad, n), static_cast<S>(-1e9));
    }
    Tensor<S> weights = softmax(scores, 1);
    return matmul(weights, e);
}

template <class S>
class KeywordEncoder {
public:
    KeywordEncoder() = default;

    KeywordEncoder(idx vocab_size, idx d_emb, bool with_attention, std::mt19937_64& rng,
                   ParamSet<S>& params)
        : with_attention_(with_attention),
          params_(KeywordAttentionParams<S>::init(vocab_size, d_emb, rng, params, with_attention)) {}

    // ids -> [n, d_emb] context-aware embeddings (raw embeddings when the
    // attention ablation is off)
    Tensor<S> forward(const std::vector<idx>& ids, const std::vector<std::uint8_t>& pad = {}) const {
        Tensor<S> e = embed_keywords(ids, params_.table);
        if (!with_attention_) return e;
        return keyword_attention(e, params_, pad);
    }

    const KeywordAttentionParams<S>& attention_params() const { return params_; }
    bool with_attention() const { return with_attention_; }

private:
    bool with_attention_ = true;
    KeywordAttentionParams<S> params_;
};

}  // namespace m3t
