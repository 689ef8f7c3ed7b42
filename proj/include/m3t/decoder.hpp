#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "m3t/transfusion.hpp"
#include "m3t/vocab.hpp"

namespace m3t {

// T x T mask; allows(i, j) iff j <= i, so generation never sees the future.
struct CausalMask {
    idx size = 0;
    std::vector<std::uint8_t> allowed;  // row-major [T, T]

    explicit CausalMask(idx t) : size(t), allowed(static_cast<size_t>(t * t)) {
        for (idx i = 0; i < t; ++i)
            for (idx j = 0; j < t; ++j) allowed[static_cast<size_t>(i * t + j)] = j <= i ? 1 : 0;
    }

    bool allows(idx i, idx j) const { return allowed[static_cast<size_t>(i * size + j)] != 0; }

    std::vector<std::uint8_t> blocked() const {
        std::vector<std::uint8_t> out(allowed.size());
        for (size_t i = 0; i < allowed.size(); ++i) out[i] = allowed[i] ? 0 : 1;
        return out;
    }
};

// Fixed sinusoidal positional table, [T_max, d_model]; no parameters.
template <class S>
Tensor<S> sinusoidal_positions(idx t_max, idx d_model) {
    Tensor<S> pe(Shape{t_max, d_model});
    for (idx t = 0; t < t_max; ++t)
        for (idx i = 0; i < d_model; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
            const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
            pe.data()[t * d_model + i] =
                static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

template <class S>
struct DecoderParams {
    Tensor<S> token_table;  // [V, d_model]
    Tensor<S> positions;    // [T_max, d_model] fixed, not trainable
    AttentionParams<S> self_attn;
    AttentionParams<S> cross_attn;
    Tensor<S> ffn_w3, ffn_w4;  // [d_model, d_ff], [d_ff, d_model]
    Tensor<S> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta, ln3_gamma, ln3_beta;
    Tensor<S> out_proj;  // [d_model, V]
    idx t_max = 0;

    static DecoderParams init(idx vocab_size, idx d_model, idx heads, idx d_ff, idx t_max,
                              std::mt19937_64& rng, ParamSet<S>& params) {
        DecoderParams p;
        p.t_max = t_max;
        p.token_table =
            params.add("decoder.token_table", uniform_init<S>({vocab_size, d_model}, d_model, rng));
        p.positions = sinusoidal_positions<S>(t_max, d_model);
        p.self_attn =
            AttentionParams<S>::init(d_model, d_model, d_model, heads, rng, params, "decoder.self");
        p.cross_attn =
            AttentionParams<S>::init(d_model, d_model, d_model, heads, rng, params, "decoder.cross");
        p.ffn_w3 = params.add("decoder.ffn_w3", uniform_init<S>({d_model, d_ff}, d_model, rng));
        p.ffn_w4 = params.add("decoder.ffn_w4", uniform_init<S>({d_ff, d_model}, d_ff, rng));
        p.ln1_gamma = params.add("decoder.ln1_gamma", Tensor<S>::full({d_model}, S(1)));
        p.ln1_beta = params.add("decoder.ln1_beta", Tensor<S>::zeros({d_model}));
        p.ln2_gamma = params.add("decoder.ln2_gamma", Tensor<S>::full({d_model}, S(1)));
        p.ln2_beta = params.add("decoder.ln2_beta", Tensor<S>::zeros({d_model}));
        p.ln3_gamma = params.add("decoder.ln3_gamma", Tensor<S>::full({d_model}, S(1)));
        p.ln3_beta = params.add("decoder.ln3_beta", Tensor<S>::zeros({d_model}));
        p.out_proj = params.add("decoder.out_proj", uniform_init<S>({d_model, vocab_size}, d_model, rng));
        return p;
    }
};

// CE[t] = token_table[ids[t]] + positions[t].
template <class S>
Tensor<S> embed_positions(const std::vector<idx>& ids, const DecoderParams<S>& p) {
    const idx T = static_cast<idx>(ids.size());
    if (T > p.t_max)
        throw ContractError(strf("sequence length %lld exceeds t_max %lld",
                                 static_cast<long long>(T), static_cast<long long>(p.t_max)));
    const idx d = p.token_table.extent(1);
    Tensor<S> pe(Shape{T, d});
    std::copy(p.positions.data(), p.positions.data() + T * d, pe.data());
    return add(embedding_lookup(p.token_table, ids), pe);
}

// Masked self-attention over the description prefix, cross-attention into
// the fused image/keyword features, FFN, then vocabulary logits per
// position. The causal mask applies to self-attention only; fused image
// tokens are not future tokens.
template <class S>
Tensor<S> decoder_forward(const std::vector<idx>& ids, const FusedFeatures<S>& fused,
                          const DecoderParams<S>& p, double dropout_rate = 0.0) {
    if (ids.empty()) throw ContractError("decoder_forward needs at least one token");
    const idx T = static_cast<idx>(ids.size());
    Tensor<S> ce = embed_positions(ids, p);

    Tensor<S> z1 = multi_head_attention(ce, ce, p.self_attn, CausalMask(T).blocked());
    z1 = dropout(z1, dropout_rate);
    Tensor<S> z1_norm = layer_norm(add(ce, z1), p.ln1_gamma, p.ln1_beta);

    Tensor<S> z2 = multi_head_attention(z1_norm, fused.f_prime, p.cross_attn);
    z2 = dropout(z2, dropout_rate);
    Tensor<S> z2_norm = layer_norm(add(z2, z1_norm), p.ln2_gamma, p.ln2_beta);

    Tensor<S> hidden = matmul(relu(matmul(z2_norm, p.ffn_w3)), p.ffn_w4);
    hidden = dropout(hidden, dropout_rate);
    Tensor<S> final_state = layer_norm(add(hidden, z2_norm), p.ln3_gamma, p.ln3_beta);
    return matmul(final_state, p.out_proj);
}

namespace detail {

// log-softmax of the last logit row, computed in double for stable
// hypothesis scoring
template <class S>
std::vector<double> last_row_log_probs(const Tensor<S>& logits) {
    const idx T = logits.extent(0), V = logits.extent(1);
    const S* row = logits.data() + (T - 1) * V;
    double mx = static_cast<double>(row[0]);
    for (idx j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (idx j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    std::vector<double> out(static_cast<size_t>(V));
    for (idx j = 0; j < V; ++j) out[static_cast<size_t>(j)] = static_cast<double>(row[j]) - lse;
    return out;
}

}  // namespace detail

// Greedy decoding: BOS start, argmax per step (ties to the lowest id),
// stops at EOS or max_len. Returns generated ids without BOS/EOS.
template <class S, class ForwardFn>
std::vector<idx> greedy_decode(const ForwardFn& logits_for, idx max_len) {
    std::vector<idx> ids{Vocabulary::kBos};
    std::vector<idx> out;
    for (idx step = 0; step < max_len; ++step) {
        Tensor<S> logits = logits_for(ids);
        const idx V = logits.extent(1);
        const S* row = logits.data() + (logits.extent(0) - 1) * V;
        idx best = 0;
        for (idx j = 1; j < V; ++j)
            if (row[j] > row[best]) best = j;  // strict > keeps the lowest id on ties
        if (best == Vocabulary::kEos) break;
        out.push_back(best);
        ids.push_back(best);
    }
    return out;
}

// Length-normalized beam search (norm exponent 0.7). beam == 1 follows the
// greedy path exactly: candidates sort by raw log-prob with ties broken by
// parent order then token id.
template <class S, class ForwardFn>
std::vector<idx> beam_decode(const ForwardFn& logits_for, idx max_len, idx beam,
                             double length_norm = 0.7) {
    if (beam < 1) throw ContractError("beam width must be >= 1");
    struct Hyp {
        std::vector<idx> tokens;  // generated, no BOS
        double log_prob = 0.0;
        bool finished = false;
    };
    auto norm_score = [&](const Hyp& h) {
        const double len = static_cast<double>(h.tokens.size()) + 1.0;  // counts EOS
        return h.log_prob / std::pow(len, length_norm);
    };

    std::vector<Hyp> active{Hyp{}};
    std::vector<Hyp> finished;
    for (idx step = 0; step < max_len && !active.empty(); ++step) {
        struct Cand {
            size_t parent;
            idx token;
            double log_prob;
        };
        std::vector<Cand> cands;
        for (size_t pi = 0; pi < active.size(); ++pi) {
            std::vector<idx> ids{Vocabulary::kBos};
            ids.insert(ids.end(), active[pi].tokens.begin(), active[pi].tokens.end());
            const auto log_probs = detail::last_row_log_probs(logits_for(ids));
            for (idx v = 0; v < static_cast<idx>(log_probs.size()); ++v)
                cands.push_back({pi, v, active[pi].log_prob + log_probs[static_cast<size_t>(v)]});
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });
        // the top `beam` candidates fill the slots; an EOS candidate
        // retires its slot, which makes beam == 1 trace the greedy path
        std::vector<Hyp> next;
        idx slots = 0;
        for (const auto& c : cands) {
            if (slots >= beam) break;
            ++slots;
            Hyp h = active[c.parent];
            h.log_prob = c.log_prob;
            if (c.token == Vocabulary::kEos) {
                h.finished = true;
                finished.push_back(h);
            } else {
                h.tokens.push_back(c.token);
                next.push_back(std::move(h));
            }
        }
        active = std::move(next);
    }
    for (auto& h : active) finished.push_back(h);  // ran out of length
    if (finished.empty()) return {};
    size_t best = 0;
    for (size_t i = 1; i < finished.size(); ++i)
        if (norm_score(finished[i]) > norm_score(finished[best])) best = i;
    return finished[best].tokens;
}

}  // namespace m3t
