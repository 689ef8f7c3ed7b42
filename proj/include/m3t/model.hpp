#pragma once

#include <random>
#include <string>
#include <vector>

#include "m3t/config.hpp"
#include "m3t/decoder.hpp"
#include "m3t/keyword_encoder.hpp"
#include "m3t/transfusion.hpp"
#include "m3t/visual_encoder.hpp"

namespace m3t {

// Symbolic shape walk through the whole pipeline; no weights are built.
struct ShapeTrace {
    Shape input;
    Shape feature_map;
    idx token_count = 0;
    Shape fused;
    Shape logits;

    std::string format() const {
        return shape_str(input) + " -> " + shape_str(feature_map) + " -> " +
               std::to_string(token_count) + " tokens -> " + shape_str(fused) + " -> " +
               shape_str(logits);
    }
};

inline ShapeTrace trace_shapes(const ModelConfig& cfg, idx vocab_size, idx seq_len) {
    ShapeTrace t;
    if (cfg.feature_mode == "backbone") {
        t.input = {cfg.image_size, cfg.image_size, 3};
        const auto [h, w] = backbone_output_extents(cfg);
        t.feature_map = {h, w, cfg.backbone_channels.back()};
    } else {
        t.input = {cfg.feature_h, cfg.feature_w, cfg.feature_c};
        t.feature_map = t.input;
    }
    t.token_count = t.feature_map[0] * t.feature_map[1];
    t.fused = {t.token_count, cfg.d_model};
    t.logits = {seq_len, vocab_size};
    return t;
}

// The full encoder-decoder: SE-conv backbone (or precomputed features),
// lesion contextual gate, keyword encoder, cross-modal fusion block, and
// the autoregressive description decoder. Ablation flags drop whole
// subgraphs, and dropped modules never register parameters.
template <class S>
class M3TModel {
public:
    M3TModel(const ModelConfig& cfg, idx vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
        cfg_.validate();
        std::mt19937_64 rng(cfg_.seed);
        if (cfg_.feature_mode == "backbone")
            backbone_ = SeConvBackbone<S>(cfg_, rng, params_);
        if (cfg_.visual_attention)
            lcg_ = LesionGateParams<S>::init(cfg_.channels(), cfg_.lcg_ratio, cfg_.gate_dim(), rng,
                                             params_, "visual.lcg");
        if (cfg_.keywords)
            keyword_ = KeywordEncoder<S>(vocab_size, cfg_.d_emb, cfg_.keyword_attention, rng,
                                         params_);
        fusion_ = TransFusionParams<S>::init(cfg_.channels(), cfg_.d_emb, cfg_.d_model, cfg_.heads,
                                             cfg_.enc_ffn, rng, params_);
        decoder_ = DecoderParams<S>::init(vocab_size, cfg_.d_model, cfg_.heads, cfg_.dec_ffn,
                                          cfg_.max_desc_len + 2, rng, params_);
    }

    const ModelConfig& config() const { return cfg_; }
    idx vocab_size() const { return vocab_size_; }
    ParamSet<S>& params() { return params_; }
    const ParamSet<S>& params() const { return params_; }

    // Raw image [H, W, 3] (backbone mode) or feature block [h, w, C]
    // (precomputed mode) -> attention-weighted feature map.
    FeatureMap<S> encode_visual(const Tensor<S>& input) {
        FeatureMap<S> f;
        if (cfg_.feature_mode == "backbone") {
            f = backbone_.forward(input);
        } else {
            f = FeatureMap<S>(input);
            if (f.channels() != cfg_.feature_c || f.height() != cfg_.feature_h ||
                f.width() != cfg_.feature_w)
                throw ShapeError(strf("precomputed features %s do not match configured %s",
                                      shape_str(input.shape()).c_str(),
                                      shape_str({cfg_.feature_h, cfg_.feature_w, cfg_.feature_c})
                                          .c_str()));
        }
        if (!cfg_.visual_attention) return f;  // ablation: bypass the gate
        LesionGateResult<S> gated = lesion_contextual_gate(f, lcg_);
        last_alpha_ = gated.alpha;
        return gated.features;
    }

    // Keyword ids -> context embeddings. Empty (or fully padded) keyword
    // sequences and the keywords-off ablation feed a zero context row.
    Tensor<S> encode_keywords(const std::vector<idx>& ids,
                              const std::vector<std::uint8_t>& pad,
                              std::vector<std::uint8_t>* key_pad_out) {
        bool any_valid = false;
        for (size_t i = 0; i < ids.size() && !any_valid; ++i)
            any_valid = i >= pad.size() || pad[i] == 0;
        if (!cfg_.keywords || !any_valid) {
            if (key_pad_out) key_pad_out->clear();
            return Tensor<S>(Shape{1, cfg_.d_emb});
        }
        if (key_pad_out) *key_pad_out = pad;
        return keyword_.forward(ids, pad);
    }

    FusedFeatures<S> fuse(const Tensor<S>& visual_input, const std::vector<idx>& keyword_ids,
                          const std::vector<std::uint8_t>& keyword_pad = {}) {
        FeatureMap<S> f_att = encode_visual(visual_input);
        Tensor<S> tokens = image_tokens(f_att, fusion_.w_in);
        std::vector<std::uint8_t> key_pad;
        Tensor<S> context = encode_keywords(keyword_ids, keyword_pad, &key_pad);
        return encoder_block(tokens, context, fusion_, cfg_.dropout, key_pad);
    }

    Tensor<S> decode_logits(const FusedFeatures<S>& fused, const std::vector<idx>& input_ids) {
        return decoder_forward(input_ids, fused, decoder_, cfg_.dropout);
    }

    // Teacher-forced logits for a full example.
    Tensor<S> forward(const Tensor<S>& visual_input, const std::vector<idx>& keyword_ids,
                      const std::vector<std::uint8_t>& keyword_pad,
                      const std::vector<idx>& decoder_input_ids) {
        return decode_logits(fuse(visual_input, keyword_ids, keyword_pad), decoder_input_ids);
    }

    std::vector<idx> generate(const Tensor<S>& visual_input, const std::vector<idx>& keyword_ids,
                              idx max_len, idx beam = 1) {
        FusedFeatures<S> fused = fuse(visual_input, keyword_ids);
        auto logits_for = [&](const std::vector<idx>& ids) { return decode_logits(fused, ids); };
        if (beam <= 1) return greedy_decode<S>(logits_for, max_len);
        return beam_decode<S>(logits_for, max_len, beam);
    }

    // Gate map [H, W] from the most recent visual encode (empty tensor if
    // the gate is ablated away or nothing ran yet).
    const Tensor<S>& last_alpha() const { return last_alpha_; }

    const SeConvBackbone<S>& backbone() const { return backbone_; }
    const LesionGateParams<S>& lesion_gate_params() const { return lcg_; }
    const KeywordEncoder<S>& keyword_encoder() const { return keyword_; }
    const TransFusionParams<S>& fusion_params() const { return fusion_; }
    const DecoderParams<S>& decoder_params() const { return decoder_; }

private:
    ModelConfig cfg_;
    idx vocab_size_ = 0;
    ParamSet<S> params_;
    SeConvBackbone<S> backbone_;
    LesionGateParams<S> lcg_;
    KeywordEncoder<S> keyword_;
    TransFusionParams<S> fusion_;
    DecoderParams<S> decoder_;
    Tensor<S> last_alpha_;
};

}  // namespace m3t
