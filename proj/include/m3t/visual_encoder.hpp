#pragma once

#include <random>
#include <string>
#include <vector>

#include "m3t/config.hpp"
#include "m3t/ops.hpp"

namespace m3t {

// Spatial H x W x C visual feature block.
template <class S>
struct FeatureMap {
    Tensor<S> values;

    FeatureMap() = default;
    explicit FeatureMap(Tensor<S> v) : values(std::move(v)) {
        if (values.rank() != 3)
            throw ShapeError("feature map wants [H, W, C], got " + shape_str(values.shape()));
    }
    idx height() const { return values.extent(0); }
    idx width() const { return values.extent(1); }
    idx channels() const { return values.extent(2); }
};

// ---------------------------------------------------------------------------
// Lesion contextual gate: global attention pooling, channel bottleneck
// context, and a per-position sigmoid gate over the feature map.

template <class S>
struct LesionGateParams {
    Tensor<S> w_context;  // [C, 1] attention pooling scores
    Tensor<S> w1, w2;     // [C, C/r], [C/r, C] channel bottleneck
    Tensor<S> ln_gamma, ln_beta;
    Tensor<S> w_x, w_g;   // [C, C_int] gating head
    Tensor<S> b_xg;       // [C_int]
    Tensor<S> w_psi;      // [C_int, 1]
    Tensor<S> b_psi;      // [1]

    static LesionGateParams init(idx channels, idx ratio, idx gate_dim, std::mt19937_64& rng,
                                 ParamSet<S>& params, const std::string& prefix) {
        if (channels % ratio != 0)
            throw ContractError(strf("lesion gate: channels %lld not divisible by ratio %lld",
                                     static_cast<long long>(channels),
                                     static_cast<long long>(ratio)));
        const idx bottleneck = channels / ratio;
        LesionGateParams p;
        p.w_context = params.add(prefix + ".w_context", uniform_init<S>({channels, 1}, channels, rng));
        p.w1 = params.add(prefix + ".w1", uniform_init<S>({channels, bottleneck}, channels, rng));
        p.w2 = params.add(prefix + ".w2", uniform_init<S>({bottleneck, channels}, bottleneck, rng));
        p.ln_gamma = params.add(prefix + ".ln_gamma", Tensor<S>::full({bottleneck}, S(1)));
        p.ln_beta = params.add(prefix + ".ln_beta", Tensor<S>::zeros({bottleneck}));
        p.w_x = params.add(prefix + ".w_x", uniform_init<S>({channels, gate_dim}, channels, rng));
        p.w_g = params.add(prefix + ".w_g", uniform_init<S>({channels, gate_dim}, channels, rng));
        p.b_xg = params.add(prefix + ".b_xg", Tensor<S>::zeros({gate_dim}));
        p.w_psi = params.add(prefix + ".w_psi", uniform_init<S>({gate_dim, 1}, gate_dim, rng));
        p.b_psi = params.add(prefix + ".b_psi", Tensor<S>::zeros({1}));  // gates start near 0.5
        return p;
    }
};

// F_gap = sum_j softmax_j(w_context . f_j) * f_j over all spatial positions.
template <class S>
Tensor<S> global_attention_pool(const FeatureMap<S>& f, const LesionGateParams<S>& p) {
    const idx L = f.height() * f.width();
    const idx C = f.channels();
    if (p.w_context.extent(0) != C)
        throw ShapeError(strf("attention pool: %lld channels vs w_context %s",
                              static_cast<long long>(C), shape_str(p.w_context.shape()).c_str()));
    Tensor<S> flat = reshape(f.values, {L, C});
    Tensor<S> scores = reshape(matmul(flat, p.w_context), {L});
    Tensor<S> attn = reshape(softmax(scores, 0), {1, L});
    return reshape(matmul(attn, flat), {C});
}

// F_c = f (+) w2 . LN(relu(w1 . f_gap)) broadcast over all positions.
template <class S>
FeatureMap<S> channel_context(const FeatureMap<S>& f, const Tensor<S>& f_gap,
                              const LesionGateParams<S>& p) {
    const idx C = f.channels();
    if (f_gap.numel() != C)
        throw ShapeError(strf("channel context: f_gap %s vs %lld channels",
                              shape_str(f_gap.shape()).c_str(), static_cast<long long>(C)));
    Tensor<S> hidden = relu(matmul(reshape(f_gap, {1, C}), p.w1));
    Tensor<S> normed = layer_norm(hidden, p.ln_gamma, p.ln_beta);
    Tensor<S> context = reshape(matmul(normed, p.w2), {C});
    const idx L = f.height() * f.width();
    Tensor<S> shifted = add_bias(reshape(f.values, {L, C}), context);
    return FeatureMap<S>(reshape(shifted, f.values.shape()));
}

template <class S>
struct LesionGateResult {
    FeatureMap<S> features;  // alpha-scaled features
    Tensor<S> alpha;         // [H, W] gate coefficients, kept for heatmaps
};

// alpha_j = sigmoid(w_psi . relu(w_x f_j + w_g f_c_j + b_xg) + b_psi),
// F_att_j = alpha_j * f_j.
template <class S>
LesionGateResult<S> lesion_gate(const FeatureMap<S>& f, const FeatureMap<S>& f_c,
                                const LesionGateParams<S>& p) {
    if (f.values.shape() != f_c.values.shape())
        throw ShapeError(strf("lesion gate: %s vs %s", shape_str(f.values.shape()).c_str(),
                              shape_str(f_c.values.shape()).c_str()));
    const idx L = f.height() * f.width();
    const idx C = f.channels();
    Tensor<S> flat_f = reshape(f.values, {L, C});
    Tensor<S> flat_c = reshape(f_c.values, {L, C});
    Tensor<S> pre = add_bias(add(matmul(flat_f, p.w_x), matmul(flat_c, p.w_g)), p.b_xg);
    Tensor<S> gate_in = add_bias(matmul(relu(pre), p.w_psi), p.b_psi);
    Tensor<S> alpha = sigmoid(gate_in);  // [L, 1]
    Tensor<S> gated = mul_colvec(flat_f, reshape(alpha, {L}));
    LesionGateResult<S> out;
    out.features = FeatureMap<S>(reshape(gated, f.values.shape()));
    out.alpha = reshape(alpha, {f.height(), f.width()});
    return out;
}

// Full block, Eqs. style: pool -> channel context -> gate.
template <class S>
LesionGateResult<S> lesion_contextual_gate(const FeatureMap<S>& f, const LesionGateParams<S>& p) {
    Tensor<S> gap = global_attention_pool(f, p);
    FeatureMap<S> ctx = channel_context(f, gap, p);
    return lesion_gate(f, ctx, p);
}

// ---------------------------------------------------------------------------
// Small trainable SE-conv backbone standing in for a pretrained base:
// strided 3x3 conv stages with relu, each followed by a squeeze-excitation
// channel gate.

template <class S>
struct SeConvStage {
    Tensor<S> w_conv;  // [9*Cin, Cout]
    Tensor<S> b_conv;  // [Cout]
    Tensor<S> se_w1, se_b1;  // [Cout, Cout/r], [Cout/r]
    Tensor<S> se_w2, se_b2;  // [Cout/r, Cout], [Cout]
};

template <class S>
class SeConvBackbone {
public:
    SeConvBackbone() = default;

    SeConvBackbone(const ModelConfig& cfg, std::mt19937_64& rng, ParamSet<S>& params)
        : input_size_(cfg.image_size) {
        idx cin = 3;
        for (size_t s = 0; s < cfg.backbone_channels.size(); ++s) {
            const idx cout = cfg.backbone_channels[s];
            const idx se = std::max<idx>(1, cout / cfg.se_ratio);
            const std::string prefix = strf("visual.backbone.stage%zu", s);
            SeConvStage<S> stage;
            stage.w_conv = params.add(prefix + ".w_conv", uniform_init<S>({9 * cin, cout}, 9 * cin, rng));
            stage.b_conv = params.add(prefix + ".b_conv", Tensor<S>::zeros({cout}));
            stage.se_w1 = params.add(prefix + ".se_w1", uniform_init<S>({cout, se}, cout, rng));
            stage.se_b1 = params.add(prefix + ".se_b1", Tensor<S>::zeros({se}));
            stage.se_w2 = params.add(prefix + ".se_w2", uniform_init<S>({se, cout}, se, rng));
            stage.se_b2 = params.add(prefix + ".se_b2", Tensor<S>::zeros({cout}));
            stages_.push_back(std::move(stage));
            cin = cout;
        }
    }

    static idx stage_output_extent(idx in) { return (in + 2 - 3) / 2 + 1; }

    FeatureMap<S> forward(const Tensor<S>& image) const {
        if (image.rank() != 3 || image.extent(2) != 3)
            throw ShapeError("backbone wants [H, W, 3] input, got " + shape_str(image.shape()));
        if (image.extent(0) != input_size_ || image.extent(1) != input_size_)
            throw ShapeError(strf("backbone configured for %lldx%lld input, got %s",
                                  static_cast<long long>(input_size_),
                                  static_cast<long long>(input_size_),
                                  shape_str(image.shape()).c_str()));
        Tensor<S> x = image;
        idx h = image.extent(0), w = image.extent(1);
        for (const auto& stage : stages_) {
            const idx ho = stage_output_extent(h), wo = stage_output_extent(w);
            const idx cout = stage.b_conv.numel();
            Tensor<S> cols = im2col(x, 3, 2, 1);
            Tensor<S> y = relu(add_bias(matmul(cols, stage.w_conv), stage.b_conv));
            // squeeze-excitation: pooled bottleneck scales each channel
            Tensor<S> pooled = reshape(mean_rows(y), {1, cout});
            Tensor<S> hidden = relu(add_bias(matmul(pooled, stage.se_w1), stage.se_b1));
            Tensor<S> gates = sigmoid(add_bias(matmul(hidden, stage.se_w2), stage.se_b2));
            y = mul_rowvec(y, reshape(gates, {cout}));
            x = reshape(y, {ho, wo, cout});
            h = ho;
            w = wo;
        }
        return FeatureMap<S>(x);
    }

    const std::vector<SeConvStage<S>>& stages() const { return stages_; }

private:
    idx input_size_ = 0;
    std::vector<SeConvStage<S>> stages_;
};

// Spatial extents after the configured stride-2 stack, without touching
// any weights.
inline std::pair<idx, idx> backbone_output_extents(const ModelConfig& cfg) {
    idx h = cfg.image_size, w = cfg.image_size;
    for (size_t s = 0; s < cfg.backbone_channels.size(); ++s) {
        h = SeConvBackbone<float>::stage_output_extent(h);
        w = SeConvBackbone<float>::stage_output_extent(w);
    }
    return {h, w};
}

}  // namespace m3t
