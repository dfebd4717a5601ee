#pragma once

#include "rskt/fusion.hpp"
#include "rskt/image.hpp"

#include <algorithm>
#include <array>
#include <iostream>
#include <optional>
#include <vector>

namespace rskt {

// Knowledge-transfer upsampling decoder: N_d refinement layers inject
// intermediate features from the three encoders while doubling the grid.
// Layer lists are consumed deepest-first and recycled cyclically.
struct DecoderConfig {
    std::size_t num_layers = 2; // N_d
    std::vector<std::size_t> clip_layers = {3, 7};
    std::vector<std::size_t> dino_layers = {3, 7};
    std::vector<std::size_t> rclip_layers = {3, 7};

    void validate() const {
        if (clip_layers.empty() || dino_layers.empty() || rclip_layers.empty())
            throw ConfigError("decoder layer lists must be non-empty");
    }

    static std::size_t pick(const std::vector<std::size_t>& list, std::size_t pass) {
        std::vector<std::size_t> sorted = list;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        return sorted[pass % sorted.size()];
    }
};

template <typename T>
struct TransferLayerVars {
    Var proj_w, proj_b; // 3x3 conv as neighborhood gather + linear
    LayerNormVars<T> ln;
};

template <typename T>
struct TransferFeatureVars {
    Var rclip, clip, dino; // H_f x W_f x C_f intermediate grids
};

template <typename T>
void register_decoder_params(ParamStore<T>& store, const std::string& prefix, const DecoderConfig& cfg,
                             std::size_t d_c, std::size_t c_f, Rng& rng) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const std::string lp = prefix + "layer" + std::to_string(i) + ".";
        const std::size_t in = 9 * (d_c + 3 * c_f);
        store.add(lp + "proj.w", fan_in_init<T>(rng, in, d_c));
        store.add(lp + "proj.b", TensorT<T>(Shape{d_c}));
        store.add(lp + "ln.gamma", TensorT<T>(Shape{d_c}, T(1)));
        store.add(lp + "ln.beta", TensorT<T>(Shape{d_c}));
    }
}

// One refinement pass: x2 bilinear upsample of the cost stream, resize the
// encoder intermediates onto the new grid, concatenate per class token in the
// order [cost; F_rclip; F_clip; F_dino], then 3x3 conv + norm + GELU back to d_c.
template <typename T>
Var transfer_upsample_layer_vars(Tape<T>& tp, Var cost, const TransferFeatureVars<T>& feats,
                                 const TransferLayerVars<T>& p) {
    const Shape& cs = tp.shape(cost);
    if (cs.size() != 4) throw ShapeError("transfer_upsample_layer: cost must be (h,w,N,d)");
    const std::size_t h2 = cs[0] * 2, w2 = cs[1] * 2, n = cs[2];

    Var up = tp.bilinear_resize(cost, h2, w2);
    auto resized = [&](Var f) {
        const Shape& fs = tp.shape(f);
        if (fs.size() != 3) throw ShapeError("transfer feature must be (H_f,W_f,C)");
        Var r = tp.reshape(f, {fs[0], fs[1], 1, fs[2]});
        r = tp.bilinear_resize(r, h2, w2);
        r = tp.reshape(r, {h2, w2, fs[2]});
        return tp.broadcast_axis(r, 2, n);
    };
    Var cat = tp.concat_last({up, resized(feats.rclip), resized(feats.clip), resized(feats.dino)});
    Var y = tp.linear(tp.neighborhood3x3(cat), p.proj_w, p.proj_b);
    y = tp.layernorm_last(y, p.ln.gamma, p.ln.beta);
    return tp.gelu(y);
}

// Per-token linear head to one logit per class, then bilinear resize to the
// input resolution. Output layout is (N_t, H, W).
template <typename T>
Var head_vars(Tape<T>& tp, Var cost, Var w, Var b, std::size_t out_h, std::size_t out_w) {
    const Shape& cs = tp.shape(cost);
    if (cs.size() != 4) throw ShapeError("head: cost must be (h,w,N,d)");
    Var lg = tp.linear(cost, w, b);                    // (h,w,N,1)
    lg = tp.bilinear_resize(lg, out_h, out_w);         // (H,W,N,1)
    lg = tp.reshape(lg, {out_h, out_w, cs[2]});
    return tp.permute(lg, {2, 0, 1});                  // (N,H,W)
}

template <typename T>
IntTensor argmax_axis0(const TensorT<T>& logits) {
    if (logits.rank() != 3) throw ShapeError("argmax_axis0 expects (N,H,W)");
    const std::size_t n = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
    IntTensor out(Shape{logits.dim(1), logits.dim(2)});
    for (std::size_t pix = 0; pix < hw; ++pix) {
        std::size_t best = 0;
        T best_v = logits[pix];
        for (std::size_t c = 1; c < n; ++c) {
            const T v = logits[c * hw + pix];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[pix] = static_cast<std::int32_t>(best);
    }
    return out;
}

// ---- full model ---------------------------------------------------------------

struct ModelConfig {
    std::size_t input_size = 64;
    std::size_t patch_size = 16;
    std::size_t embed_dim = 64; // C_f of the toy joint space
    std::size_t encoder_layers = 8;
    std::uint64_t clip_seed = 1, dino_seed = 2, rclip_seed = 3, text_seed = 4;
    std::uint64_t init_seed = 7; // cost projection / fusion / decoder init
    FuseStrategy strategy = FuseStrategy::Cat;
    std::vector<std::string> templates = {"a photo of a {}.", "an aerial photograph of a {}."};

    std::size_t grid() const {
        if (input_size % patch_size)
            throw ConfigError("model.input_size not divisible by model.patch_size");
        return input_size / patch_size;
    }
};

// Detached per-stage copies for the cost-map visualizations.
template <typename T>
struct StageCapture {
    std::array<TensorT<T>, 4> clip_volumes; // aligned to rot0
    TensorT<T> dino_volume;
    TensorT<T> fused;
    TensorT<T> aggregated;
};

// The assembled pipeline: text embedding -> RS-CMA -> RS-Fusion -> RS-Transfer
// -> head. No parameter depends on the class count, so vocabularies of any
// size can be attached at inference time.
template <typename T>
class RsktSeg {
public:
    RsktSeg(ModelConfig mc, FusionConfig fc, DecoderConfig dc)
        : mcfg_(std::move(mc)), fcfg_(std::move(fc)), dcfg_(std::move(dc)) {
        const std::size_t hf = mcfg_.grid();
        fcfg_.validate(hf, hf);
        dcfg_.validate();

        clip_spec_ = {EncoderKind::ToyClipVisual, mcfg_.patch_size, mcfg_.embed_dim, mcfg_.encoder_layers,
                      mcfg_.clip_seed, Trainability::Attention, ""};
        dino_spec_ = {EncoderKind::ToyDino, mcfg_.patch_size, mcfg_.embed_dim, mcfg_.encoder_layers,
                      mcfg_.dino_seed, Trainability::Frozen, ""};
        rclip_spec_ = {EncoderKind::ToyRemoteClip, mcfg_.patch_size, mcfg_.embed_dim, mcfg_.encoder_layers,
                       mcfg_.rclip_seed, Trainability::Frozen, ""};
        text_spec_ = {EncoderKind::ToyText, mcfg_.patch_size, mcfg_.embed_dim, mcfg_.encoder_layers,
                      mcfg_.text_seed, Trainability::Frozen, ""};

        register_encoder_params(params_, "clip.", clip_spec_);
        register_encoder_params(params_, "dino.", dino_spec_);
        register_encoder_params(params_, "rclip.", rclip_spec_);

        Rng rng(mcfg_.init_seed);
        const std::size_t k = fused_width(mcfg_.strategy, mcfg_.templates.size());
        params_.add("cma.proj.w", fan_in_init<T>(rng, k, mcfg_.embed_dim));
        params_.add("cma.proj.b", TensorT<T>(Shape{mcfg_.embed_dim}));
        register_fusion_params(params_, "fusion.", fcfg_, mcfg_.embed_dim, hf, hf, rng.next_u64());
        Rng dec_rng(rng.next_u64());
        register_decoder_params(params_, "decoder.", dcfg_, fcfg_.d_c, mcfg_.embed_dim, dec_rng);
        params_.add("head.w", fan_in_init<T>(dec_rng, fcfg_.d_c, 1));
        params_.add("head.b", TensorT<T>(Shape{1}));
    }

    const ModelConfig& model_config() const { return mcfg_; }
    const FusionConfig& fusion_config() const { return fcfg_; }
    const DecoderConfig& decoder_config() const { return dcfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const EncoderSpec& clip_spec() const { return clip_spec_; }
    const EncoderSpec& dino_spec() const { return dino_spec_; }

    TextEmbedding<T> embed_text(const ClassVocabulary& vocab) const {
        ClassVocabulary v = vocab;
        if (v.templates.empty()) v.templates = mcfg_.templates;
        return encode_text<T>(text_spec_, v);
    }

    // image: (H, W, 3) with H == W == input_size.
    Var forward(Tape<T>& tp, const TensorT<T>& image, const TextEmbedding<T>& text,
                StageCapture<T>* capture = nullptr) const {
        if (image.rank() != 3 || image.dim(2) != 3)
            throw ShapeError("forward expects an (H,W,3) image, got " + shape_str(image.shape()));
        if (image.dim(0) != mcfg_.input_size || image.dim(1) != mcfg_.input_size)
            throw ConfigError("forward: image " + shape_str(image.shape()) + " does not match model.input_size " +
                              std::to_string(mcfg_.input_size) + " (preprocess with center_crop first)");
        const std::size_t n = text.pairs.dim(0);

        Var img = tp.constant(image);
        Var text_pairs = tp.constant(text.pairs);
        Var text_mean = tp.constant(text.class_mean);

        // RS-CMA
        EncoderOutputVars<T> clip0;
        auto clip_costs = multi_rotation_costs_vars(tp, params_, "clip.", clip_spec_, img, text_pairs, &clip0);
        EncoderOutputVars<T> dino0;
        Var dino_vol = dino_cost_vars(tp, params_, "dino.", dino_spec_, img, text_pairs, &dino0);
        Var fused = fuse_costs_vars(tp, clip_costs, dino_vol, mcfg_.strategy);
        Var projected = project_cost_vars(tp, fused, tp.param("cma.proj.w", params_.value("cma.proj.w")),
                                          tp.param("cma.proj.b", params_.value("cma.proj.b")));

        // RS-Fusion
        GuidanceVars<T> guidance;
        guidance.clip_mid = intermediate(tp, clip0, fcfg_.clip_guidance_layer, "clip");
        guidance.dino_mid = intermediate(tp, dino0, fcfg_.dino_guidance_layer, "dino");
        Var agg = aggregate_vars(tp, params_, "fusion.", projected, guidance, text_mean, fcfg_);

        if (capture) {
            for (std::size_t i = 0; i < 4; ++i) capture->clip_volumes[i] = tp.value(clip_costs[i]);
            capture->dino_volume = tp.value(dino_vol);
            capture->fused = tp.value(fused);
            capture->aggregated = tp.value(agg);
        }

        // RS-Transfer
        auto rclip0 = encode_image_vars(tp, params_, "rclip.", rclip_spec_, img);
        Var x = agg;
        for (std::size_t j = 0; j < dcfg_.num_layers; ++j) {
            TransferFeatureVars<T> feats;
            feats.rclip = intermediate(tp, rclip0, DecoderConfig::pick(dcfg_.rclip_layers, j), "rclip");
            feats.clip = intermediate(tp, clip0, DecoderConfig::pick(dcfg_.clip_layers, j), "clip");
            feats.dino = intermediate(tp, dino0, DecoderConfig::pick(dcfg_.dino_layers, j), "dino");
            TransferLayerVars<T> lp;
            const std::string pfx = "decoder.layer" + std::to_string(j) + ".";
            lp.proj_w = tp.param(pfx + "proj.w", params_.value(pfx + "proj.w"));
            lp.proj_b = tp.param(pfx + "proj.b", params_.value(pfx + "proj.b"));
            lp.ln.gamma = tp.param(pfx + "ln.gamma", params_.value(pfx + "ln.gamma"));
            lp.ln.beta = tp.param(pfx + "ln.beta", params_.value(pfx + "ln.beta"));
            x = transfer_upsample_layer_vars(tp, x, feats, lp);
        }

        Var logits = head_vars(tp, x, tp.param("head.w", params_.value("head.w")),
                               tp.param("head.b", params_.value("head.b")),
                               mcfg_.input_size, mcfg_.input_size);
        if (tp.shape(logits)[0] != n) throw ShapeError("internal: logit class axis mismatch");
        return logits;
    }

    TensorT<T> logits(const TensorT<T>& image, const ClassVocabulary& vocab,
                      StageCapture<T>* capture = nullptr) const {
        Tape<T> tp;
        Var out = forward(tp, image, embed_text(vocab), capture);
        TensorT<T> v = tp.value(out);
        check_finite(v, "segmentation logits");
        return v;
    }

    IntTensor predict(const ImageSample& sample, const ClassVocabulary& vocab) const {
        return argmax_axis0(logits(sample.image.template cast<T>(), vocab));
    }

private:
    static Var intermediate(Tape<T>& tp, const EncoderOutputVars<T>& enc, std::size_t layer, const char* which) {
        auto it = enc.intermediates.find(layer);
        if (it == enc.intermediates.end())
            throw ConfigError(std::string("requested intermediate layer ") + std::to_string(layer) +
                              " not present in " + which + " encoder output");
        return it->second;
    }

    ModelConfig mcfg_;
    FusionConfig fcfg_;
    DecoderConfig dcfg_;
    ParamStore<T> params_;
    EncoderSpec clip_spec_, dino_spec_, rclip_spec_, text_spec_;
};

// Center-crop a sample (image and label together) to the model input size.
// Non-square inputs are cropped to their short side first; a warning is
// logged because rotation augmentation needs square grids.
inline ImageSample preprocess_sample(const ImageSample& sample, std::size_t input_size) {
    ImageSample out = sample;
    if (!out.square()) {
        std::cerr << "[rskt] warning: non-square input " << out.height() << "x" << out.width()
                  << " center-cropped before rotation augmentation\n";
    }
    const std::size_t side = std::min({out.height(), out.width(), input_size});
    if (side != out.height() || side != out.width()) {
        out.image = center_crop(out.image, side);
        if (out.label) out.label = center_crop(*out.label, side);
    }
    if (side != input_size)
        throw ConfigError("input " + std::to_string(sample.height()) + "x" + std::to_string(sample.width()) +
                          " smaller than model.input_size " + std::to_string(input_size));
    return out;
}

} // namespace rskt
