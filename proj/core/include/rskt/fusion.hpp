#pragma once

#include "rskt/attention.hpp"
#include "rskt/cost_map.hpp"

#include <cstdint>

namespace rskt {

// Stack configuration for the (SET, CET) layer pairs. r1 shrinks the
// key/value token set of the spatial cross-attention; r2 pools locations
// before the class-axis self-attention.
struct FusionConfig {
    std::size_t num_layers = 2; // N
    std::size_t d_c = 128;
    std::size_t heads = 4;
    std::size_t r1 = 2;
    std::size_t r2 = 2;
    bool positional_embedding = true;
    std::size_t clip_guidance_layer = 3;
    std::size_t dino_guidance_layer = 3;

    void validate(std::size_t hf, std::size_t wf) const {
        if (d_c % heads)
            throw ConfigError("fusion.d_c " + std::to_string(d_c) + " not divisible by heads " + std::to_string(heads));
        if (hf % r1 || wf % r1)
            throw ConfigError("feature grid " + std::to_string(hf) + "x" + std::to_string(wf) +
                              " not divisible by fusion.r1 " + std::to_string(r1));
        if (hf % r2 || wf % r2)
            throw ConfigError("feature grid " + std::to_string(hf) + "x" + std::to_string(wf) +
                              " not divisible by fusion.r2 " + std::to_string(r2));
    }
};

template <typename T>
struct GuidanceVars {
    Var clip_mid; // H_f x W_f x C_f
    Var dino_mid;
};

// Attention-score multiply-add count 2 * Lq * Lkv * d; the quantity whose
// reduction ratio the dimension-reduction analysis tracks.
inline std::uint64_t attention_flops(std::uint64_t seq_len_q, std::uint64_t seq_len_kv, std::uint64_t d_c) {
    if (seq_len_q == 0 || seq_len_kv == 0 || d_c == 0)
        throw ConfigError("attention_flops: arguments must be positive");
    return 2 * seq_len_q * seq_len_kv * d_c;
}

// Two readings of the post-reduction cost ratio: shrinking both attention
// operands by r along each spatial side gives 1/r^4; shrinking only the
// key/value side (the cross-attention case) gives 1/r^2.
enum class ReductionReading { BothOperands, KeysValuesOnly };

inline std::uint64_t attention_cost_ratio_denominator(ReductionReading reading, std::uint64_t r) {
    if (r == 0) throw ConfigError("reduction ratio must be positive");
    const std::uint64_t r2 = r * r;
    return reading == ReductionReading::BothOperands ? r2 * r2 : r2;
}

namespace detail {

// (H,W,N,d) -> (N, H*W, d)
template <typename T>
Var grid_to_class_tokens(Tape<T>& tp, Var x) {
    const Shape& s = tp.shape(x);
    Var t = tp.permute(x, {2, 0, 1, 3});
    return tp.reshape(t, {s[2], s[0] * s[1], s[3]});
}

// (N, H*W, d) -> (H,W,N,d)
template <typename T>
Var class_tokens_to_grid(Tape<T>& tp, Var x, std::size_t h, std::size_t w) {
    const Shape& s = tp.shape(x);
    Var t = tp.reshape(x, {s[0], h, w, s[2]});
    return tp.permute(t, {1, 2, 0, 3});
}

} // namespace detail

// ---- parameter bundles -------------------------------------------------------

template <typename T>
struct SetLayerVars {
    LayerNormVars<T> ln_q, ln_kv, ln_ffn;
    MhaVars<T> attn;
    FeedForwardVars<T> ffn;
    Var pos_q, pos_kv; // invalid when positional embedding is off
};

template <typename T>
struct CetLayerVars {
    LayerNormVars<T> ln_attn, ln_ffn;
    MhaVars<T> attn;
    FeedForwardVars<T> ffn;
};

// Registers every fusion parameter under `prefix`. The positional embeddings
// are sized for the hf x wf grid the model is built for.
template <typename T>
void register_fusion_params(ParamStore<T>& store, const std::string& prefix, const FusionConfig& cfg,
                            std::size_t c_f, std::size_t hf, std::size_t wf, std::uint64_t seed) {
    cfg.validate(hf, wf);
    Rng rng(seed);
    const std::size_t d = cfg.d_c;
    auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
        store.add(name + ".w", fan_in_init<T>(rng, in, out));
        store.add(name + ".b", TensorT<T>(Shape{out}));
    };
    auto ln = [&](const std::string& name, std::size_t c) {
        store.add(name + ".gamma", TensorT<T>(Shape{c}, T(1)));
        store.add(name + ".beta", TensorT<T>(Shape{c}));
    };
    auto mha = [&](const std::string& name) {
        lin(name + ".q", d, d);
        lin(name + ".k", d, d);
        lin(name + ".v", d, d);
        lin(name + ".o", d, d);
    };
    auto ffn = [&](const std::string& name) {
        lin(name + ".fc1", d, 4 * d);
        lin(name + ".fc2", 4 * d, d);
    };

    lin(prefix + "input_proj", c_f, d);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const std::string lp = prefix + "layer" + std::to_string(i) + ".";
        lin(lp + "sr", (d + 2 * c_f) * cfg.r1 * cfg.r1, d);
        ln(lp + "set.ln_q", d);
        ln(lp + "set.ln_kv", d);
        ln(lp + "set.ln_ffn", d);
        mha(lp + "set.attn");
        ffn(lp + "set.ffn");
        if (cfg.positional_embedding) {
            store.add(lp + "set.pos_q", normal_init<T>(rng, {hf, wf, d}, 0.02));
            store.add(lp + "set.pos_kv", normal_init<T>(rng, {hf / cfg.r1, wf / cfg.r1, d}, 0.02));
        }
        lin(lp + "cr", d + c_f, d);
        ln(lp + "cet.ln_attn", d);
        ln(lp + "cet.ln_ffn", d);
        mha(lp + "cet.attn");
        ffn(lp + "cet.ffn");
    }
}

namespace detail {

template <typename T>
MhaVars<T> mha_vars(Tape<T>& tp, const ParamStore<T>& store, const std::string& name) {
    auto pv = [&](const std::string& n) { return tp.param(n, store.value(n)); };
    return MhaVars<T>{pv(name + ".q.w"), pv(name + ".q.b"), pv(name + ".k.w"), pv(name + ".k.b"),
                      pv(name + ".v.w"), pv(name + ".v.b"), pv(name + ".o.w"), pv(name + ".o.b")};
}

template <typename T>
FeedForwardVars<T> ffn_vars(Tape<T>& tp, const ParamStore<T>& store, const std::string& name) {
    auto pv = [&](const std::string& n) { return tp.param(n, store.value(n)); };
    return FeedForwardVars<T>{pv(name + ".fc1.w"), pv(name + ".fc1.b"), pv(name + ".fc2.w"), pv(name + ".fc2.b")};
}

template <typename T>
LayerNormVars<T> ln_vars(Tape<T>& tp, const ParamStore<T>& store, const std::string& name) {
    auto pv = [&](const std::string& n) { return tp.param(n, store.value(n)); };
    return LayerNormVars<T>{pv(name + ".gamma"), pv(name + ".beta")};
}

} // namespace detail

// ---- operations ---------------------------------------------------------------

// Concatenate the guidance features onto the cost channels (broadcast over
// the class axis) and reduce spatially with a stride-r1 window projection.
template <typename T>
Var spatial_reduce_vars(Tape<T>& tp, Var cost, const GuidanceVars<T>& guidance, Var w, Var b, std::size_t r1) {
    const Shape& cs = tp.shape(cost);
    if (cs.size() != 4) throw ShapeError("spatial_reduce: cost must be (H,W,N,d)");
    const std::size_t n = cs[2];
    if (cs[0] % r1 || cs[1] % r1)
        throw ShapeError("spatial_reduce: grid " + shape_str(cs) + " not divisible by r1 " + std::to_string(r1));
    Var cm = tp.broadcast_axis(guidance.clip_mid, 2, n);
    Var dm = tp.broadcast_axis(guidance.dino_mid, 2, n);
    Var cat = tp.concat_last({cost, cm, dm});
    Var win = tp.space_to_depth(cat, r1);
    return tp.linear(win, w, b);
}

// Spatial Enhancement Transformer layer: per class, full-resolution tokens
// query the reduced token set; pre-norm residual blocks.
template <typename T>
Var set_layer_vars(Tape<T>& tp, Var cost, Var reduced, const SetLayerVars<T>& p, std::size_t heads,
                   AttnTrace<T>* trace = nullptr) {
    const Shape& cs = tp.shape(cost);
    const Shape& rs = tp.shape(reduced);
    if (cs.size() != 4 || rs.size() != 4 || cs[2] != rs[2] || cs[3] != rs[3])
        throw ShapeError("set_layer: incompatible cost/reduced shapes");
    const std::size_t h = cs[0], w = cs[1], n = cs[2];

    Var xt = detail::grid_to_class_tokens(tp, cost);    // (N, H*W, d)
    Var rt = detail::grid_to_class_tokens(tp, reduced); // (N, h_r*w_r, d)

    Var qn = tp.layernorm_last(xt, p.ln_q.gamma, p.ln_q.beta);
    Var kn = tp.layernorm_last(rt, p.ln_kv.gamma, p.ln_kv.beta);
    Var q_in = qn, k_in = kn;
    if (p.pos_q.valid()) {
        const Shape& pq = tp.shape(p.pos_q);
        Var posq = tp.broadcast_axis(tp.reshape(p.pos_q, {pq[0] * pq[1], pq[2]}), 0, n);
        const Shape& pk = tp.shape(p.pos_kv);
        Var posk = tp.broadcast_axis(tp.reshape(p.pos_kv, {pk[0] * pk[1], pk[2]}), 0, n);
        q_in = tp.add(qn, posq);
        k_in = tp.add(kn, posk);
    }
    Var att = multi_head_attention(tp, q_in, k_in, kn, p.attn, heads, trace);
    xt = tp.add(xt, att);
    xt = tp.add(xt, feed_forward(tp, tp.layernorm_last(xt, p.ln_ffn.gamma, p.ln_ffn.beta), p.ffn));
    return detail::class_tokens_to_grid(tp, xt, h, w);
}

// Concatenate the class text embedding onto the cost channels, project back
// to d_c, then pool locations by r2.
template <typename T>
Var class_reduce_vars(Tape<T>& tp, Var cost, Var text_mean, Var w, Var b, std::size_t r2) {
    const Shape& cs = tp.shape(cost);
    const Shape& ts = tp.shape(text_mean);
    if (cs.size() != 4) throw ShapeError("class_reduce: cost must be (H,W,N,d)");
    if (ts.size() != 2 || ts[0] != cs[2])
        throw ShapeError("class_reduce: text " + shape_str(ts) + " incompatible with cost " + shape_str(cs));
    if (cs[0] % r2 || cs[1] % r2)
        throw ShapeError("class_reduce: grid " + shape_str(cs) + " not divisible by r2 " + std::to_string(r2));
    Var txt = tp.broadcast_axis(text_mean, 0, cs[1]); // (W,N,C)
    txt = tp.broadcast_axis(txt, 0, cs[0]);           // (H,W,N,C)
    Var cat = tp.concat_last({cost, txt});
    Var proj = tp.linear(cat, w, b);
    return tp.avg_pool(proj, r2);
}

// Class Enhancement Transformer layer: self-attention over the N_t class
// tokens at every pooled location (no class positional encoding), then
// bilinear upsampling back onto the pre-pooling stream as a residual.
template <typename T>
Var cet_layer_vars(Tape<T>& tp, Var reduced, Var pre_pool_stream, const CetLayerVars<T>& p, std::size_t heads,
                   AttnTrace<T>* trace = nullptr) {
    const Shape& rs = tp.shape(reduced);
    const Shape& fs = tp.shape(pre_pool_stream);
    if (rs.size() != 4 || fs.size() != 4 || rs[2] != fs[2] || rs[3] != fs[3])
        throw ShapeError("cet_layer: incompatible reduced/stream shapes");
    const std::size_t hr = rs[0], wr = rs[1], n = rs[2], d = rs[3];

    Var tokens = tp.reshape(reduced, {hr * wr, n, d}); // batch = locations, sequence = classes
    Var att = multi_head_self_attention(tp, tp.layernorm_last(tokens, p.ln_attn.gamma, p.ln_attn.beta),
                                        p.attn, heads, trace);
    tokens = tp.add(tokens, att);
    tokens = tp.add(tokens, feed_forward(tp, tp.layernorm_last(tokens, p.ln_ffn.gamma, p.ln_ffn.beta), p.ffn));
    Var grid = tp.reshape(tokens, {hr, wr, n, d});
    Var up = tp.bilinear_resize(grid, fs[0], fs[1]);
    return tp.add(pre_pool_stream, up);
}

// N sequential (spatial_reduce -> SET -> class_reduce -> CET) passes over the
// channel-projected cost embedding. N = 0 returns the projected input.
template <typename T>
Var aggregate_vars(Tape<T>& tp, const ParamStore<T>& store, const std::string& prefix, Var cost,
                   const GuidanceVars<T>& guidance, Var text_mean, const FusionConfig& cfg) {
    const Shape& cs = tp.shape(cost);
    if (cs.size() != 4) throw ShapeError("aggregate: cost must be (H_f,W_f,N_t,C)");
    cfg.validate(cs[0], cs[1]);
    auto pv = [&](const std::string& n) { return tp.param(prefix + n, store.value(prefix + n)); };

    Var x = tp.linear(cost, pv("input_proj.w"), pv("input_proj.b"));
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
        const std::string lp = "layer" + std::to_string(i) + ".";
        Var red = spatial_reduce_vars(tp, x, guidance, pv(lp + "sr.w"), pv(lp + "sr.b"), cfg.r1);

        SetLayerVars<T> sp;
        sp.ln_q = detail::ln_vars(tp, store, prefix + lp + "set.ln_q");
        sp.ln_kv = detail::ln_vars(tp, store, prefix + lp + "set.ln_kv");
        sp.ln_ffn = detail::ln_vars(tp, store, prefix + lp + "set.ln_ffn");
        sp.attn = detail::mha_vars(tp, store, prefix + lp + "set.attn");
        sp.ffn = detail::ffn_vars(tp, store, prefix + lp + "set.ffn");
        if (cfg.positional_embedding) {
            sp.pos_q = pv(lp + "set.pos_q");
            sp.pos_kv = pv(lp + "set.pos_kv");
        }
        x = set_layer_vars(tp, x, red, sp, cfg.heads);

        Var cr = class_reduce_vars(tp, x, text_mean, pv(lp + "cr.w"), pv(lp + "cr.b"), cfg.r2);

        CetLayerVars<T> cp;
        cp.ln_attn = detail::ln_vars(tp, store, prefix + lp + "cet.ln_attn");
        cp.ln_ffn = detail::ln_vars(tp, store, prefix + lp + "cet.ln_ffn");
        cp.attn = detail::mha_vars(tp, store, prefix + lp + "cet.attn");
        cp.ffn = detail::ffn_vars(tp, store, prefix + lp + "cet.ffn");
        x = cet_layer_vars(tp, cr, x, cp, cfg.heads);
    }
    return x;
}

} // namespace rskt
