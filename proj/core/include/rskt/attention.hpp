#pragma once

#include "rskt/autodiff.hpp"

#include <cmath>
#include <optional>

namespace rskt {

// Attention probability capture for tests; rows are per-query softmax outputs.
template <typename T>
struct AttnTrace {
    TensorT<T> probs; // (B*heads, Lq, Lkv)
};

template <typename T>
struct MhaVars {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

namespace detail {

// (B, L, d) -> (B*heads, L, dh)
template <typename T>
Var split_heads(Tape<T>& tp, Var x, std::size_t heads) {
    const Shape& s = tp.shape(x);
    const std::size_t b = s[0], l = s[1], d = s[2];
    const std::size_t dh = d / heads;
    Var y = tp.reshape(x, {b, l, heads, dh});
    y = tp.permute(y, {0, 2, 1, 3});
    return tp.reshape(y, {b * heads, l, dh});
}

// (B*heads, L, dh) -> (B, L, d)
template <typename T>
Var merge_heads(Tape<T>& tp, Var x, std::size_t b, std::size_t heads) {
    const Shape& s = tp.shape(x);
    const std::size_t l = s[1], dh = s[2];
    Var y = tp.reshape(x, {b, heads, l, dh});
    y = tp.permute(y, {0, 2, 1, 3});
    return tp.reshape(y, {b, l, heads * dh});
}

} // namespace detail

// Multi-head attention, cross-attention form: queries from q_src, keys from
// k_src, values from v_src (all (B, L, d)). k_src and v_src share length.
template <typename T>
Var multi_head_attention(Tape<T>& tp, Var q_src, Var k_src, Var v_src, const MhaVars<T>& p,
                         std::size_t heads, AttnTrace<T>* trace = nullptr) {
    const Shape& qs = tp.shape(q_src);
    if (qs.size() != 3) throw ShapeError("attention expects (B, L, d) tokens");
    const std::size_t b = qs[0], d = qs[2];
    if (d % heads) throw ConfigError("attention: dim " + std::to_string(d) +
                                     " not divisible by heads " + std::to_string(heads));
    const std::size_t dh = d / heads;

    Var q = detail::split_heads(tp, tp.linear(q_src, p.wq, p.bq), heads);
    Var k = detail::split_heads(tp, tp.linear(k_src, p.wk, p.bk), heads);
    Var v = detail::split_heads(tp, tp.linear(v_src, p.wv, p.bv), heads);

    Var scores = tp.bmm(q, k, /*transpose_b=*/true);
    scores = tp.scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Var probs = tp.softmax_last(scores, trace ? &trace->probs : nullptr);
    Var ctx = tp.bmm(probs, v);
    ctx = detail::merge_heads(tp, ctx, b, heads);
    return tp.linear(ctx, p.wo, p.bo);
}

// Self-attention over (B, L, d) tokens. Q, K and V come from a single fused
// projection pass; written independently of the cross-attention route so the
// agreement of the two paths on identical tokens stays a checkable invariant.
template <typename T>
Var multi_head_self_attention(Tape<T>& tp, Var x, const MhaVars<T>& p, std::size_t heads,
                              AttnTrace<T>* trace = nullptr) {
    const Shape& xs = tp.shape(x);
    if (xs.size() != 3) throw ShapeError("attention expects (B, L, d) tokens");
    const std::size_t b = xs[0], l = xs[1], d = xs[2];
    if (d % heads) throw ConfigError("attention: dim " + std::to_string(d) +
                                     " not divisible by heads " + std::to_string(heads));
    const std::size_t dh = d / heads;

    Var qkv = tp.concat_last({tp.linear(x, p.wq, p.bq), tp.linear(x, p.wk, p.bk), tp.linear(x, p.wv, p.bv)});
    qkv = tp.reshape(qkv, {b, l, 3, heads, dh});
    qkv = tp.permute(qkv, {2, 0, 3, 1, 4});        // (role, B, heads, L, dh)
    qkv = tp.reshape(qkv, {3, b * heads, l * dh}); // roles on the batch axis
    Var q = tp.reshape(tp.slice_axis0(qkv, 0), {b * heads, l, dh});
    Var k = tp.reshape(tp.slice_axis0(qkv, 1), {b * heads, l, dh});
    Var v = tp.reshape(tp.slice_axis0(qkv, 2), {b * heads, l, dh});

    Var scores = tp.bmm(q, k, /*transpose_b=*/true);
    scores = tp.scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    Var probs = tp.softmax_last(scores, trace ? &trace->probs : nullptr);
    Var ctx = tp.bmm(probs, v);
    ctx = detail::merge_heads(tp, ctx, b, heads);
    return tp.linear(ctx, p.wo, p.bo);
}

template <typename T>
struct LayerNormVars {
    Var gamma, beta;
};

template <typename T>
struct FeedForwardVars {
    Var w1, b1, w2, b2;
};

template <typename T>
Var feed_forward(Tape<T>& tp, Var x, const FeedForwardVars<T>& p) {
    return tp.linear(tp.gelu(tp.linear(x, p.w1, p.b1)), p.w2, p.b2);
}

} // namespace rskt
