#include "rskt/attention.hpp"
#include "rskt/autodiff.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace rskt;

TEST_SUITE_BEGIN("autodiff");

namespace {

// Builds the graph twice: once for analytic gradients, then re-evaluated
// inside the finite-difference oracle.
using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

void check_gradients(const std::vector<TensorD>& inputs, const Builder& build, double tol = 1e-6,
                     std::size_t probes = 6) {
    Tape<double> tp;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tp.constant(t));
    Var out = build(tp, vars);
    REQUIRE(tp.value(out).size() == 1);
    tp.backward(out);
    std::vector<TensorD> analytic;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& g = tp.grad(vars[i]);
        analytic.push_back(g.empty() ? TensorD(inputs[i].shape()) : g);
    }
    auto eval = [&](const std::vector<TensorD>& xs) {
        Tape<double> t2;
        std::vector<Var> vs;
        for (const auto& x : xs) vs.push_back(t2.constant(x));
        return t2.value(build(t2, vs))[0];
    };
    const auto res = oracle::fd_against(inputs, analytic, eval, probes);
    CHECK(res.max_rel_err < tol);
}

// Random-weighted sum turns any tensor output into a scalar.
Var weigh(Tape<double>& tp, Var x, std::uint64_t seed) {
    auto w = oracle::random_tensor<double>(tp.shape(x), seed);
    return tp.sum_all(tp.mul(x, tp.constant(w)));
}

} // namespace

TEST_CASE("elementwise op gradients") {
    auto a = oracle::random_tensor<double>({3, 4}, 1);
    auto b = oracle::random_tensor<double>({3, 4}, 2);
    check_gradients({a, b}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.add(tp.mul(v[0], v[1]), tp.sub(v[0], v[1])), 5);
    });
    check_gradients({a}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.gelu(tp.scale(v[0], 1.7)), 6);
    });
}

TEST_CASE("linear gradients with and without bias") {
    auto x = oracle::random_tensor<double>({2, 5, 3}, 3);
    auto w = oracle::random_tensor<double>({3, 4}, 4);
    auto b = oracle::random_tensor<double>({4}, 5);
    check_gradients({x, w, b}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.linear(v[0], v[1], v[2]), 7);
    });
    check_gradients({x, w}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.linear(v[0], v[1]), 8);
    });
}

TEST_CASE("matmul_nt and bmm gradients") {
    auto a = oracle::random_tensor<double>({4, 3}, 6);
    auto b = oracle::random_tensor<double>({5, 3}, 7);
    check_gradients({a, b}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.matmul_nt(v[0], v[1]), 9);
    });
    auto ba = oracle::random_tensor<double>({2, 3, 4}, 8);
    auto bb = oracle::random_tensor<double>({2, 4, 5}, 9);
    check_gradients({ba, bb}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.bmm(v[0], v[1]), 10);
    });
    auto bbt = oracle::random_tensor<double>({2, 5, 4}, 10);
    check_gradients({ba, bbt}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.bmm(v[0], v[1], true), 11);
    });
}

TEST_CASE("softmax rows sum to one and gradients check") {
    auto x = oracle::random_tensor<double>({3, 6}, 11, -3, 3);
    Tape<double> tp;
    Var y = tp.softmax_last(tp.constant(x));
    const auto& yv = tp.value(y);
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += yv[r * 6 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    check_gradients({x}, [](Tape<double>& tp2, const std::vector<Var>& v) {
        return weigh(tp2, tp2.softmax_last(v[0]), 12);
    });
}

TEST_CASE("layernorm gradients") {
    auto x = oracle::random_tensor<double>({4, 6}, 12);
    auto g = oracle::random_tensor<double>({6}, 13, 0.5, 1.5);
    auto b = oracle::random_tensor<double>({6}, 14);
    check_gradients({x, g, b}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.layernorm_last(v[0], v[1], v[2]), 15);
    }, 1e-5);
}

TEST_CASE("normalize_last gradients and zero-norm error") {
    auto x = oracle::random_tensor<double>({5, 4}, 15, 0.3, 1.0);
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.normalize_last(v[0]), 16);
    });
    Tape<double> tp;
    TensorD z(Shape{2, 3});
    CHECK_THROWS_AS(tp.normalize_last(tp.constant(z)), NumericError);
}

TEST_CASE("structural op gradients") {
    auto x = oracle::random_tensor<double>({2, 3, 4}, 16);
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        Var p = tp.permute(v[0], {2, 0, 1});
        Var r = tp.reshape(p, {4, 6});
        return weigh(tp, r, 17);
    });
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.rot90v(v[0], 3), 18);
    });
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.broadcast_axis(v[0], 1, 5), 19);
    });
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.slice_axis0(v[0], 1), 20);
    });
    auto y = oracle::random_tensor<double>({2, 3, 2}, 17);
    check_gradients({x, y}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.concat_last({v[0], v[1]}), 21);
    });
}

TEST_CASE("permute round trip equals identity") {
    auto x = oracle::random_tensor<double>({2, 3, 4, 5}, 18);
    const std::vector<std::size_t> axes{3, 1, 0, 2};
    auto p = permute_copy(x, axes);
    auto back = permute_copy(p, inverse_axes(axes));
    CHECK(allclose(back, x, 0.0, 0.0));
}

TEST_CASE("spatial op gradients") {
    auto x = oracle::random_tensor<double>({4, 4, 2, 3}, 19);
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.space_to_depth(v[0], 2), 22);
    });
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.avg_pool(v[0], 2), 23);
    });
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.bilinear_resize(v[0], 7, 5), 24);
    });
    check_gradients({x}, [](Tape<double>& tp, const std::vector<Var>& v) {
        return weigh(tp, tp.neighborhood3x3(v[0]), 25);
    });
}

TEST_CASE("space_to_depth is avg_pool-compatible") {
    // mean over the window channels of s2d equals avg_pool
    auto x = oracle::random_tensor<double>({4, 4, 1, 1}, 20);
    Tape<double> tp;
    Var s = tp.space_to_depth(tp.constant(x), 2); // (2,2,1,4)
    Var m = tp.avg_pool(tp.constant(x), 2);       // (2,2,1,1)
    const auto& sv = tp.value(s);
    const auto& mv = tp.value(m);
    for (std::size_t i = 0; i < 4; ++i) {
        const double mean = (sv[i * 4] + sv[i * 4 + 1] + sv[i * 4 + 2] + sv[i * 4 + 3]) / 4.0;
        CHECK(mean == doctest::Approx(mv[i]).epsilon(1e-12));
    }
}

TEST_CASE("bilinear resize preserves constants exactly") {
    TensorD x(Shape{3, 5, 2, 4}, 0.625);
    Tape<double> tp;
    Var y = tp.bilinear_resize(tp.constant(x), 9, 4);
    for (std::size_t i = 0; i < tp.value(y).size(); ++i)
        CHECK(tp.value(y)[i] == doctest::Approx(0.625).epsilon(1e-15));
}

TEST_CASE("cross entropy gradients and ignore handling") {
    auto logits = oracle::random_tensor<double>({3, 4, 4}, 21, -2, 2);
    IntTensor labels(Shape{4, 4});
    rskt::Rng rng(5);
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.index(4)); // includes value 3 == ignore below
    labels[0] = 255;
    // relabel 3 -> ignore to exercise mixed ignores
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 3) labels[i] = 255;

    check_gradients({logits}, [labels](Tape<double>& tp, const std::vector<Var>& v) {
        return tp.cross_entropy(v[0], labels, 255).loss;
    }, 1e-6, 10);

    Tape<double> tp;
    IntTensor all_ignored(Shape{4, 4}, 255);
    auto res = tp.cross_entropy(tp.constant(logits), all_ignored, 255);
    CHECK(res.all_ignored);
    CHECK(tp.value(res.loss)[0] == 0.0);

    IntTensor bad(Shape{4, 4}, 7);
    CHECK_THROWS_WITH_AS(tp.cross_entropy(tp.constant(logits), bad, 255).loss,
                         doctest::Contains("label out of range"), ConfigError);
}

TEST_CASE("parameter reuse accumulates gradients once per name") {
    auto w = oracle::random_tensor<double>({3, 3}, 22);
    auto x = oracle::random_tensor<double>({2, 3}, 23);
    Tape<double> tp;
    Var wv = tp.param("w", w);
    Var wv2 = tp.param("w", w);
    CHECK(wv.idx == wv2.idx); // deduplicated
    Var y = tp.linear(tp.linear(tp.constant(x), wv), wv2);
    Var loss = tp.sum_all(y);
    tp.backward(loss);
    const auto grads = tp.param_grads();
    REQUIRE(grads.count("w"));

    // analytic check via FD on the shared weight
    auto eval = [&](const TensorD& wt) {
        Tape<double> t2;
        Var wvar = t2.param("w", wt);
        return t2.value(t2.sum_all(t2.linear(t2.linear(t2.constant(x), wvar), wvar)))[0];
    };
    rskt::Rng rng(31);
    double max_rel = 0;
    for (int k = 0; k < 5; ++k) {
        const std::size_t i = rng.index(w.size());
        TensorD wp = w;
        wp[i] += 1e-6;
        TensorD wm = w;
        wm[i] -= 1e-6;
        const double fd = (eval(wp) - eval(wm)) / 2e-6;
        const double an = grads.at("w")[i];
        max_rel = std::max(max_rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("multi-head attention: probability rows sum to one, gradients check") {
    const std::size_t B = 2, Lq = 5, Lk = 3, D = 8, H = 2;
    auto q = oracle::random_tensor<double>({B, Lq, D}, 24);
    auto kv = oracle::random_tensor<double>({B, Lk, D}, 25);
    std::vector<TensorD> params;
    for (int i = 0; i < 4; ++i) {
        params.push_back(oracle::random_tensor<double>({D, D}, 26 + i));
        params.push_back(oracle::random_tensor<double>({D}, 30 + i));
    }

    auto build = [&](Tape<double>& tp, const std::vector<Var>& v) {
        MhaVars<double> m{v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
        return weigh(tp, multi_head_attention(tp, v[0], v[1], v[1], m, H), 40);
    };
    std::vector<TensorD> inputs{q, kv};
    inputs.insert(inputs.end(), params.begin(), params.end());
    check_gradients(inputs, build, 1e-5, 3);

    Tape<double> tp;
    AttnTrace<double> trace;
    MhaVars<double> m;
    std::vector<Var> pv;
    for (const auto& p : params) pv.push_back(tp.constant(p));
    m = {pv[0], pv[1], pv[2], pv[3], pv[4], pv[5], pv[6], pv[7]};
    (void)multi_head_attention(tp, tp.constant(q), tp.constant(kv), tp.constant(kv), m, H, &trace);
    REQUIRE(trace.probs.shape() == Shape{B * H, Lq, Lk});
    for (std::size_t r = 0; r < B * H * Lq; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < Lk; ++c) s += trace.probs[r * Lk + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("self-attention path agrees with cross-attention on identical tokens") {
    const std::size_t B = 3, L = 4, D = 8, H = 2;
    auto x = oracle::random_tensor<double>({B, L, D}, 50);
    std::vector<TensorD> params;
    for (int i = 0; i < 4; ++i) {
        params.push_back(oracle::random_tensor<double>({D, D}, 51 + i));
        params.push_back(oracle::random_tensor<double>({D}, 55 + i));
    }
    Tape<double> tp;
    std::vector<Var> pv;
    for (const auto& p : params) pv.push_back(tp.constant(p));
    MhaVars<double> m{pv[0], pv[1], pv[2], pv[3], pv[4], pv[5], pv[6], pv[7]};
    Var xv = tp.constant(x);
    Var self_out = multi_head_self_attention(tp, xv, m, H);
    Var cross_out = multi_head_attention(tp, xv, xv, xv, m, H);
    CHECK(max_rel_error(tp.value(self_out), tp.value(cross_out)) < 1e-6);
}

TEST_SUITE_END();
