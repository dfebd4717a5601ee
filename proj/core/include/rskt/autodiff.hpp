#pragma once

#include "rskt/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace rskt {

// ---------------------------------------------------------------------------
// Row-major matmul kernels. Loop orders chosen so the innermost loop runs
// over contiguous memory and vectorizes.
namespace kernels {

// C(M,N) += A(M,K) * B(K,N)
template <typename T>
void mm_nn_accum(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
void mm_nt_accum(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C(K,N) += A(M,K)^T * B(M,N)
template <typename T>
void mm_tn_accum(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace kernels

// General axis permutation (copy).
template <typename T>
TensorT<T> permute_copy(const TensorT<T>& in, const std::vector<std::size_t>& axes) {
    const std::size_t r = in.rank();
    if (axes.size() != r) throw ShapeError("permute axes rank mismatch");
    Shape out_shape(r);
    for (std::size_t a = 0; a < r; ++a) out_shape[a] = in.dim(axes[a]);
    TensorT<T> out(out_shape);
    if (in.size() == 0) return out;

    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t a = r; a-- > 1;) in_strides[a - 1] = in_strides[a] * in.dim(a);
    // stride of the input axis that out axis a walks over
    std::vector<std::size_t> walk(r);
    for (std::size_t a = 0; a < r; ++a) walk[a] = in_strides[axes[a]];

    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    const std::size_t total = out.size();
    for (std::size_t o = 0; o < total; ++o) {
        out[o] = in[src];
        for (std::size_t a = r; a-- > 0;) {
            idx[a]++;
            src += walk[a];
            if (idx[a] < out_shape[a]) break;
            src -= walk[a] * out_shape[a];
            idx[a] = 0;
        }
    }
    return out;
}

inline std::vector<std::size_t> inverse_axes(const std::vector<std::size_t>& axes) {
    std::vector<std::size_t> inv(axes.size());
    for (std::size_t a = 0; a < axes.size(); ++a) inv[axes[a]] = a;
    return inv;
}

// Lightweight handle into a Tape.
struct Var {
    std::uint32_t idx = std::numeric_limits<std::uint32_t>::max();
    bool valid() const { return idx != std::numeric_limits<std::uint32_t>::max(); }
};

// Reverse-mode tape. Build a computation by calling op methods; backward()
// seeds the scalar output and sweeps the tape in reverse creation order.
// Parameters registered through param() are deduplicated by name so that a
// weight used several times (the rotated encoder passes) accumulates one
// gradient. Forward and backward are deterministic and single-threaded.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const TensorT<T>& value(Var v) const { return nodes_[v.idx].value; }
    const TensorT<T>& grad(Var v) const { return nodes_[v.idx].grad; }
    const Shape& shape(Var v) const { return nodes_[v.idx].value.shape(); }
    std::size_t num_nodes() const { return nodes_.size(); }

    Var constant(TensorT<T> v) { return push(std::move(v), nullptr); }

    Var scalar(T v) { return constant(TensorT<T>(Shape{}, std::vector<T>{v})); }

    // Named parameter leaf; repeated names return the previously created node.
    Var param(const std::string& name, const TensorT<T>& value) {
        auto it = param_index_.find(name);
        if (it != param_index_.end()) return it->second;
        Var v = push(value, nullptr);
        param_index_.emplace(name, v);
        return v;
    }

    const std::map<std::string, Var>& registered_params() const { return param_index_; }

    // Gradients of all named parameters after backward(); params untouched by
    // the graph get zero tensors of their value shape.
    std::map<std::string, TensorT<T>> param_grads() const {
        std::map<std::string, TensorT<T>> out;
        for (const auto& [name, v] : param_index_) {
            const auto& g = nodes_[v.idx].grad;
            out.emplace(name, g.empty() ? TensorT<T>(nodes_[v.idx].value.shape()) : g);
        }
        return out;
    }

    // ---- elementwise ------------------------------------------------------

    Var add(Var a, Var b) {
        require_same_shape(a, b, "add");
        TensorT<T> v = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
        return push(std::move(v), [this, a, b](const TensorT<T>& g) {
            accumulate(a, g);
            accumulate(b, g);
        }, {a, b});
    }

    Var sub(Var a, Var b) {
        require_same_shape(a, b, "sub");
        TensorT<T> v = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
        return push(std::move(v), [this, a, b](const TensorT<T>& g) {
            accumulate(a, g);
            TensorT<T> neg = g;
            for (auto& x : neg.vec()) x = -x;
            accumulate(b, neg);
        }, {a, b});
    }

    Var mul(Var a, Var b) {
        require_same_shape(a, b, "mul");
        TensorT<T> v = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
        return push(std::move(v), [this, a, b](const TensorT<T>& g) {
            TensorT<T> ga = g, gb = g;
            const auto& av = value(a);
            const auto& bv2 = value(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] *= bv2[i];
                gb[i] *= av[i];
            }
            accumulate(a, ga);
            accumulate(b, gb);
        }, {a, b});
    }

    Var scale(Var a, T s) {
        TensorT<T> v = value(a);
        for (auto& x : v.vec()) x *= s;
        return push(std::move(v), [this, a, s](const TensorT<T>& g) {
            TensorT<T> ga = g;
            for (auto& x : ga.vec()) x *= s;
            accumulate(a, ga);
        }, {a});
    }

    Var gelu(Var a) {
        static constexpr double kInvSqrt2 = 0.70710678118654752440;
        static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        TensorT<T> v = value(a);
        for (auto& x : v.vec()) {
            const double xd = static_cast<double>(x);
            x = static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
        }
        return push(std::move(v), [this, a](const TensorT<T>& g) {
            TensorT<T> ga = g;
            const auto& av = value(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = static_cast<double>(av[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga[i] = static_cast<T>(static_cast<double>(ga[i]) * (cdf + x * pdf));
            }
            accumulate(a, ga);
        }, {a});
    }

    // ---- linear algebra ---------------------------------------------------

    // x (..., K) * w (K, N) + b (N). Bias optional (pass invalid Var).
    Var linear(Var x, Var w, Var b = Var{}) {
        const Shape& xs = shape(x);
        const Shape& ws = shape(w);
        if (ws.size() != 2) throw ShapeError("linear: weight must be rank 2");
        const std::size_t k = ws[0], n = ws[1];
        if (xs.empty() || xs.back() != k)
            throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
        const std::size_t m = value(x).size() / k;
        Shape out_shape = xs;
        out_shape.back() = n;
        TensorT<T> out(out_shape);
        kernels::mm_nn_accum(value(x).data(), value(w).data(), out.data(), m, k, n);
        if (b.valid()) {
            const auto& bv = value(b);
            if (bv.size() != n) throw ShapeError("linear: bias size mismatch");
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
        }
        return push(std::move(out), [this, x, w, b, m, k, n](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            kernels::mm_nt_accum(g.data(), value(w).data(), gx.data(), m, n, k);
            accumulate(x, gx);
            TensorT<T> gw(shape(w));
            kernels::mm_tn_accum(value(x).data(), g.data(), gw.data(), m, k, n);
            accumulate(w, gw);
            if (b.valid()) {
                TensorT<T> gb(Shape{n});
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                accumulate(b, gb);
            }
        }, {x, w, b});
    }

    // a (M,K) * b (N,K)^T -> (M,N)
    Var matmul_nt(Var a, Var b) {
        const Shape& as = shape(a);
        const Shape& bs = shape(b);
        if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
            throw ShapeError("matmul_nt: need (M,K),(N,K), got " + shape_str(as) + "," + shape_str(bs));
        const std::size_t m = as[0], k = as[1], n = bs[0];
        TensorT<T> out(Shape{m, n});
        kernels::mm_nt_accum(value(a).data(), value(b).data(), out.data(), m, k, n);
        return push(std::move(out), [this, a, b, m, k, n](const TensorT<T>& g) {
            TensorT<T> ga(shape(a));
            kernels::mm_nn_accum(g.data(), value(b).data(), ga.data(), m, n, k);
            accumulate(a, ga);
            TensorT<T> gb(shape(b));
            kernels::mm_tn_accum(g.data(), value(a).data(), gb.data(), m, n, k);
            accumulate(b, gb);
        }, {a, b});
    }

    // Batched matmul: a (B,M,K), b (B,K,N) or (B,N,K) when transpose_b.
    Var bmm(Var a, Var b, bool transpose_b = false) {
        const Shape& as = shape(a);
        const Shape& bs = shape(b);
        if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0]) throw ShapeError("bmm: rank/batch mismatch");
        const std::size_t bsz = as[0], m = as[1], k = as[2];
        const std::size_t n = transpose_b ? bs[1] : bs[2];
        if ((transpose_b ? bs[2] : bs[1]) != k) throw ShapeError("bmm: inner dim mismatch");
        TensorT<T> out(Shape{bsz, m, n});
        const T* ap = value(a).data();
        const T* bp = value(b).data();
        for (std::size_t q = 0; q < bsz; ++q) {
            if (transpose_b)
                kernels::mm_nt_accum(ap + q * m * k, bp + q * n * k, out.data() + q * m * n, m, k, n);
            else
                kernels::mm_nn_accum(ap + q * m * k, bp + q * k * n, out.data() + q * m * n, m, k, n);
        }
        return push(std::move(out), [this, a, b, transpose_b, bsz, m, k, n](const TensorT<T>& g) {
            TensorT<T> ga(shape(a));
            TensorT<T> gb(shape(b));
            const T* gp = g.data();
            const T* ap2 = value(a).data();
            const T* bp2 = value(b).data();
            for (std::size_t q = 0; q < bsz; ++q) {
                const T* gq = gp + q * m * n;
                T* gaq = ga.data() + q * m * k;
                T* gbq = gb.data() + q * (transpose_b ? n * k : k * n);
                if (transpose_b) {
                    // y = a * b^T : ga += g*b ; gb += g^T*a
                    kernels::mm_nn_accum(gq, bp2 + q * n * k, gaq, m, n, k);
                    kernels::mm_tn_accum(gq, ap2 + q * m * k, gbq, m, n, k);
                } else {
                    kernels::mm_nt_accum(gq, bp2 + q * k * n, gaq, m, n, k);
                    kernels::mm_tn_accum(ap2 + q * m * k, gq, gbq, m, k, n);
                }
            }
            accumulate(a, ga);
            accumulate(b, gb);
        }, {a, b});
    }

    // ---- normalization and softmax ----------------------------------------

    Var softmax_last(Var x, TensorT<T>* probs_capture = nullptr) {
        const Shape& xs = shape(x);
        const std::size_t c = xs.back();
        const std::size_t rows = value(x).size() / c;
        TensorT<T> out = value(x);
        for (std::size_t r = 0; r < rows; ++r) {
            T* row = out.data() + r * c;
            T mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            T sum = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
        }
        if (probs_capture) *probs_capture = out;
        Var y = push(std::move(out), nullptr, {x});
        nodes_[y.idx].back = [this, x, y, rows, c](const TensorT<T>& g) {
            const auto& yv = value(y);
            TensorT<T> gx(shape(x));
            for (std::size_t r = 0; r < rows; ++r) {
                const T* yr = yv.data() + r * c;
                const T* gr = g.data() + r * c;
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
                T* out_r = gx.data() + r * c;
                for (std::size_t j = 0; j < c; ++j) out_r[j] = yr[j] * (gr[j] - dot);
            }
            accumulate(x, gx);
        };
        return y;
    }

    // LayerNorm over the last dim with learned gain/bias.
    Var layernorm_last(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
        const Shape& xs = shape(x);
        const std::size_t c = xs.back();
        if (value(gamma).size() != c || value(beta).size() != c)
            throw ShapeError("layernorm: gain/bias size mismatch");
        const std::size_t rows = value(x).size() / c;
        TensorT<T> out(xs);
        auto stats = std::make_shared<std::vector<T>>(rows * 2); // mean, inv_std per row
        const auto& xv = value(x);
        const auto& gv = value(gamma);
        const auto& bv = value(beta);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = xv.data() + r * c;
            T mean = T(0);
            for (std::size_t j = 0; j < c; ++j) mean += row[j];
            mean /= static_cast<T>(c);
            T var = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                const T d = row[j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(c);
            const T inv_std = T(1) / std::sqrt(var + eps);
            (*stats)[2 * r] = mean;
            (*stats)[2 * r + 1] = inv_std;
            T* orow = out.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) orow[j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
        }
        return push(std::move(out), [this, x, gamma, beta, rows, c, stats](const TensorT<T>& g) {
            const auto& xv2 = value(x);
            const auto& gv2 = value(gamma);
            TensorT<T> gx(shape(x));
            TensorT<T> ggamma(Shape{c});
            TensorT<T> gbeta(Shape{c});
            for (std::size_t r = 0; r < rows; ++r) {
                const T mean = (*stats)[2 * r];
                const T inv_std = (*stats)[2 * r + 1];
                const T* row = xv2.data() + r * c;
                const T* grow = g.data() + r * c;
                T sum_gy = T(0), sum_gy_xhat = T(0);
                for (std::size_t j = 0; j < c; ++j) {
                    const T xhat = (row[j] - mean) * inv_std;
                    const T gy = grow[j] * gv2[j];
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat;
                    ggamma[j] += grow[j] * xhat;
                    gbeta[j] += grow[j];
                }
                T* gxr = gx.data() + r * c;
                const T inv_c = T(1) / static_cast<T>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const T xhat = (row[j] - mean) * inv_std;
                    const T gy = grow[j] * gv2[j];
                    gxr[j] = inv_std * (gy - inv_c * sum_gy - xhat * inv_c * sum_gy_xhat);
                }
            }
            accumulate(x, gx);
            accumulate(gamma, ggamma);
            accumulate(beta, gbeta);
        }, {x, gamma, beta});
    }

    // Unit-normalize vectors along the last dim. Norms below min_norm raise
    // NumericError naming the offending row.
    Var normalize_last(Var x, double min_norm = 1e-12) {
        const Shape& xs = shape(x);
        const std::size_t c = xs.back();
        const std::size_t rows = value(x).size() / c;
        TensorT<T> out = value(x);
        auto norms = std::make_shared<std::vector<T>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            T* row = out.data() + r * c;
            double sq = 0;
            for (std::size_t j = 0; j < c; ++j) sq += static_cast<double>(row[j]) * row[j];
            const double nrm = std::sqrt(sq);
            if (nrm < min_norm)
                throw NumericError("degenerate input: zero-norm vector at flat row " + std::to_string(r));
            (*norms)[r] = static_cast<T>(nrm);
            for (std::size_t j = 0; j < c; ++j) row[j] = static_cast<T>(row[j] / nrm);
        }
        Var y = push(std::move(out), nullptr, {x});
        nodes_[y.idx].back = [this, x, y, rows, c, norms](const TensorT<T>& g) {
            const auto& yv = value(y);
            TensorT<T> gx(shape(x));
            for (std::size_t r = 0; r < rows; ++r) {
                const T* yr = yv.data() + r * c;
                const T* gr = g.data() + r * c;
                const T inv_n = T(1) / (*norms)[r];
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
                T* gxr = gx.data() + r * c;
                for (std::size_t j = 0; j < c; ++j) gxr[j] = inv_n * (gr[j] - yr[j] * dot);
            }
            accumulate(x, gx);
        };
        return y;
    }

    // ---- structural ops ----------------------------------------------------

    Var reshape(Var x, Shape s) {
        TensorT<T> v = value(x).reshaped(std::move(s));
        return push(std::move(v), [this, x](const TensorT<T>& g) {
            accumulate(x, g.reshaped(shape(x)));
        }, {x});
    }

    Var permute(Var x, std::vector<std::size_t> axes) {
        TensorT<T> v = permute_copy(value(x), axes);
        auto inv = inverse_axes(axes);
        return push(std::move(v), [this, x, inv](const TensorT<T>& g) {
            accumulate(x, permute_copy(g, inv));
        }, {x});
    }

    Var rot90v(Var x, long long k) {
        TensorT<T> v = rot90(value(x), k);
        return push(std::move(v), [this, x, k](const TensorT<T>& g) {
            accumulate(x, rot90(g, -k));
        }, {x});
    }

    Var concat_last(const std::vector<Var>& parts) {
        if (parts.empty()) throw ShapeError("concat_last: empty input list");
        Shape base = shape(parts[0]);
        std::size_t total_c = 0;
        std::vector<std::size_t> widths;
        for (Var p : parts) {
            const Shape& s = shape(p);
            if (s.size() != base.size()) throw ShapeError("concat_last: rank mismatch");
            for (std::size_t a = 0; a + 1 < s.size(); ++a)
                if (s[a] != base[a]) throw ShapeError("concat_last: leading dim mismatch");
            widths.push_back(s.back());
            total_c += s.back();
        }
        Shape out_shape = base;
        out_shape.back() = total_c;
        TensorT<T> out(out_shape);
        const std::size_t rows = out.size() / total_c;
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const auto& pv = value(parts[p]);
            const std::size_t w = widths[p];
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(pv.data() + r * w, pv.data() + (r + 1) * w, out.data() + r * total_c + off);
            off += w;
        }
        auto parts_copy = parts;
        return push(std::move(out), [this, parts_copy, widths, total_c, rows](const TensorT<T>& g) {
            std::size_t off2 = 0;
            for (std::size_t p = 0; p < parts_copy.size(); ++p) {
                const std::size_t w = widths[p];
                TensorT<T> gp(shape(parts_copy[p]));
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy(g.data() + r * total_c + off2, g.data() + r * total_c + off2 + w,
                              gp.data() + r * w);
                accumulate(parts_copy[p], gp);
                off2 += w;
            }
        }, parts);
    }

    // Insert a new axis of length n at position `axis`, repeating the input.
    Var broadcast_axis(Var x, std::size_t axis, std::size_t n) {
        const Shape& xs = shape(x);
        if (axis > xs.size()) throw ShapeError("broadcast_axis: bad axis");
        Shape out_shape = xs;
        out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
        std::size_t outer = 1, inner = 1;
        for (std::size_t a = 0; a < axis; ++a) outer *= xs[a];
        for (std::size_t a = axis; a < xs.size(); ++a) inner *= xs[a];
        TensorT<T> out(out_shape);
        const auto& xv = value(x);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t r = 0; r < n; ++r)
                std::copy(xv.data() + o * inner, xv.data() + (o + 1) * inner,
                          out.data() + (o * n + r) * inner);
        return push(std::move(out), [this, x, outer, inner, n](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t r = 0; r < n; ++r) {
                    const T* src = g.data() + (o * n + r) * inner;
                    T* dst = gx.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
            accumulate(x, gx);
        }, {x});
    }

    // Select one index along the leading axis: (N, ...) -> (...).
    Var slice_axis0(Var x, std::size_t index) {
        const Shape& xs = shape(x);
        if (xs.empty() || index >= xs[0]) throw ShapeError("slice_axis0: index out of range");
        Shape out_shape(xs.begin() + 1, xs.end());
        const std::size_t block = numel(out_shape);
        TensorT<T> out(out_shape);
        std::copy(value(x).data() + index * block, value(x).data() + (index + 1) * block, out.data());
        return push(std::move(out), [this, x, index, block](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            std::copy(g.data(), g.data() + block, gx.data() + index * block);
            accumulate(x, gx);
        }, {x});
    }

    // ---- spatial ops on (H, W, B, C) grids ----------------------------------

    // Non-overlapping p x p window flattening:
    // (H,W,B,C) -> (H/p, W/p, B, p*p*C), window cells ordered (dh, dw, c).
    Var space_to_depth(Var x, std::size_t p) {
        const Shape& xs = shape(x);
        if (xs.size() != 4) throw ShapeError("space_to_depth expects (H,W,B,C)");
        const std::size_t h = xs[0], w = xs[1], b = xs[2], c = xs[3];
        if (h % p || w % p)
            throw ShapeError("space_to_depth: " + shape_str(xs) + " not divisible by window " + std::to_string(p));
        const std::size_t ho = h / p, wo = w / p;
        TensorT<T> out(Shape{ho, wo, b, p * p * c});
        const auto& xv = value(x);
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j)
                for (std::size_t q = 0; q < b; ++q)
                    for (std::size_t dh = 0; dh < p; ++dh)
                        for (std::size_t dw = 0; dw < p; ++dw) {
                            const T* src = xv.data() + (((i * p + dh) * w + (j * p + dw)) * b + q) * c;
                            T* dst = out.data() + ((i * wo + j) * b + q) * (p * p * c) + (dh * p + dw) * c;
                            std::copy(src, src + c, dst);
                        }
        return push(std::move(out), [this, x, p, h, w, b, c, ho, wo](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j)
                    for (std::size_t q = 0; q < b; ++q)
                        for (std::size_t dh = 0; dh < p; ++dh)
                            for (std::size_t dw = 0; dw < p; ++dw) {
                                const T* src = g.data() + ((i * wo + j) * b + q) * (p * p * c) + (dh * p + dw) * c;
                                T* dst = gx.data() + (((i * p + dh) * w + (j * p + dw)) * b + q) * c;
                                for (std::size_t e = 0; e < c; ++e) dst[e] += src[e];
                            }
            accumulate(x, gx);
        }, {x});
    }

    // Mean pooling with window == stride == r on (H,W,B,C).
    Var avg_pool(Var x, std::size_t r) {
        const Shape& xs = shape(x);
        if (xs.size() != 4) throw ShapeError("avg_pool expects (H,W,B,C)");
        const std::size_t h = xs[0], w = xs[1], b = xs[2], c = xs[3];
        if (h % r || w % r) throw ShapeError("avg_pool: grid " + shape_str(xs) + " not divisible by " + std::to_string(r));
        const std::size_t ho = h / r, wo = w / r;
        const T inv = T(1) / static_cast<T>(r * r);
        TensorT<T> out(Shape{ho, wo, b, c});
        const auto& xv = value(x);
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j)
                for (std::size_t q = 0; q < b; ++q) {
                    T* dst = out.data() + ((i * wo + j) * b + q) * c;
                    for (std::size_t dh = 0; dh < r; ++dh)
                        for (std::size_t dw = 0; dw < r; ++dw) {
                            const T* src = xv.data() + (((i * r + dh) * w + (j * r + dw)) * b + q) * c;
                            for (std::size_t e = 0; e < c; ++e) dst[e] += src[e];
                        }
                    for (std::size_t e = 0; e < c; ++e) dst[e] *= inv;
                }
        return push(std::move(out), [this, x, r, w, b, c, ho, wo, inv](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j)
                    for (std::size_t q = 0; q < b; ++q) {
                        const T* src = g.data() + ((i * wo + j) * b + q) * c;
                        for (std::size_t dh = 0; dh < r; ++dh)
                            for (std::size_t dw = 0; dw < r; ++dw) {
                                T* dst = gx.data() + (((i * r + dh) * w + (j * r + dw)) * b + q) * c;
                                for (std::size_t e = 0; e < c; ++e) dst[e] += src[e] * inv;
                            }
                    }
            accumulate(x, gx);
        }, {x});
    }

    // Bilinear resize of (H,W,B,C) to (Ho,Wo,B,C), half-pixel centers,
    // clamped at borders. Interpolation weights sum to 1, so constants are
    // preserved exactly.
    Var bilinear_resize(Var x, std::size_t ho, std::size_t wo) {
        const Shape& xs = shape(x);
        if (xs.size() != 4) throw ShapeError("bilinear_resize expects (H,W,B,C)");
        const std::size_t h = xs[0], w = xs[1], b = xs[2], c = xs[3];
        if (h == ho && w == wo) return x;
        auto table = std::make_shared<ResizeTable>(make_resize_table(h, ho), make_resize_table(w, wo));
        TensorT<T> out(Shape{ho, wo, b, c});
        const auto& xv = value(x);
        const auto& rt = table->first;
        const auto& ct = table->second;
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const auto& [r0, r1, rw] = rt[i];
                const auto& [c0, c1, cw] = ct[j];
                const double w00 = (1 - rw) * (1 - cw), w01 = (1 - rw) * cw, w10 = rw * (1 - cw), w11 = rw * cw;
                for (std::size_t q = 0; q < b; ++q) {
                    const T* s00 = xv.data() + ((r0 * w + c0) * b + q) * c;
                    const T* s01 = xv.data() + ((r0 * w + c1) * b + q) * c;
                    const T* s10 = xv.data() + ((r1 * w + c0) * b + q) * c;
                    const T* s11 = xv.data() + ((r1 * w + c1) * b + q) * c;
                    T* dst = out.data() + ((i * wo + j) * b + q) * c;
                    for (std::size_t e = 0; e < c; ++e)
                        dst[e] = static_cast<T>(w00 * s00[e] + w01 * s01[e] + w10 * s10[e] + w11 * s11[e]);
                }
            }
        return push(std::move(out), [this, x, table, ho, wo, h, w, b, c](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            const auto& rt2 = table->first;
            const auto& ct2 = table->second;
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const auto& [r0, r1, rw] = rt2[i];
                    const auto& [c0, c1, cw] = ct2[j];
                    const double w00 = (1 - rw) * (1 - cw), w01 = (1 - rw) * cw, w10 = rw * (1 - cw), w11 = rw * cw;
                    for (std::size_t q = 0; q < b; ++q) {
                        const T* src = g.data() + ((i * wo + j) * b + q) * c;
                        T* d00 = gx.data() + ((r0 * w + c0) * b + q) * c;
                        T* d01 = gx.data() + ((r0 * w + c1) * b + q) * c;
                        T* d10 = gx.data() + ((r1 * w + c0) * b + q) * c;
                        T* d11 = gx.data() + ((r1 * w + c1) * b + q) * c;
                        for (std::size_t e = 0; e < c; ++e) {
                            d00[e] += static_cast<T>(w00 * src[e]);
                            d01[e] += static_cast<T>(w01 * src[e]);
                            d10[e] += static_cast<T>(w10 * src[e]);
                            d11[e] += static_cast<T>(w11 * src[e]);
                        }
                    }
                }
            accumulate(x, gx);
        }, {x});
    }

    // 3x3 neighborhood gather with replicate padding:
    // (H,W,B,C) -> (H,W,B,9C), window cells ordered (dh, dw, c).
    // Followed by linear(), this realizes a 3x3 convolution.
    Var neighborhood3x3(Var x) {
        const Shape& xs = shape(x);
        if (xs.size() != 4) throw ShapeError("neighborhood3x3 expects (H,W,B,C)");
        const std::size_t h = xs[0], w = xs[1], b = xs[2], c = xs[3];
        TensorT<T> out(Shape{h, w, b, 9 * c});
        const auto& xv = value(x);
        auto clamp = [](std::ptrdiff_t v, std::size_t n) {
            return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(v, static_cast<std::ptrdiff_t>(n) - 1)));
        };
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                for (std::size_t q = 0; q < b; ++q) {
                    T* dst = out.data() + ((i * w + j) * b + q) * 9 * c;
                    std::size_t slot = 0;
                    for (int dh = -1; dh <= 1; ++dh)
                        for (int dw = -1; dw <= 1; ++dw, ++slot) {
                            const std::size_t si = clamp(static_cast<std::ptrdiff_t>(i) + dh, h);
                            const std::size_t sj = clamp(static_cast<std::ptrdiff_t>(j) + dw, w);
                            const T* src = xv.data() + ((si * w + sj) * b + q) * c;
                            std::copy(src, src + c, dst + slot * c);
                        }
                }
        return push(std::move(out), [this, x, h, w, b, c](const TensorT<T>& g) {
            TensorT<T> gx(shape(x));
            auto clamp = [](std::ptrdiff_t v, std::size_t n) {
                return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(v, static_cast<std::ptrdiff_t>(n) - 1)));
            };
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    for (std::size_t q = 0; q < b; ++q) {
                        const T* src = g.data() + ((i * w + j) * b + q) * 9 * c;
                        std::size_t slot = 0;
                        for (int dh = -1; dh <= 1; ++dh)
                            for (int dw = -1; dw <= 1; ++dw, ++slot) {
                                const std::size_t si = clamp(static_cast<std::ptrdiff_t>(i) + dh, h);
                                const std::size_t sj = clamp(static_cast<std::ptrdiff_t>(j) + dw, w);
                                T* dst = gx.data() + ((si * w + sj) * b + q) * c;
                                for (std::size_t e = 0; e < c; ++e) dst[e] += src[slot * c + e];
                            }
                    }
            accumulate(x, gx);
        }, {x});
    }

    // ---- loss ---------------------------------------------------------------

    struct CrossEntropyResult {
        Var loss;                  // scalar; 0 when every pixel is ignored
        std::size_t counted = 0;   // non-ignored pixels
        bool all_ignored = false;
    };

    // Mean over non-ignored pixels of -log softmax(logits)[label].
    // logits: (N_t, H, W); labels: (H, W) with values in [0, N_t) or ignore.
    CrossEntropyResult cross_entropy(Var logits, const IntTensor& labels, std::int32_t ignore_value) {
        const Shape& ls = shape(logits);
        if (ls.size() != 3) throw ShapeError("cross_entropy: logits must be (N_t,H,W)");
        const std::size_t nt = ls[0], h = ls[1], w = ls[2];
        if (labels.rank() != 2 || labels.dim(0) != h || labels.dim(1) != w)
            throw ShapeError("cross_entropy: label grid " + shape_str(labels.shape()) +
                             " does not match logits " + shape_str(ls));
        const std::size_t hw = h * w;
        const auto& lv = value(logits);
        double total = 0;
        std::size_t counted = 0;
        for (std::size_t pix = 0; pix < hw; ++pix) {
            const std::int32_t y = labels[pix];
            if (y == ignore_value) continue;
            if (y < 0 || static_cast<std::size_t>(y) >= nt)
                throw ConfigError("label out of range at pixel (" + std::to_string(pix / w) + "," +
                                  std::to_string(pix % w) + "): value " + std::to_string(y) +
                                  " with " + std::to_string(nt) + " classes");
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t cls = 0; cls < nt; ++cls)
                mx = std::max(mx, static_cast<double>(lv[cls * hw + pix]));
            double sum = 0;
            for (std::size_t cls = 0; cls < nt; ++cls)
                sum += std::exp(static_cast<double>(lv[cls * hw + pix]) - mx);
            total += std::log(sum) + mx - static_cast<double>(lv[static_cast<std::size_t>(y) * hw + pix]);
            ++counted;
        }
        CrossEntropyResult res;
        res.counted = counted;
        res.all_ignored = counted == 0;
        if (counted == 0) {
            res.loss = scalar(T(0));
            return res;
        }
        TensorT<T> out(Shape{}, std::vector<T>{static_cast<T>(total / static_cast<double>(counted))});
        auto labels_copy = std::make_shared<IntTensor>(labels);
        res.loss = push(std::move(out), [this, logits, labels_copy, ignore_value, nt, h, w, hw, counted](const TensorT<T>& g) {
            const auto& lv2 = value(logits);
            TensorT<T> gl(shape(logits));
            const T scale_g = g[0] / static_cast<T>(counted);
            std::vector<double> probs(nt);
            for (std::size_t pix = 0; pix < hw; ++pix) {
                const std::int32_t y = (*labels_copy)[pix];
                if (y == ignore_value) continue;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t cls = 0; cls < nt; ++cls)
                    mx = std::max(mx, static_cast<double>(lv2[cls * hw + pix]));
                double sum = 0;
                for (std::size_t cls = 0; cls < nt; ++cls) {
                    probs[cls] = std::exp(static_cast<double>(lv2[cls * hw + pix]) - mx);
                    sum += probs[cls];
                }
                for (std::size_t cls = 0; cls < nt; ++cls) {
                    double p = probs[cls] / sum;
                    if (cls == static_cast<std::size_t>(y)) p -= 1.0;
                    gl[cls * hw + pix] = static_cast<T>(static_cast<double>(scale_g) * p);
                }
            }
            accumulate(logits, gl);
        }, {logits});
        return res;
    }

    // ---- reductions ---------------------------------------------------------

    Var mean_all(Var x) {
        const auto& xv = value(x);
        double acc = 0;
        for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]);
        const std::size_t n = xv.size();
        TensorT<T> out(Shape{}, std::vector<T>{static_cast<T>(acc / static_cast<double>(n))});
        return push(std::move(out), [this, x, n](const TensorT<T>& g) {
            TensorT<T> gx(shape(x), g[0] / static_cast<T>(n));
            accumulate(x, gx);
        }, {x});
    }

    Var sum_all(Var x) {
        const auto& xv = value(x);
        double acc = 0;
        for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]);
        TensorT<T> out(Shape{}, std::vector<T>{static_cast<T>(acc)});
        return push(std::move(out), [this, x](const TensorT<T>& g) {
            TensorT<T> gx(shape(x), g[0]);
            accumulate(x, gx);
        }, {x});
    }

    // ---- backward -----------------------------------------------------------

    void backward(Var loss) {
        if (value(loss).size() != 1) throw ShapeError("backward: output must be a scalar");
        for (auto& n : nodes_) n.grad = TensorT<T>();
        nodes_[loss.idx].grad = TensorT<T>(value(loss).shape(), T(1));
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            auto& n = nodes_[i];
            if (n.grad.empty() || !n.back) continue;
            n.back(n.grad);
        }
    }

    void accumulate(Var v, const TensorT<T>& g) {
        if (!v.valid()) return;
        auto& dst = nodes_[v.idx].grad;
        if (dst.empty()) {
            dst = g;
            return;
        }
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }

private:
    using ResizeEntry = std::tuple<std::size_t, std::size_t, double>; // lo, hi, frac
    using ResizeTable = std::pair<std::vector<ResizeEntry>, std::vector<ResizeEntry>>;

    static std::vector<ResizeEntry> make_resize_table(std::size_t in, std::size_t out) {
        std::vector<ResizeEntry> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
            src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
            const auto lo = static_cast<std::size_t>(std::floor(src));
            const std::size_t hi = std::min(lo + 1, in - 1);
            t[i] = {lo, hi, src - static_cast<double>(lo)};
        }
        return t;
    }

    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        std::function<void(const TensorT<T>&)> back;
    };

    Var push(TensorT<T> v, std::function<void(const TensorT<T>&)> back, std::vector<Var> = {}) {
        nodes_.push_back(Node{std::move(v), TensorT<T>(), std::move(back)});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void require_same_shape(Var a, Var b, const char* op) const {
        if (!value(a).same_shape(value(b)))
            throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    }

    std::vector<Node> nodes_;
    std::map<std::string, Var> param_index_;
};

} // namespace rskt
