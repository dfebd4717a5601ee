// Test-side oracles, independent of the implementation paths they check.
#pragma once

#include "rskt/image.hpp"
#include "rskt/random.hpp"
#include "rskt/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace oracle {

// ---- finite differences ------------------------------------------------------

// build(inputs) -> scalar. Central differences at `probes` coordinates per
// input versus the provided analytic gradients.
struct FdResult {
    double max_rel_err = 0;
    std::size_t coords = 0;
};

inline FdResult fd_against(const std::vector<rskt::TensorD>& inputs,
                           const std::vector<rskt::TensorD>& analytic_grads,
                           const std::function<double(const std::vector<rskt::TensorD>&)>& eval,
                           std::size_t probes_per_input = 6, double step = 1e-6, std::uint64_t seed = 99) {
    rskt::Rng rng(seed);
    FdResult res;
    std::vector<rskt::TensorD> work = inputs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const std::size_t n = inputs[t].size();
        if (n == 0) continue;
        for (std::size_t k = 0; k < std::min(probes_per_input, n); ++k) {
            const std::size_t i = (k == 0) ? 0 : rng.index(n);
            const double saved = work[t][i];
            work[t][i] = saved + step;
            const double lp = eval(work);
            work[t][i] = saved - step;
            const double lm = eval(work);
            work[t][i] = saved;
            const double fd = (lp - lm) / (2 * step);
            const double an = analytic_grads[t][i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.coords;
        }
    }
    return res;
}

// ---- brute-force segmentation metrics -----------------------------------------

// Direct pixel-loop computation of TP/FP/FN per class and the three metrics.
// Deliberately never touches rskt::ConfusionMatrix.
struct BruteMetrics {
    std::vector<std::uint64_t> tp, fp, fn;
    std::optional<double> miou, fwiou, macc;
    std::vector<std::optional<double>> per_class_iou;
};

inline BruteMetrics brute_force_metrics(const rskt::IntTensor& pred, const rskt::IntTensor& gt,
                                        std::size_t n, std::int32_t ignore) {
    BruteMetrics m;
    m.tp.assign(n, 0);
    m.fp.assign(n, 0);
    m.fn.assign(n, 0);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] == ignore) continue;
            const bool g = gt[i] == static_cast<std::int32_t>(c);
            const bool p = pred[i] == static_cast<std::int32_t>(c);
            if (g && p) m.tp[c]++;
            if (!g && p) m.fp[c]++;
            if (g && !p) m.fn[c]++;
        }
    }
    m.per_class_iou.assign(n, std::nullopt);
    double iou_sum = 0, acc_sum = 0, fw = 0;
    std::size_t iou_cnt = 0, acc_cnt = 0;
    std::uint64_t total = 0;
    for (std::size_t c = 0; c < n; ++c) total += m.tp[c] + m.fn[c];
    for (std::size_t c = 0; c < n; ++c) {
        const std::uint64_t d = m.tp[c] + m.fp[c] + m.fn[c];
        if (d) {
            const double iou = double(m.tp[c]) / double(d);
            m.per_class_iou[c] = iou;
            iou_sum += iou;
            ++iou_cnt;
            if (m.tp[c] + m.fn[c])
                fw += (double(m.tp[c] + m.fn[c]) / double(total)) * iou;
        }
        if (m.tp[c] + m.fn[c]) {
            acc_sum += double(m.tp[c]) / double(m.tp[c] + m.fn[c]);
            ++acc_cnt;
        }
    }
    if (iou_cnt) m.miou = iou_sum / double(iou_cnt);
    if (total) m.fwiou = fw;
    if (acc_cnt) m.macc = acc_sum / double(acc_cnt);
    return m;
}

// ---- misc fixtures -------------------------------------------------------------

template <typename T>
rskt::TensorT<T> random_tensor(rskt::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    rskt::TensorT<T> t(std::move(shape));
    rskt::Rng rng(seed);
    rng.fill_uniform(t, lo, hi);
    return t;
}

// Independent element-by-element index mapping for a single 90-degree
// counter-clockwise rotation (H,W) -> (W,H): out[i][j] = in[j][W-1-i].
template <typename T>
rskt::TensorT<T> rot90_once_by_indices(const rskt::TensorT<T>& in) {
    const std::size_t h = in.dim(0), w = in.dim(1);
    rskt::TensorT<T> out(rskt::Shape{w, h});
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < h; ++j)
            out.at({i, j}) = in.at({j, w - 1 - i});
    return out;
}

} // namespace oracle
