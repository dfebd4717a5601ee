#include "rskt/metrics.hpp"

#include "rskt/vocab.hpp"

#include <set>

namespace rskt {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::fp(std::size_t i) const {
    std::uint64_t col = 0;
    for (std::size_t r = 0; r < n_; ++r) col += at(r, i);
    return col - tp(i);
}

std::uint64_t ConfusionMatrix::fn(std::size_t i) const {
    std::uint64_t row = 0;
    for (std::size_t c = 0; c < n_; ++c) row += at(i, c);
    return row - tp(i);
}

void ConfusionMatrix::accumulate(const IntTensor& pred, const IntTensor& gt, std::int32_t ignore_value) {
    if (!pred.same_shape(gt))
        throw ShapeError("confusion accumulate: prediction " + shape_str(pred.shape()) +
                         " vs ground truth " + shape_str(gt.shape()));
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const std::int32_t g = gt[i];
        if (g == ignore_value) continue;
        if (g < 0 || static_cast<std::size_t>(g) >= n_)
            throw ConfigError("ground-truth value " + std::to_string(g) + " out of range at flat pixel " +
                              std::to_string(i) + " (classes: " + std::to_string(n_) + ")");
        const std::int32_t p = pred[i];
        if (p < 0 || static_cast<std::size_t>(p) >= n_)
            throw ConfigError("prediction value " + std::to_string(p) + " out of range at flat pixel " +
                              std::to_string(i) + " (classes: " + std::to_string(n_) + ")");
        counts_[static_cast<std::size_t>(g) * n_ + static_cast<std::size_t>(p)] += 1;
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw ShapeError("confusion merge: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::pair<double, std::vector<std::optional<double>>> miou(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> per_class(cm.num_classes());
    double sum = 0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        const std::uint64_t denom = cm.tp(i) + cm.fp(i) + cm.fn(i);
        if (denom == 0) continue;
        const double iou = static_cast<double>(cm.tp(i)) / static_cast<double>(denom);
        per_class[i] = iou;
        sum += iou;
        ++defined;
    }
    return {defined ? sum / static_cast<double>(defined) : 0.0, per_class};
}

std::optional<double> fwiou(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) return std::nullopt;
    double acc = 0;
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        const std::uint64_t gt_count = cm.tp(i) + cm.fn(i);
        if (gt_count == 0) continue;
        const std::uint64_t denom = cm.tp(i) + cm.fp(i) + cm.fn(i);
        const double iou = static_cast<double>(cm.tp(i)) / static_cast<double>(denom);
        acc += (static_cast<double>(gt_count) / static_cast<double>(total)) * iou;
    }
    return acc;
}

std::optional<double> macc(const ConfusionMatrix& cm) {
    double sum = 0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        const std::uint64_t gt_count = cm.tp(i) + cm.fn(i);
        if (gt_count == 0) continue;
        sum += static_cast<double>(cm.tp(i)) / static_cast<double>(gt_count);
        ++defined;
    }
    if (defined == 0) return std::nullopt;
    return sum / static_cast<double>(defined);
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    MetricsReport r;
    auto [mean_iou, per_iou] = miou(cm);
    r.per_class_iou = std::move(per_iou);
    r.miou = mean_iou;
    r.per_class_acc.assign(cm.num_classes(), std::nullopt);
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        const std::uint64_t gt_count = cm.tp(i) + cm.fn(i);
        if (gt_count) r.per_class_acc[i] = static_cast<double>(cm.tp(i)) / static_cast<double>(gt_count);
    }
    const auto fw = fwiou(cm);
    const auto ma = macc(cm);
    r.defined = cm.total() > 0;
    r.fwiou = fw.value_or(0.0);
    r.macc = ma.value_or(0.0);
    return r;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    auto opt_list = [](const std::vector<std::optional<double>>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& x : v)
            if (x)
                a.push_back(*x);
            else
                a.push_back(nullptr);
        return a;
    };
    j["per_class_iou"] = opt_list(per_class_iou);
    j["per_class_acc"] = opt_list(per_class_acc);
    j["miou"] = miou;
    j["fwiou"] = fwiou;
    j["macc"] = macc;
    j["defined"] = defined;
    return j;
}

double aggregate_mean(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("aggregate_mean: empty value list");
    double sum = 0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

std::size_t vocab_overlap(const std::vector<std::string>& train_classes,
                          const std::vector<std::string>& test_classes) {
    std::set<std::string> train;
    for (const auto& c : train_classes) train.insert(normalize_class_name(c));
    std::set<std::string> seen;
    std::size_t overlap = 0;
    for (const auto& c : test_classes) {
        const std::string n = normalize_class_name(c);
        if (train.count(n) && seen.insert(n).second) ++overlap;
    }
    return overlap;
}

} // namespace rskt
