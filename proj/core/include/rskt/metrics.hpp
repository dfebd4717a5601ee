#pragma once

#include "rskt/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rskt {

// Pixel-count confusion matrix; rows are ground truth, columns predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);

    std::size_t num_classes() const { return n_; }
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }
    std::uint64_t total() const;

    std::uint64_t tp(std::size_t i) const { return at(i, i); }
    std::uint64_t fp(std::size_t i) const; // column sum minus diagonal
    std::uint64_t fn(std::size_t i) const; // row sum minus diagonal

    // counts[gt][pred] += 1 for every pixel whose gt is not ignore_value.
    void accumulate(const IntTensor& pred, const IntTensor& gt, std::int32_t ignore_value);

    // Elementwise addition; merging is associative and commutative.
    void merge(const ConfusionMatrix& other);

private:
    std::size_t n_;
    std::vector<std::uint64_t> counts_;
};

// Per-class and summary metrics. Classes absent from both prediction and
// ground truth have no defined IoU/ACC and are excluded from the means.
struct MetricsReport {
    std::vector<std::optional<double>> per_class_iou;
    std::vector<std::optional<double>> per_class_acc;
    double miou = 0;
    double fwiou = 0;
    double macc = 0;
    bool defined = true; // false when no pixel was evaluated

    nlohmann::json to_json() const;
};

MetricsReport compute_metrics(const ConfusionMatrix& cm);

// IoU_i = TP / (TP + FP + FN); mean skips undefined classes.
std::pair<double, std::vector<std::optional<double>>> miou(const ConfusionMatrix& cm);

// Sum_i freq_i * IoU_i with freq_i = (TP_i + FN_i) / total.
std::optional<double> fwiou(const ConfusionMatrix& cm);

// Mean over gt-present classes of TP / (TP + FN).
std::optional<double> macc(const ConfusionMatrix& cm);

// Unweighted arithmetic mean; the table aggregation primitive.
double aggregate_mean(const std::vector<double>& values);

// |set(train) ∩ set(test)| after name normalization.
std::size_t vocab_overlap(const std::vector<std::string>& train_classes,
                          const std::vector<std::string>& test_classes);

} // namespace rskt
