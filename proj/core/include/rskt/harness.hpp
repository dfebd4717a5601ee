#pragma once

#include "rskt/dataset.hpp"
#include "rskt/metrics.hpp"
#include "rskt/vocab.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace rskt {

// Anything that maps an image plus a test-time vocabulary to a label grid.
// The open-vocabulary contract lives here: the vocabulary always comes from
// the TARGET dataset's class names, never from training labels.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual IntTensor predict(const ImageSample& sample, const ClassVocabulary& vocab) = 0;

    // Geometry adaptation (center-crop to the model grid). Applied to image
    // and label together before predict, so metrics compare matching views.
    virtual ImageSample preprocess(const ImageSample& sample) const { return sample; }
};

// Per image: predict, argmax already applied by the segmenter, accumulate the
// confusion matrix; then the metric set. templates fill the vocabulary next
// to the manifest's class names.
MetricsReport evaluate(Segmenter& model, const DatasetManifest& manifest,
                       const std::vector<std::string>& templates);

// Cross-dataset protocol output: one MetricsReport per dataset plus the
// unweighted means across datasets.
struct BenchmarkReport {
    std::vector<std::pair<std::string, MetricsReport>> per_dataset;
    double m_miou = 0;
    double m_macc = 0;

    nlohmann::json to_json() const;
};

BenchmarkReport evaluate_many(Segmenter& model, const std::vector<DatasetManifest>& manifests,
                              const std::vector<std::string>& templates);

struct SpeedReport {
    std::vector<std::pair<std::string, double>> per_dataset_ms;
    double mean_ms = 0;
    double fps = 0;

    nlohmann::json to_json() const;
    std::string markdown_row(const std::string& method) const;
};

// Pure aggregation over measured per-dataset means; fps = 1000 / mean_ms.
SpeedReport make_speed_report(const std::vector<std::pair<std::string, double>>& per_dataset_ms);

// Wall-clock per-forward milliseconds after `warmup` discarded iterations,
// averaged over `iters` timed ones, per dataset. The clock is injectable for
// tests; it must return milliseconds.
SpeedReport speed_benchmark(Segmenter& model, const std::vector<DatasetManifest>& manifests,
                            std::size_t warmup, std::size_t iters,
                            const std::function<double()>& now_ms = {});

} // namespace rskt
