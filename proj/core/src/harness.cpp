#include "rskt/harness.hpp"

#include <chrono>
#include <cstdio>

namespace rskt {

MetricsReport evaluate(Segmenter& model, const DatasetManifest& manifest,
                       const std::vector<std::string>& templates) {
    if (manifest.entries.empty())
        throw ConfigError("evaluate: dataset " + manifest.name + " is empty");
    ClassVocabulary vocab{manifest.classes, templates};
    vocab.validate();
    ConfusionMatrix cm(manifest.classes.size());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const ImageSample sample = model.preprocess(manifest.load_sample(i));
        if (!sample.label) throw ConfigError("evaluate: entry " + std::to_string(i) + " has no label");
        const IntTensor pred = model.predict(sample, vocab);
        cm.accumulate(pred, *sample.label, manifest.ignore_value);
    }
    return compute_metrics(cm);
}

BenchmarkReport evaluate_many(Segmenter& model, const std::vector<DatasetManifest>& manifests,
                              const std::vector<std::string>& templates) {
    if (manifests.empty()) throw ConfigError("evaluate_many: no datasets given");
    BenchmarkReport report;
    std::vector<double> mious, maccs;
    for (const auto& m : manifests) {
        MetricsReport r = evaluate(model, m, templates);
        mious.push_back(r.miou);
        maccs.push_back(r.macc);
        report.per_dataset.emplace_back(m.name, std::move(r));
    }
    report.m_miou = aggregate_mean(mious);
    report.m_macc = aggregate_mean(maccs);
    return report;
}

nlohmann::json BenchmarkReport::to_json() const {
    nlohmann::json j;
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [name, r] : per_dataset) per[name] = r.to_json();
    j["per_dataset"] = std::move(per);
    j["m_miou"] = m_miou;
    j["m_macc"] = m_macc;
    return j;
}

SpeedReport make_speed_report(const std::vector<std::pair<std::string, double>>& per_dataset_ms) {
    if (per_dataset_ms.empty()) throw ConfigError("speed report: no datasets measured");
    SpeedReport r;
    r.per_dataset_ms = per_dataset_ms;
    std::vector<double> means;
    for (const auto& [_, ms] : per_dataset_ms) means.push_back(ms);
    r.mean_ms = aggregate_mean(means);
    if (r.mean_ms <= 0) throw NumericError("speed report: non-positive mean latency");
    r.fps = 1000.0 / r.mean_ms;
    return r;
}

nlohmann::json SpeedReport::to_json() const {
    nlohmann::json j;
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [name, ms] : per_dataset_ms) per[name] = ms;
    j["per_dataset_ms"] = std::move(per);
    j["mean_ms"] = mean_ms;
    j["fps"] = fps;
    return j;
}

std::string SpeedReport::markdown_row(const std::string& method) const {
    // Column order mirrors the inference-speed table: per-dataset ms, mean, FPS.
    std::string row = "| " + method + " |";
    char buf[32];
    for (const auto& [_, ms] : per_dataset_ms) {
        std::snprintf(buf, sizeof(buf), " %.2f |", ms);
        row += buf;
    }
    std::snprintf(buf, sizeof(buf), " %.2f |", mean_ms);
    row += buf;
    std::snprintf(buf, sizeof(buf), " %.2f |", fps);
    row += buf;
    return row;
}

SpeedReport speed_benchmark(Segmenter& model, const std::vector<DatasetManifest>& manifests,
                            std::size_t warmup, std::size_t iters, const std::function<double()>& now_ms) {
    if (iters < 1) throw ConfigError("speed_benchmark: iters must be >= 1");
    auto clock = now_ms ? now_ms : []() {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now().time_since_epoch()).count();
    };
    std::vector<std::pair<std::string, double>> per_dataset;
    for (const auto& m : manifests) {
        if (m.entries.empty()) throw ConfigError("speed_benchmark: dataset " + m.name + " is empty");
        ClassVocabulary vocab{m.classes, {"a photo of a {}."}};
        // cycle images; discard warmup timings
        double total = 0;
        for (std::size_t it = 0; it < warmup + iters; ++it) {
            const ImageSample sample = model.preprocess(m.load_sample(it % m.entries.size()));
            const double t0 = clock();
            (void)model.predict(sample, vocab);
            const double t1 = clock();
            if (it >= warmup) total += t1 - t0;
        }
        per_dataset.emplace_back(m.name, total / static_cast<double>(iters));
    }
    return make_speed_report(per_dataset);
}

} // namespace rskt
