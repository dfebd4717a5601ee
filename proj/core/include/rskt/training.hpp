#pragma once

#include "rskt/decoder.hpp"

#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace rskt {

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 8;
    std::size_t max_iters = 200;
    std::uint64_t seed = 0;
    Trainability clip_mode = Trainability::Attention; // trainable CLIP + frozen DINO
    Trainability dino_mode = Trainability::Frozen;    // won the finetuning ablation

    void validate() const {
        if (lr <= 0 && lr != 0) throw ConfigError("train.lr must be >= 0");
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    }
};

inline Trainability trainability_from_string(const std::string& s) {
    if (s == "frozen") return Trainability::Frozen;
    if (s == "attention") return Trainability::Attention;
    if (s == "full") return Trainability::Full;
    throw ConfigError("unknown finetuning mode: " + s + " (expected frozen|attention|full)");
}

inline std::string to_string(Trainability t) {
    switch (t) {
        case Trainability::Frozen: return "frozen";
        case Trainability::Attention: return "attention";
        case Trainability::Full: return "full";
    }
    return "?";
}

// ---- loss -----------------------------------------------------------------

struct CeLoss {
    double value = 0;
    std::size_t counted = 0;
    bool all_ignored = false;
};

template <typename T>
CeLoss cross_entropy_loss(const TensorT<T>& logits, const IntTensor& mask, std::int32_t ignore_value) {
    Tape<T> tp;
    auto res = tp.cross_entropy(tp.constant(logits), mask, ignore_value);
    return CeLoss{static_cast<double>(tp.value(res.loss)[0]), res.counted, res.all_ignored};
}

// ---- finetuning groups ------------------------------------------------------

// Every model parameter belongs to exactly one group. frozen: nothing in the
// encoder trains; attention: only the tagged attention-projection tensors
// train; full: everything trains. Non-encoder parameters always train.
struct ParamGroup {
    std::string name;
    std::vector<std::string> tensors;
    bool trainable = true;
};

template <typename T>
std::vector<ParamGroup> build_param_groups(const ParamStore<T>& store, Trainability clip_mode,
                                           Trainability dino_mode) {
    std::map<std::string, Trainability> encoder_modes = {
        {"clip", clip_mode}, {"dino", dino_mode}, {"rclip", Trainability::Frozen}};
    std::map<std::string, ParamGroup> groups;
    auto put = [&](const std::string& gname, const std::string& tensor, bool trainable) {
        auto& g = groups[gname];
        g.name = gname;
        g.trainable = trainable;
        g.tensors.push_back(tensor);
    };
    for (const auto& [name, entry] : store) {
        const std::string group = ParamStore<T>::group_of(name);
        auto mode_it = encoder_modes.find(group);
        if (mode_it == encoder_modes.end()) {
            put(group, name, true);
            continue;
        }
        switch (mode_it->second) {
            case Trainability::Frozen: put(group, name, false); break;
            case Trainability::Full: put(group, name, true); break;
            case Trainability::Attention:
                if (entry.attention_tag)
                    put(group + ".attention", name, true);
                else
                    put(group + ".frozen", name, false);
                break;
        }
    }
    std::vector<ParamGroup> out;
    for (auto& [k, g] : groups) out.push_back(std::move(g));
    return out;
}

struct ParamCounts {
    std::uint64_t total = 0;
    std::uint64_t trainable = 0;
};

template <typename T>
ParamCounts count_params(const ParamStore<T>& store, const std::vector<ParamGroup>& groups) {
    ParamCounts c;
    for (const auto& g : groups)
        for (const auto& name : g.tensors) {
            const std::uint64_t n = store.value(name).size();
            c.total += n;
            if (g.trainable) c.trainable += n;
        }
    return c;
}

inline std::set<std::string> trainable_names(const std::vector<ParamGroup>& groups) {
    std::set<std::string> out;
    for (const auto& g : groups)
        if (g.trainable) out.insert(g.tensors.begin(), g.tensors.end());
    return out;
}

// ---- optimizer ---------------------------------------------------------------

// Adaptive-moment update with decoupled weight decay. The decay term is
// scaled by lr, so lr = 0 leaves parameters bit-identical.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& store, const std::map<std::string, TensorT<T>>& grads,
              const std::set<std::string>& trainable) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (const auto& name : trainable) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            auto& p = store.value(name);
            const auto& g = git->second;
            auto& m = state(m_, name, p.shape());
            auto& v = state(v_, name, p.shape());
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = b1_ * static_cast<double>(m[i]) + (1.0 - b1_) * gi;
                const double vi = b2_ * static_cast<double>(v[i]) + (1.0 - b2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                const double upd = mhat / (std::sqrt(vhat) + eps_) + wd_ * static_cast<double>(p[i]);
                p[i] = static_cast<T>(static_cast<double>(p[i]) - lr_ * upd);
            }
        }
    }

private:
    TensorT<T>& state(std::map<std::string, TensorT<T>>& m, const std::string& name, const Shape& s) {
        auto it = m.find(name);
        if (it == m.end()) it = m.emplace(name, TensorT<T>(s)).first;
        return it->second;
    }

    double lr_, wd_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, TensorT<T>> m_, v_;
};

// ---- training loop -------------------------------------------------------------

struct TrainResult {
    std::vector<double> loss_history;
};

// Seeded, deterministic iteration order: reshuffled epochs of sample indices.
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
        : n_(dataset_size), batch_(std::min(batch_size, dataset_size)), rng_(seed) {
        if (dataset_size == 0) throw ConfigError("training dataset is empty");
        refill();
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        out.reserve(batch_);
        while (out.size() < batch_) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        rng_.shuffle(order_.begin(), order_.end());
        pos_ = 0;
    }

    std::size_t n_, batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

// One optimization run. Per step: forward every batch sample on one tape,
// mean the losses, backward, AdamW on the trainable groups. Aborts with a
// NumericError naming the step if the loss stops being finite. The loss CSV
// stream, when given, receives "step,loss" lines with full precision.
template <typename T>
TrainResult train(RsktSeg<T>& model, const std::vector<ImageSample>& samples, const ClassVocabulary& vocab,
                  const TrainConfig& cfg, std::ostream* loss_csv = nullptr) {
    cfg.validate();
    if (samples.empty()) throw ConfigError("training dataset is empty");
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (!samples[i].label) throw ConfigError("training sample " + std::to_string(i) + " has no label mask");

    const TextEmbedding<T> text = model.embed_text(vocab);
    const auto groups = build_param_groups(model.params(), cfg.clip_mode, cfg.dino_mode);
    const auto trainable = trainable_names(groups);
    AdamW<T> opt(cfg.lr, cfg.weight_decay);
    BatchSampler sampler(samples.size(), cfg.batch_size, cfg.seed);

    if (loss_csv) *loss_csv << "step,loss\n";
    TrainResult result;
    for (std::size_t step = 0; step < cfg.max_iters; ++step) {
        Tape<T> tp;
        const auto batch = sampler.next();
        Var total{};
        for (std::size_t bi : batch) {
            const auto& s = samples[bi];
            Var logits = model.forward(tp, s.image.template cast<T>(), text);
            auto ce = tp.cross_entropy(logits, *s.label, s.ignore_value);
            total = total.valid() ? tp.add(total, ce.loss) : ce.loss;
        }
        Var loss = tp.scale(total, T(1) / static_cast<T>(batch.size()));
        const double loss_value = static_cast<double>(tp.value(loss)[0]);
        if (!std::isfinite(loss_value))
            throw NumericError("non-finite training loss at step " + std::to_string(step));
        tp.backward(loss);
        opt.step(model.params(), tp.param_grads(), trainable);

        result.loss_history.push_back(loss_value);
        if (loss_csv) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", step, loss_value);
            *loss_csv << buf;
        }
    }
    return result;
}

// ---- gradient verification ------------------------------------------------------

struct GradCheckReport {
    std::size_t coords = 0;
    double max_rel_err = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    bool empty() const { return coords == 0; }
};

// Central finite differences against analytic gradients on a seeded
// coordinate sample. Every parameter contributes at least one coordinate;
// extra coordinates are drawn until min_coords is reached. Use double
// precision stores; the comparison floor keeps near-zero gradients from
// dominating the relative error.
template <typename LossFn>
GradCheckReport finite_difference_check(ParamStore<double>& store,
                                        const std::map<std::string, TensorD>& analytic, LossFn&& loss_fn,
                                        std::size_t min_coords, double step, std::uint64_t seed) {
    GradCheckReport report;
    std::vector<std::pair<std::string, std::size_t>> coords;
    Rng rng(seed);
    std::vector<std::string> names;
    for (const auto& [name, entry] : store) {
        if (entry.value.size() == 0) continue;
        names.push_back(name);
        coords.emplace_back(name, rng.index(entry.value.size()));
    }
    while (coords.size() < min_coords && !names.empty()) {
        const std::string& name = names[rng.index(names.size())];
        coords.emplace_back(name, rng.index(store.value(name).size()));
    }

    for (const auto& [name, idx] : coords) {
        double& slot = store.value(name)[idx];
        const double saved = slot;
        slot = saved + step;
        const double lp = loss_fn();
        slot = saved - step;
        const double lm = loss_fn();
        slot = saved;
        const double fd = (lp - lm) / (2.0 * step);
        const auto ait = analytic.find(name);
        const double an = ait == analytic.end() ? 0.0 : ait->second[idx];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_param = name;
            report.worst_index = idx;
        }
        ++report.coords;
    }
    return report;
}

// Full-pipeline gradient check on one labelled sample.
inline GradCheckReport gradient_check(RsktSeg<double>& model, const ImageSample& sample,
                                      const ClassVocabulary& vocab, std::size_t min_coords = 50,
                                      double step = 1e-5, std::uint64_t seed = 1234) {
    if (!sample.label) throw ConfigError("gradient_check needs a labelled sample");
    const TextEmbedding<double> text = model.embed_text(vocab);
    const TensorD image = sample.image.cast<double>();

    auto loss_fn = [&]() {
        Tape<double> tp;
        Var logits = model.forward(tp, image, text);
        auto ce = tp.cross_entropy(logits, *sample.label, sample.ignore_value);
        return static_cast<double>(tp.value(ce.loss)[0]);
    };

    Tape<double> tp;
    Var logits = model.forward(tp, image, text);
    auto ce = tp.cross_entropy(logits, *sample.label, sample.ignore_value);
    tp.backward(ce.loss);
    const auto grads = tp.param_grads();

    return finite_difference_check(model.params(), grads, loss_fn, min_coords, step, seed);
}

} // namespace rskt
