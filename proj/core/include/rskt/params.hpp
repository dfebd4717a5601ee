#pragma once

#include "rskt/random.hpp"
#include "rskt/tensor.hpp"
#include "rskt/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace rskt {

// Named model parameters. Names are hierarchical ("clip.block3.attn_w") and
// the leading segment is the parameter group used by the finetuning modes.
// std::map keeps iteration deterministic.
template <typename T>
class ParamStore {
public:
    struct Entry {
        TensorT<T> value;
        bool attention_tag = false; // q/k/v/o-style projection inside a mixing block
    };

    TensorT<T>& add(const std::string& name, TensorT<T> value, bool attention_tag = false) {
        auto [it, inserted] = params_.emplace(name, Entry{std::move(value), attention_tag});
        if (!inserted) throw ConfigError("duplicate parameter name: " + name);
        return it->second.value;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Entry& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Entry& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    TensorT<T>& value(const std::string& name) { return at(name).value; }
    const TensorT<T>& value(const std::string& name) const { return at(name).value; }

    std::size_t count() const { return params_.size(); }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    static std::string group_of(const std::string& name) {
        const auto pos = name.find('.');
        return pos == std::string::npos ? name : name.substr(0, pos);
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, e] : params_)
            out.add(name, e.value.template cast<U>(), e.attention_tag);
        return out;
    }

private:
    std::map<std::string, Entry> params_;
};

// Checkpoint layout: <dir>/manifest.json plus one tensor file per parameter.
// The manifest maps name -> {file, shape, trainable, attention_tag}.
template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& dir,
                     const std::map<std::string, bool>* trainable = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "rskt-checkpoint";
    manifest["version"] = 1;
    nlohmann::json params = nlohmann::json::array();
    std::size_t idx = 0;
    for (const auto& [name, e] : store) {
        const std::string file = "p" + std::to_string(idx++) + ".rskt";
        save_tensor(e.value, (fs::path(dir) / file).string());
        nlohmann::json p;
        p["name"] = name;
        p["file"] = file;
        p["shape"] = e.value.shape();
        p["attention_tag"] = e.attention_tag;
        p["trainable"] = trainable && trainable->count(name) ? trainable->at(name) : true;
        params.push_back(std::move(p));
    }
    manifest["params"] = std::move(params);
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write checkpoint manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

// Loads checkpoint values into an existing store; shapes must match.
template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open checkpoint manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    for (const auto& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const std::string file = p.at("file").get<std::string>();
        TensorT<T> t = load_tensor_as<T>((fs::path(dir) / file).string());
        auto& entry = store.at(name);
        if (!entry.value.same_shape(t))
            throw IoError("checkpoint shape mismatch for " + name + ": expected " +
                          shape_str(entry.value.shape()) + ", file has " + shape_str(t.shape()));
        entry.value = std::move(t);
    }
}

// Seeded initializers.
template <typename T>
TensorT<T> normal_init(Rng& rng, Shape shape, double stddev) {
    TensorT<T> t(std::move(shape));
    rng.fill_normal(t, 0.0, stddev);
    return t;
}

template <typename T>
TensorT<T> fan_in_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    return normal_init<T>(rng, Shape{fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

} // namespace rskt
