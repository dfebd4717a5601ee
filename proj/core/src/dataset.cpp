#include "rskt/dataset.hpp"

#include "rskt/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

namespace rskt {

namespace fs = std::filesystem;

DatasetManifest DatasetManifest::load(const std::string& path, bool validate_labels) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open dataset manifest: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + path + ": " + e.what());
    }

    DatasetManifest m;
    try {
        m.name = j.at("name").get<std::string>();
        m.root = j.at("root").get<std::string>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.ignore_value = j.at("ignore_value").get<std::int32_t>();
        m.split = j.at("split").get<std::string>();
        for (const auto& e : j.at("entries"))
            m.entries.push_back({e.at("image").get<std::string>(), e.at("label").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest " + path + " missing required field: " + e.what());
    }
    if (m.classes.empty()) throw ConfigError("manifest " + m.name + " declares no classes");
    if (m.split != "train" && m.split != "val")
        throw ConfigError("manifest " + m.name + " has invalid split \"" + m.split + "\"");

    // root relative to the manifest's own directory
    fs::path root(m.root);
    if (root.is_relative()) root = fs::path(path).parent_path() / root;
    m.root = root.lexically_normal().string();

    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto img = m.image_path(i);
        const auto lbl = m.label_path(i);
        if (!fs::exists(img)) throw IoError("manifest " + m.name + ": missing image " + img);
        if (!fs::exists(lbl)) throw IoError("manifest " + m.name + ": missing label " + lbl);
        if (validate_labels) {
            const IntTensor labels = label_from_png(lbl);
            for (std::size_t p = 0; p < labels.size(); ++p) {
                const std::int32_t v = labels[p];
                if (v != m.ignore_value && (v < 0 || static_cast<std::size_t>(v) >= m.classes.size()))
                    throw ConfigError("manifest " + m.name + ": label " + lbl + " has value " +
                                      std::to_string(v) + " at flat pixel " + std::to_string(p) +
                                      " outside [0," + std::to_string(m.classes.size()) + ") and not ignore");
            }
        }
    }
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["name"] = name;
    j["root"] = root;
    j["classes"] = classes;
    j["ignore_value"] = ignore_value;
    j["split"] = split;
    nlohmann::json es = nlohmann::json::array();
    for (const auto& e : entries) es.push_back({{"image", e.image}, {"label", e.label}});
    j["entries"] = std::move(es);
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

std::string DatasetManifest::image_path(std::size_t i) const {
    return (fs::path(root) / entries.at(i).image).string();
}

std::string DatasetManifest::label_path(std::size_t i) const {
    return (fs::path(root) / entries.at(i).label).string();
}

ImageSample DatasetManifest::load_sample(std::size_t i) const {
    ImageSample s;
    s.image = image_from_png(image_path(i));
    s.label = label_from_png(label_path(i));
    s.ignore_value = ignore_value;
    if (s.label->dim(0) != s.image.dim(0) || s.label->dim(1) != s.image.dim(1))
        throw ConfigError("manifest " + name + ": image/label size mismatch at entry " + std::to_string(i));
    return s;
}

std::vector<ImageSample> DatasetManifest::load_all() const {
    std::vector<ImageSample> out;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) out.push_back(load_sample(i));
    return out;
}

} // namespace rskt
