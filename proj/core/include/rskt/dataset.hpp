#pragma once

#include "rskt/image.hpp"

#include <string>
#include <vector>

namespace rskt {

// Declarative dataset description backed by a JSON file:
//   {name, root, classes, ignore_value, split, entries:[{image,label}]}
// root resolves relative to the manifest location; entry paths resolve
// relative to root. Loading validates path existence and (optionally) that
// every label value is a valid class index or the ignore value.
struct DatasetManifest {
    std::string name;
    std::string root;
    std::vector<std::string> classes;
    std::int32_t ignore_value = 255;
    std::string split = "val"; // train | val
    struct Entry {
        std::string image;
        std::string label;
    };
    std::vector<Entry> entries;

    static DatasetManifest load(const std::string& path, bool validate_labels = true);
    void save(const std::string& path) const;

    std::string image_path(std::size_t i) const;
    std::string label_path(std::size_t i) const;

    ImageSample load_sample(std::size_t i) const;
    std::vector<ImageSample> load_all() const;
};

} // namespace rskt
