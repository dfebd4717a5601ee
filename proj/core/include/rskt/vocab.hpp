#pragma once

#include "rskt/common.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace rskt {

// Class names plus prompt templates. Each template contains exactly one "{}"
// placeholder that is filled with a class name.
struct ClassVocabulary {
    std::vector<std::string> names;
    std::vector<std::string> templates;

    std::size_t num_classes() const { return names.size(); }
    std::size_t num_templates() const { return templates.size(); }

    void validate() const {
        if (names.empty()) throw ConfigError("vocabulary has no class names");
        if (templates.empty()) throw ConfigError("vocabulary has no prompt templates");
        std::set<std::string> seen;
        for (const auto& n : names)
            if (!seen.insert(n).second) throw ConfigError("duplicate class name: " + n);
        for (const auto& t : templates) {
            std::size_t count = 0, pos = 0;
            while ((pos = t.find("{}", pos)) != std::string::npos) {
                ++count;
                pos += 2;
            }
            if (count != 1)
                throw ConfigError("template must contain exactly one {} placeholder: \"" + t + "\"");
        }
    }

    std::string prompt(std::size_t class_idx, std::size_t template_idx) const {
        const std::string& t = templates.at(template_idx);
        const std::size_t pos = t.find("{}");
        return t.substr(0, pos) + names.at(class_idx) + t.substr(pos + 2);
    }
};

inline std::string normalize_class_name(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace rskt
