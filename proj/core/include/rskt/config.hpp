#pragma once

#include "rskt/decoder.hpp"
#include "rskt/training.hpp"

#include <map>
#include <string>
#include <vector>

namespace rskt {

enum class Precision { F32, F64 };

inline Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("unknown precision: " + s + " (expected f32|f64)");
}

inline std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

// Flat key-value run configuration. Sections mirror the typed configs:
// model.*, fusion.*, decoder.*, train.*, data.*. Unknown keys are rejected.
// Precedence (lowest to highest): built-in defaults, config file, RSKT_SEED
// environment variable, --set overrides.
struct RunConfig {
    ModelConfig model;
    FusionConfig fusion;
    DecoderConfig decoder;
    TrainConfig train;
    Precision precision = Precision::F32;
    std::string data_manifest;

    // Applies "key = value"; throws ConfigError with the key named otherwise.
    void set(const std::string& key, const std::string& value);

    // Parses a config file (key = value lines, '#' comments).
    void load_file(const std::string& path);

    // Applies the RSKT_SEED override when present in the environment.
    void apply_env();

    // Canonical dump of every resolved key, suitable for logging and replay.
    std::string resolved() const;

    void validate() const;
};

} // namespace rskt
