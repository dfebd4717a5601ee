#include "rskt/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rskt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        const long long x = std::stoll(v);
        if (x < 0) throw std::out_of_range("negative");
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a non-negative integer, got \"" + v + "\"");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        return static_cast<std::uint64_t>(std::stoull(v));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected an unsigned integer, got \"" + v + "\"");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got \"" + v + "\"");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config key " + key + ": expected a boolean, got \"" + v + "\"");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_size(key, item));
    }
    if (out.empty()) throw ConfigError("config key " + key + ": expected a comma-separated list, got \"" + v + "\"");
    return out;
}

std::vector<std::string> parse_string_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, '|'))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "|" : "") + v[i];
    return out;
}

} // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    // model.*
    if (key == "model.input_size") model.input_size = parse_size(key, value);
    else if (key == "model.patch_size") model.patch_size = parse_size(key, value);
    else if (key == "model.embed_dim") model.embed_dim = parse_size(key, value);
    else if (key == "model.encoder_layers") model.encoder_layers = parse_size(key, value);
    else if (key == "model.clip_seed") model.clip_seed = parse_u64(key, value);
    else if (key == "model.dino_seed") model.dino_seed = parse_u64(key, value);
    else if (key == "model.rclip_seed") model.rclip_seed = parse_u64(key, value);
    else if (key == "model.text_seed") model.text_seed = parse_u64(key, value);
    else if (key == "model.init_seed") model.init_seed = parse_u64(key, value);
    else if (key == "model.fusion_strategy") model.strategy = fuse_strategy_from_string(value);
    else if (key == "model.templates") {
        model.templates = parse_string_list(value);
        if (model.templates.empty()) throw ConfigError("config key model.templates: empty template list");
    }
    else if (key == "model.precision") precision = precision_from_string(value);
    // fusion.*
    else if (key == "fusion.num_layers") fusion.num_layers = parse_size(key, value);
    else if (key == "fusion.d_c") fusion.d_c = parse_size(key, value);
    else if (key == "fusion.heads") fusion.heads = parse_size(key, value);
    else if (key == "fusion.r1") fusion.r1 = parse_size(key, value);
    else if (key == "fusion.r2") fusion.r2 = parse_size(key, value);
    else if (key == "fusion.positional_embedding") fusion.positional_embedding = parse_bool(key, value);
    else if (key == "fusion.clip_guidance_layer") fusion.clip_guidance_layer = parse_size(key, value);
    else if (key == "fusion.dino_guidance_layer") fusion.dino_guidance_layer = parse_size(key, value);
    // decoder.*
    else if (key == "decoder.num_layers") decoder.num_layers = parse_size(key, value);
    else if (key == "decoder.clip_layers") decoder.clip_layers = parse_size_list(key, value);
    else if (key == "decoder.dino_layers") decoder.dino_layers = parse_size_list(key, value);
    else if (key == "decoder.rclip_layers") decoder.rclip_layers = parse_size_list(key, value);
    // train.*
    else if (key == "train.lr") train.lr = parse_double(key, value);
    else if (key == "train.weight_decay") train.weight_decay = parse_double(key, value);
    else if (key == "train.batch_size") train.batch_size = parse_size(key, value);
    else if (key == "train.max_iters") train.max_iters = parse_size(key, value);
    else if (key == "train.seed") train.seed = parse_u64(key, value);
    else if (key == "train.clip_mode") train.clip_mode = trainability_from_string(value);
    else if (key == "train.dino_mode") train.dino_mode = trainability_from_string(value);
    // data.*
    else if (key == "data.manifest") data_manifest = value;
    else throw ConfigError("unknown config key: " + key);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config " + path + ":" + std::to_string(lineno) + ": expected key = value");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::apply_env() {
    if (const char* s = std::getenv("RSKT_SEED")) train.seed = parse_u64("RSKT_SEED", s);
}

std::string RunConfig::resolved() const {
    std::ostringstream os;
    os << "model.input_size = " << model.input_size << "\n";
    os << "model.patch_size = " << model.patch_size << "\n";
    os << "model.embed_dim = " << model.embed_dim << "\n";
    os << "model.encoder_layers = " << model.encoder_layers << "\n";
    os << "model.clip_seed = " << model.clip_seed << "\n";
    os << "model.dino_seed = " << model.dino_seed << "\n";
    os << "model.rclip_seed = " << model.rclip_seed << "\n";
    os << "model.text_seed = " << model.text_seed << "\n";
    os << "model.init_seed = " << model.init_seed << "\n";
    os << "model.fusion_strategy = " << to_string(model.strategy) << "\n";
    os << "model.templates = " << join(model.templates) << "\n";
    os << "model.precision = " << to_string(precision) << "\n";
    os << "fusion.num_layers = " << fusion.num_layers << "\n";
    os << "fusion.d_c = " << fusion.d_c << "\n";
    os << "fusion.heads = " << fusion.heads << "\n";
    os << "fusion.r1 = " << fusion.r1 << "\n";
    os << "fusion.r2 = " << fusion.r2 << "\n";
    os << "fusion.positional_embedding = " << (fusion.positional_embedding ? "true" : "false") << "\n";
    os << "fusion.clip_guidance_layer = " << fusion.clip_guidance_layer << "\n";
    os << "fusion.dino_guidance_layer = " << fusion.dino_guidance_layer << "\n";
    os << "decoder.num_layers = " << decoder.num_layers << "\n";
    os << "decoder.clip_layers = " << join(decoder.clip_layers) << "\n";
    os << "decoder.dino_layers = " << join(decoder.dino_layers) << "\n";
    os << "decoder.rclip_layers = " << join(decoder.rclip_layers) << "\n";
    os << "train.lr = " << train.lr << "\n";
    os << "train.weight_decay = " << train.weight_decay << "\n";
    os << "train.batch_size = " << train.batch_size << "\n";
    os << "train.max_iters = " << train.max_iters << "\n";
    os << "train.seed = " << train.seed << "\n";
    os << "train.clip_mode = " << to_string(train.clip_mode) << "\n";
    os << "train.dino_mode = " << to_string(train.dino_mode) << "\n";
    os << "data.manifest = " << data_manifest << "\n";
    return os.str();
}

void RunConfig::validate() const {
    const std::size_t hf = model.grid();
    fusion.validate(hf, hf);
    decoder.validate();
    train.validate();
}

} // namespace rskt
