#pragma once

#include "rskt/autodiff.hpp"
#include "rskt/params.hpp"
#include "rskt/tensor_io.hpp"
#include "rskt/vocab.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace rskt {

enum class EncoderKind { ToyClipVisual, ToyDino, ToyRemoteClip, ToyText, External };
enum class Trainability { Frozen, Attention, Full };

inline std::string to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::ToyClipVisual: return "toy-clip-visual";
        case EncoderKind::ToyDino: return "toy-dino";
        case EncoderKind::ToyRemoteClip: return "toy-remoteclip";
        case EncoderKind::ToyText: return "toy-text";
        case EncoderKind::External: return "external";
    }
    return "?";
}

// Toy stand-ins for the pretrained backbones: a seeded patch embedding
// followed by per-token mixing blocks. No positional embedding, so a
// spatially constant image produces identical feature vectors at every
// grid cell. Identical specs give bit-identical parameters.
struct EncoderSpec {
    EncoderKind kind = EncoderKind::ToyClipVisual;
    std::size_t patch_size = 16;
    std::size_t embed_dim = 64; // C_f
    std::size_t num_layers = 8;
    std::uint64_t seed = 1;
    Trainability trainability = Trainability::Frozen;
    std::string external_dir; // kind == External: directory of tensor files
};

template <typename T>
struct EncoderOutput {
    TensorT<T> final;                               // H_f x W_f x C_f
    std::map<std::size_t, TensorT<T>> intermediates; // after every block
};

template <typename T>
struct EncoderOutputVars {
    Var final;
    std::map<std::size_t, Var> intermediates;
};

// Parameter layout under `prefix` (e.g. "clip."):
//   patch_w (p*p*3, C), patch_b (C)
//   block{i}.attn_w (C, C)   <- tagged as attention projection
//   block{i}.mlp_w (C, C), block{i}.mlp_b (C)
template <typename T>
void register_encoder_params(ParamStore<T>& store, const std::string& prefix, const EncoderSpec& spec) {
    Rng rng(spec.seed);
    const std::size_t c = spec.embed_dim;
    const std::size_t patch_in = spec.patch_size * spec.patch_size * 3;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
    store.add(prefix + "patch_w", normal_init<T>(rng, {patch_in, c}, 1.0 / std::sqrt(static_cast<double>(patch_in))));
    store.add(prefix + "patch_b", normal_init<T>(rng, {c}, 0.02));
    for (std::size_t i = 0; i < spec.num_layers; ++i) {
        const std::string bp = prefix + "block" + std::to_string(i) + ".";
        store.add(bp + "attn_w", normal_init<T>(rng, {c, c}, 0.5 * inv_sqrt_c), /*attention_tag=*/true);
        store.add(bp + "mlp_w", normal_init<T>(rng, {c, c}, 0.5 * inv_sqrt_c));
        store.add(bp + "mlp_b", normal_init<T>(rng, {c}, 0.02));
    }
}

// Runs the toy encoder on the tape. image: (H, W, 3) Var.
template <typename T>
EncoderOutputVars<T> encode_image_vars(Tape<T>& tp, const ParamStore<T>& store, const std::string& prefix,
                                       const EncoderSpec& spec, Var image) {
    const Shape& is = tp.shape(image);
    if (is.size() != 3 || is[2] != 3) throw ShapeError("encode_image expects (H,W,3), got " + shape_str(is));
    const std::size_t h = is[0], w = is[1], p = spec.patch_size;
    if (h % p || w % p)
        throw ShapeError("image " + shape_str(is) + " not divisible by patch size " + std::to_string(p));
    const std::size_t hf = h / p, wf = w / p;

    auto pv = [&](const std::string& name) { return tp.param(prefix + name, store.value(prefix + name)); };

    Var x = tp.reshape(image, {h, w, 1, 3});
    x = tp.space_to_depth(x, p);                       // (hf, wf, 1, p*p*3)
    x = tp.linear(x, pv("patch_w"), pv("patch_b"));    // (hf, wf, 1, C)

    EncoderOutputVars<T> out;
    for (std::size_t i = 0; i < spec.num_layers; ++i) {
        const std::string bp = "block" + std::to_string(i) + ".";
        Var a = tp.linear(x, pv(bp + "attn_w"));
        x = tp.add(x, a);
        Var m = tp.gelu(tp.linear(x, pv(bp + "mlp_w"), pv(bp + "mlp_b")));
        x = tp.add(x, m);
        out.intermediates[i] = tp.reshape(x, {hf, wf, spec.embed_dim});
    }
    out.final = tp.reshape(x, {hf, wf, spec.embed_dim});
    return out;
}

// External adapter: precomputed features from tensor files in a directory:
// final.rskt plus layer_<i>.rskt per intermediate.
template <typename T>
EncoderOutput<T> load_encoder_output(const std::string& dir) {
    namespace fs = std::filesystem;
    EncoderOutput<T> out;
    const auto final_path = fs::path(dir) / "final.rskt";
    out.final = load_tensor_as<T>(final_path.string());
    if (out.final.rank() != 3) throw IoError("external final feature must be rank 3: " + final_path.string());
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string stem = e.path().stem().string();
        if (stem.rfind("layer_", 0) != 0) continue;
        const std::size_t idx = std::stoul(stem.substr(6));
        TensorT<T> t = load_tensor_as<T>(e.path().string());
        if (t.shape() != out.final.shape())
            throw IoError("external intermediate " + e.path().string() + " grid mismatch with final");
        out.intermediates[idx] = std::move(t);
    }
    return out;
}

template <typename T>
void save_encoder_output(const EncoderOutput<T>& out, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_tensor(out.final, (fs::path(dir) / "final.rskt").string());
    for (const auto& [idx, t] : out.intermediates)
        save_tensor(t, (fs::path(dir) / ("layer_" + std::to_string(idx) + ".rskt")).string());
}

// Self-contained encode: seeds parameters from the spec, runs a scratch tape.
template <typename T>
EncoderOutput<T> encode_image(const EncoderSpec& spec, const TensorT<T>& image) {
    if (spec.kind == EncoderKind::External) return load_encoder_output<T>(spec.external_dir);
    if (spec.kind == EncoderKind::ToyText) throw ConfigError("encode_image called with a text encoder spec");
    ParamStore<T> store;
    register_encoder_params(store, "enc.", spec);
    Tape<T> tp;
    auto vars = encode_image_vars(tp, store, "enc.", spec, tp.constant(image));
    EncoderOutput<T> out;
    out.final = tp.value(vars.final);
    check_finite(out.final, "encoder output");
    for (const auto& [i, v] : vars.intermediates) out.intermediates[i] = tp.value(v);
    return out;
}

// Text embeddings: each (class, template) prompt is hashed into a seeded
// pseudo-random unit vector. pairs is N_t x P x C_f; class_mean averages the
// template axis into the N_t x C_f view used by the class-stage fusion.
template <typename T>
struct TextEmbedding {
    TensorT<T> pairs;
    TensorT<T> class_mean;
};

template <typename T>
TextEmbedding<T> encode_text(const EncoderSpec& spec, const ClassVocabulary& vocab) {
    if (spec.kind != EncoderKind::ToyText) throw ConfigError("encode_text requires a toy-text encoder spec");
    vocab.validate();
    const std::size_t n = vocab.num_classes(), p = vocab.num_templates(), c = spec.embed_dim;
    TextEmbedding<T> out;
    out.pairs = TensorT<T>(Shape{n, p, c});
    out.class_mean = TensorT<T>(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            Rng rng(stable_hash(vocab.prompt(i, j), spec.seed));
            double sq = 0;
            std::vector<double> v(c);
            for (std::size_t e = 0; e < c; ++e) {
                v[e] = rng.normal();
                sq += v[e] * v[e];
            }
            const double inv = 1.0 / std::sqrt(sq);
            for (std::size_t e = 0; e < c; ++e) {
                const T val = static_cast<T>(v[e] * inv);
                out.pairs.at({i, j, e}) = val;
                out.class_mean.at({i, e}) += static_cast<T>(val / static_cast<T>(p));
            }
        }
    }
    return out;
}

} // namespace rskt
