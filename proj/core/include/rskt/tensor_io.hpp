#pragma once

#include "rskt/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace rskt {

// Binary tensor container used for fixture features, external-encoder
// injection and checkpoints:
//   magic "RSKT" | version u8 (=1) | rank u8 | shape u32 LE per dim |
//   raw little-endian float32 payload.

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

template <typename T>
void save_tensor(const TensorT<T>& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("RSKT", 4);
    const unsigned char version = 1;
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    os.put(static_cast<char>(version));
    os.put(static_cast<char>(rank));
    for (std::size_t d : t.shape()) detail::put_u32_le(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) {
        const float f = static_cast<float>(t[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32_le(os, bits);
    }
    if (!os) throw IoError("write failure: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open tensor file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RSKT", 4) != 0)
        throw IoError("bad magic in tensor file: " + path);
    const int version = is.get();
    if (version != 1) throw IoError("unsupported tensor file version in " + path);
    const int rank = is.get();
    if (rank < 0) throw IoError("truncated tensor file: " + path);
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = detail::get_u32_le(is);
    if (!is) throw IoError("truncated shape in tensor file: " + path);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const std::uint32_t bits = detail::get_u32_le(is);
        float f;
        std::memcpy(&f, &bits, 4);
        t[i] = f;
    }
    if (!is) throw IoError("truncated payload in tensor file: " + path);
    return t;
}

template <typename T>
TensorT<T> load_tensor_as(const std::string& path) {
    return load_tensor(path).cast<T>();
}

} // namespace rskt
