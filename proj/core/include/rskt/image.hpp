#pragma once

#include "rskt/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rskt {

// 8-bit raster, row-major HWC. channels is 1 (index/gray) or 3 (RGB).
struct RasterU8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
};

RasterU8 read_png(const std::string& path);
void write_png(const RasterU8& img, const std::string& path);

// One image with an optional label mask. image is H x W x 3 in [0,1];
// label is H x W of class indices, valid in [0, N_t) or equal to ignore_value.
struct ImageSample {
    Tensor image;
    std::optional<IntTensor> label;
    std::int32_t ignore_value = 255;

    std::size_t height() const { return image.dim(0); }
    std::size_t width() const { return image.dim(1); }
    bool square() const { return height() == width(); }
};

// Decodes an RGB (or gray, expanded) PNG into a [0,1] float H x W x 3 tensor.
Tensor image_from_png(const std::string& path);

// Decodes a single-channel 8-bit PNG of class indices.
IntTensor label_from_png(const std::string& path);

// Center-crop the leading two axes to size x size.
template <typename T>
TensorT<T> center_crop(const TensorT<T>& t, std::size_t size) {
    const std::size_t h = t.dim(0), w = t.dim(1);
    if (h < size || w < size)
        throw ShapeError("center_crop: input " + shape_str(t.shape()) + " smaller than crop " + std::to_string(size));
    std::size_t inner = 1;
    for (std::size_t a = 2; a < t.rank(); ++a) inner *= t.dim(a);
    const std::size_t y0 = (h - size) / 2, x0 = (w - size) / 2;
    Shape out_shape = t.shape();
    out_shape[0] = size;
    out_shape[1] = size;
    TensorT<T> out(out_shape);
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
            const T* src = t.data() + ((y0 + i) * w + (x0 + j)) * inner;
            std::copy(src, src + inner, out.data() + (i * size + j) * inner);
        }
    return out;
}

} // namespace rskt
