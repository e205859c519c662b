#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cva {

// Interleaved 8-bit image, row-major, RGB channel order.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c = 3)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, 0) {
        if (w <= 0 || h <= 0 || c <= 0) throw std::invalid_argument("Image: non-positive dimension");
    }

    std::uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool empty() const { return pixels.empty(); }
    friend bool operator==(const Image&, const Image&) = default;
};

// Planar (CHW) floating-point image produced by frame normalization.
struct NormalizedFrame {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

}  // namespace cva
