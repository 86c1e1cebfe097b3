#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "gpnerf/errors.hpp"

namespace gpnerf {

// RGB image in [0,1] with a per-pixel flag telling whether the pixel was
// actually rendered (vs filled with background).
struct RenderedImage {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;               // row-major, 3 channels
    std::vector<std::uint8_t> rendered;   // per pixel

    RenderedImage() = default;
    RenderedImage(int w, int h) : width(w), height(h) {
        rgb.assign(static_cast<std::size_t>(w) * h * 3, 0.0f);
        rendered.assign(static_cast<std::size_t>(w) * h, 0);
    }

    float* at(int u, int v) { return rgb.data() + (static_cast<std::size_t>(v) * width + u) * 3; }
    const float* at(int u, int v) const {
        return rgb.data() + (static_cast<std::size_t>(v) * width + u) * 3;
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    void fill(float r, float g, float b) {
        for (std::size_t i = 0; i < pixel_count(); ++i) {
            rgb[i * 3 + 0] = r;
            rgb[i * 3 + 1] = g;
            rgb[i * 3 + 2] = b;
        }
    }
};

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

}  // namespace gpnerf
