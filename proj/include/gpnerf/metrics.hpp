#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "gpnerf/image.hpp"

namespace gpnerf {

inline double mse(const RenderedImage& image, const RenderedImage& reference) {
    if (image.width != reference.width || image.height != reference.height)
        throw DimensionMismatch("mse: image dimensions differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < image.rgb.size(); ++i) {
        const double d = static_cast<double>(image.rgb[i]) - static_cast<double>(reference.rgb[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(image.rgb.size());
}

// 10 log10(peak^2 / MSE); +inf for identical images.
inline double psnr(const RenderedImage& image, const RenderedImage& reference, double peak = 1.0) {
    const double err = mse(image, reference);
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / err);
}

// SSIM with the canonical configuration: 11x11 Gaussian window (stddev 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1. The window runs over valid positions
// only; per-channel maps are averaged.
inline double ssim(const RenderedImage& image, const RenderedImage& reference) {
    if (image.width != reference.width || image.height != reference.height)
        throw DimensionMismatch("ssim: image dimensions differ");
    constexpr int kWindow = 11;
    constexpr int kHalf = kWindow / 2;
    if (image.width < kWindow || image.height < kWindow)
        throw TooSmall("ssim: images must be at least 11x11");

    double window[kWindow][kWindow];
    {
        const double s2 = 1.5 * 1.5;
        double total = 0.0;
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) {
                const double dx = x - kHalf, dy = y - kHalf;
                window[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
                total += window[y][x];
            }
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) window[y][x] /= total;
    }

    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const int w = image.width, h = image.height;

    double channel_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        double map_sum = 0.0;
        std::size_t map_count = 0;
        for (int v = kHalf; v < h - kHalf; ++v)
            for (int u = kHalf; u < w - kHalf; ++u) {
                double mu_x = 0.0, mu_y = 0.0, xx = 0.0, yy = 0.0, xy = 0.0;
                for (int dy = -kHalf; dy <= kHalf; ++dy)
                    for (int dx = -kHalf; dx <= kHalf; ++dx) {
                        const double wgt = window[dy + kHalf][dx + kHalf];
                        const double x = image.at(u + dx, v + dy)[c];
                        const double y = reference.at(u + dx, v + dy)[c];
                        mu_x += wgt * x;
                        mu_y += wgt * y;
                        xx += wgt * x * x;
                        yy += wgt * y * y;
                        xy += wgt * x * y;
                    }
                const double var_x = xx - mu_x * mu_x;
                const double var_y = yy - mu_y * mu_y;
                const double cov = xy - mu_x * mu_y;
                const double num = (2.0 * mu_x * mu_y + kC1) * (2.0 * cov + kC2);
                const double den = (mu_x * mu_x + mu_y * mu_y + kC1) * (var_x + var_y + kC2);
                map_sum += num / den;
                ++map_count;
            }
        channel_sum += map_sum / static_cast<double>(map_count);
    }
    return channel_sum / 3.0;
}

}  // namespace gpnerf
