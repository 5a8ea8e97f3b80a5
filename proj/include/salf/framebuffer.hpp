#pragma once

#include "salf/common.hpp"

#include <vector>

namespace salf {

/// Color (3 channels in [0, 1]), accumulated opacity and expected depth per
/// pixel, row-major. Depth is NaN where there is no return.
struct Framebuffer {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;
    std::vector<double> opacity;
    std::vector<double> depth;

    Framebuffer() = default;
    Framebuffer(int w, int h, const Vec3& background = Vec3::Zero())
        : width(w), height(h), rgb(3 * static_cast<std::size_t>(w) * h), opacity(static_cast<std::size_t>(w) * h, 0.0),
          depth(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::quiet_NaN()) {
        for (std::size_t i = 0; i < pixel_count(); ++i) set_color(i, background);
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }

    Vec3 color(std::size_t i) const { return {rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]}; }
    Vec3 color(int x, int y) const { return color(index(x, y)); }
    void set_color(std::size_t i, const Vec3& c) {
        rgb[3 * i] = c.x();
        rgb[3 * i + 1] = c.y();
        rgb[3 * i + 2] = c.z();
    }
};

}  // namespace salf
