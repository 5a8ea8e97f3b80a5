#pragma once

// Image and range error metrics: PSNR, SSIM, mean L1, median range error.

#include "salf/framebuffer.hpp"

#include <vector>

namespace salf {

inline void require_same_shape(const Framebuffer& a, const Framebuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("metrics: image shapes differ (" + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + ")");
}

inline double mse(const Framebuffer& a, const Framebuffer& b) {
    require_same_shape(a, b);
    if (a.rgb.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.rgb.size());
}

/// Peak signal-to-noise ratio for [0, 1] images; +inf when identical.
inline double psnr_from_mse(double m) { return m > 0.0 ? 10.0 * std::log10(1.0 / m) : kInf; }
inline double psnr(const Framebuffer& a, const Framebuffer& b) { return psnr_from_mse(mse(a, b)); }

inline double mean_l1(const Framebuffer& a, const Framebuffer& b) {
    require_same_shape(a, b);
    if (a.rgb.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) acc += std::abs(a.rgb[i] - b.rgb[i]);
    return acc / static_cast<double>(a.rgb.size());
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2, evaluated where the window fits and averaged
/// over positions and channels. Images smaller than the window fall back to
/// a single window covering the whole image.
inline double ssim(const Framebuffer& a, const Framebuffer& b) {
    require_same_shape(a, b);
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const int win = std::min({11, a.width, a.height});
    std::vector<double> kernel(static_cast<std::size_t>(win));
    double ksum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double x = i - (win - 1) / 2.0;
        kernel[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        ksum += kernel[i];
    }
    for (double& k : kernel) k /= ksum;

    double total = 0.0;
    std::size_t count = 0;
    for (int ch = 0; ch < 3; ++ch) {
        auto at = [&](const Framebuffer& f, int x, int y) {
            return f.rgb[3 * (static_cast<std::size_t>(y) * f.width + x) + ch];
        };
        for (int y0 = 0; y0 + win <= a.height; ++y0) {
            for (int x0 = 0; x0 + win <= a.width; ++x0) {
                double mu_a = 0.0, mu_b = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int j = 0; j < win; ++j) {
                    for (int i = 0; i < win; ++i) {
                        const double w = kernel[i] * kernel[j];
                        const double va = at(a, x0 + i, y0 + j);
                        const double vb = at(b, x0 + i, y0 + j);
                        mu_a += w * va;
                        mu_b += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                const double var_a = saa - mu_a * mu_a;
                const double var_b = sbb - mu_b * mu_b;
                const double cov = sab - mu_a * mu_b;
                total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++count;
            }
        }
    }
    return count ? total / static_cast<double>(count) : 1.0;
}

/// Median |pred - gt| over entries where both are finite; NaN marks no return.
/// Returns NaN when nothing is valid.
inline double median_range_error(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("median_range_error: size mismatch");
    std::vector<double> err;
    err.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (std::isfinite(pred[i]) && std::isfinite(gt[i])) err.push_back(std::abs(pred[i] - gt[i]));
    if (err.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t mid = err.size() / 2;
    std::nth_element(err.begin(), err.begin() + mid, err.end());
    const double hi = err[mid];
    if (err.size() % 2 == 1) return hi;
    const double lo = *std::max_element(err.begin(), err.begin() + mid);
    return 0.5 * (lo + hi);
}

}  // namespace salf
