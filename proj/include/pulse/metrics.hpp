#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pulse/image.hpp"

namespace pulse {

inline void require_same_dims(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw std::invalid_argument(std::string(what) + ": image dims differ");
}

inline double mse(const Image& a, const Image& b) {
    require_same_dims(a, b, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

/// Peak signal-to-noise ratio on the [0,1] range; identical images give +inf.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

/// Single-scale SSIM with an 8x8 sliding window (windows shrink to the whole
/// image when it is smaller), C1=(0.01)^2, C2=(0.03)^2 on [0,1] intensities,
/// averaged over windows and channels. Window moments are population-style.
inline double ssim(const Image& a, const Image& b) {
    require_same_dims(a, b, "ssim");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const std::size_t win_h = std::min<std::size_t>(8, a.height);
    const std::size_t win_w = std::min<std::size_t>(8, a.width);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < a.channels; ++c)
        for (std::size_t y = 0; y + win_h <= a.height; ++y)
            for (std::size_t x = 0; x + win_w <= a.width; ++x) {
                double ma = 0.0, mb = 0.0;
                for (std::size_t dy = 0; dy < win_h; ++dy)
                    for (std::size_t dx = 0; dx < win_w; ++dx) {
                        ma += a.at(c, y + dy, x + dx);
                        mb += b.at(c, y + dy, x + dx);
                    }
                const double n = static_cast<double>(win_h * win_w);
                ma /= n;
                mb /= n;
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (std::size_t dy = 0; dy < win_h; ++dy)
                    for (std::size_t dx = 0; dx < win_w; ++dx) {
                        const double da = a.at(c, y + dy, x + dx) - ma;
                        const double db = b.at(c, y + dy, x + dx) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n;
                vb /= n;
                cov /= n;
                const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                ++count;
            }
    return total / static_cast<double>(count);
}

/// Pixelwise arithmetic mean: the global minimizer of sum_j |I_j - I|_2^2.
inline Image pixelwise_mean_minimizer(const std::vector<Image>& images) {
    if (images.empty())
        throw std::invalid_argument("pixelwise_mean_minimizer: need at least one image");
    for (const Image& im : images) require_same_dims(images[0], im, "pixelwise_mean_minimizer");
    Image out = images[0];
    for (std::size_t i = 1; i < images.size(); ++i)
        for (std::size_t t = 0; t < out.data.size(); ++t) out.data[t] += images[i].data[t];
    const double inv = 1.0 / static_cast<double>(images.size());
    for (double& v : out.data) v *= inv;
    return out;
}

}  // namespace pulse
