#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pulse/image.hpp"
#include "pulse/rng.hpp"

namespace pulse {

/// Adds i.i.d. zero-mean Gaussian noise. `std` follows the [0,255] intensity
/// convention and is divided by 255 internally. Output is not clamped.
inline Image degrade_gaussian(const Image& im, double std_255, std::uint64_t seed) {
    if (std_255 < 0.0) throw std::invalid_argument("degrade_gaussian: std must be >= 0");
    Image out = im;
    if (std_255 == 0.0) return out;
    const double sigma = std_255 / 255.0;
    Rng rng(seed);
    for (double& v : out.data) v += sigma * rng.normal();
    return out;
}

/// Salt-and-pepper: each spatial pixel is independently replaced, with
/// probability `density`, by 0 or 1 (equal odds, all channels together).
inline Image degrade_salt_pepper(const Image& im, double density, std::uint64_t seed) {
    if (density < 0.0 || density > 1.0)
        throw std::invalid_argument("degrade_salt_pepper: density must be in [0,1]");
    Image out = im;
    if (density == 0.0) return out;
    Rng rng(seed);
    for (std::size_t y = 0; y < im.height; ++y)
        for (std::size_t x = 0; x < im.width; ++x) {
            if (rng.uniform01() >= density) continue;
            const double v = rng.uniform01() < 0.5 ? 0.0 : 1.0;
            for (std::size_t c = 0; c < im.channels; ++c) out.at(c, y, x) = v;
        }
    return out;
}

/// Builds a normalized straight-line blur kernel of the given pixel length at
/// angle `theta`, by splatting finely spaced points along the segment onto a
/// grid with bilinear weights.
inline std::vector<double> motion_line_kernel(std::size_t length, double theta,
                                              std::size_t& side_out) {
    const std::size_t side = length + 2;  // room for bilinear spill at the ends
    std::vector<double> kern(side * side, 0.0);
    const double cx = (side - 1) / 2.0;
    const double cy = (side - 1) / 2.0;
    const double half = (static_cast<double>(length) - 1.0) / 2.0;
    const double dx = std::cos(theta), dy = std::sin(theta);
    const std::size_t samples = length * 16 + 1;
    for (std::size_t i = 0; i < samples; ++i) {
        const double t = (samples == 1) ? 0.0
                                        : -half + (2.0 * half * i) / (samples - 1);
        const double px = cx + t * dx;
        const double py = cy + t * dy;
        const long x0 = static_cast<long>(std::floor(px));
        const long y0 = static_cast<long>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
            if (xs[k] < 0 || ys[k] < 0 || xs[k] >= static_cast<long>(side) ||
                ys[k] >= static_cast<long>(side))
                continue;
            kern[static_cast<std::size_t>(ys[k]) * side + static_cast<std::size_t>(xs[k])] +=
                w[k];
        }
    }
    double total = 0.0;
    for (double v : kern) total += v;
    for (double& v : kern) v /= total;
    side_out = side;
    return kern;
}

/// Kernel length quoted at 1024-pixel image height, rescaled to the actual
/// height and floored at 1 (a length-1 kernel is the identity).
inline std::size_t motion_blur_length(long length_1024, std::size_t height) {
    if (length_1024 < 0)
        throw std::invalid_argument("degrade_motion_blur: length must be >= 0");
    const double scaled =
        static_cast<double>(length_1024) * static_cast<double>(height) / 1024.0;
    return static_cast<std::size_t>(std::max(1.0, std::round(scaled)));
}

/// Motion blur with a line kernel at a uniformly random angle and
/// edge-replicating boundary.
inline Image degrade_motion_blur(const Image& im, long length_1024, std::uint64_t seed) {
    const std::size_t length = motion_blur_length(length_1024, im.height);
    Rng rng(seed);
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    std::size_t side = 0;
    const std::vector<double> kern = motion_line_kernel(length, theta, side);
    const long half = static_cast<long>(side - 1) / 2;

    Image out(im.height, im.width, im.channels);
    const long H = static_cast<long>(im.height), W = static_cast<long>(im.width);
    for (std::size_t c = 0; c < im.channels; ++c)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < side; ++ky)
                    for (std::size_t kx = 0; kx < side; ++kx) {
                        const double w = kern[ky * side + kx];
                        if (w == 0.0) continue;
                        long sy = y + static_cast<long>(ky) - half;
                        long sx = x + static_cast<long>(kx) - half;
                        sy = std::min(std::max(sy, 0L), H - 1);
                        sx = std::min(std::max(sx, 0L), W - 1);
                        acc += w * im.at(c, static_cast<std::size_t>(sy),
                                         static_cast<std::size_t>(sx));
                    }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
            }
    return out;
}

}  // namespace pulse
