#pragma once

#include <stdexcept>

#include "pulse/tensor.hpp"

namespace pulse {

/// Planar (channel, row, column) image with real intensities nominally in
/// [0,1]. Values are only clamped when written to disk; operators must let
/// out-of-range values pass through so gradients keep flowing.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<double> data;  // size channels*height*width, planar

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c = 1, double fill = 0.0)
        : height(h), width(w), channels(c), data(h * w * c, fill) {
        if (c != 1 && c != 3) throw std::invalid_argument("Image: channels must be 1 or 3");
    }

    double& at(std::size_t c, std::size_t h, std::size_t w) {
        return data[(c * height + h) * width + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const {
        return data[(c * height + h) * width + w];
    }

    std::size_t pixels() const { return height * width; }
    std::size_t numel() const { return data.size(); }

    Tensor to_tensor() const {
        return Tensor({channels, height, width}, data);
    }

    static Image from_tensor(const Tensor& t) {
        if (t.rank() != 3) throw std::invalid_argument("Image: tensor must be rank 3 (c,h,w)");
        Image im;
        im.channels = t.dims[0];
        im.height = t.dims[1];
        im.width = t.dims[2];
        im.data = t.data;
        return im;
    }
};

inline double max_abs_diff(const Image& a, const Image& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double l2_diff(const Image& a, const Image& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("l2_diff: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace pulse
