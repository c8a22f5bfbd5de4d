#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulse/image.hpp"
#include "pulse/tensor.hpp"

namespace pulse {

enum class Kernel { Bicubic, Box };

inline const char* kernel_name(Kernel k) { return k == Kernel::Bicubic ? "bicubic" : "box"; }

inline Kernel kernel_from_name(const std::string& s) {
    if (s == "bicubic") return Kernel::Bicubic;
    if (s == "box") return Kernel::Box;
    throw std::invalid_argument("unknown kernel '" + s + "' (expected bicubic|box)");
}

// Catmull-Rom cubic (a = -0.5), support [-2,2].
inline double catmull_rom(double x) {
    x = std::abs(x);
    if (x < 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
    if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
    return 0.0;
}

/// Explicit separable linear downscaler by an integer factor. The kernel is
/// stretched by the scale factor (antialiasing), boundaries replicate the edge
/// sample, and each output pixel's weights are renormalized to sum to one.
///
/// Immutable after construction; safe to share across concurrent runs.
class LinearResampler {
public:
    struct Tap {
        std::uint32_t index;
        double weight;
    };
    struct OutputRow {
        std::vector<Tap> taps;  // merged (boundary-clamped) and normalized
    };

    LinearResampler(Kernel kernel, std::size_t hr_height, std::size_t hr_width,
                    std::size_t factor)
        : kernel_(kernel), in_h_(hr_height), in_w_(hr_width), factor_(factor) {
        if (factor < 2) throw std::invalid_argument("build_downscaler: factor must be >= 2");
        if (hr_height % factor != 0 || hr_width % factor != 0)
            throw std::invalid_argument("build_downscaler: dims " + std::to_string(hr_height) +
                                        "x" + std::to_string(hr_width) +
                                        " not divisible by factor " + std::to_string(factor));
        out_h_ = hr_height / factor;
        out_w_ = hr_width / factor;
        rows_ = build_axis(in_h_, out_h_);
        cols_ = (in_w_ == in_h_) ? rows_ : build_axis(in_w_, out_w_);
    }

    Kernel kernel() const { return kernel_; }
    std::size_t factor() const { return factor_; }
    std::size_t input_height() const { return in_h_; }
    std::size_t input_width() const { return in_w_; }
    std::size_t output_height() const { return out_h_; }
    std::size_t output_width() const { return out_w_; }

    /// Forward application: (c, M, N) -> (c, m, n).
    Tensor apply_tensor(const Tensor& x) const {
        check_dims(x, in_h_, in_w_, "apply");
        const std::size_t c = x.dims[0];
        // Rows first: (c, M, N) -> (c, m, N), then columns -> (c, m, n).
        Tensor mid({c, out_h_, in_w_}, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oh = 0; oh < out_h_; ++oh)
                for (const Tap& t : rows_[oh].taps) {
                    const double w = t.weight;
                    const double* src = &x.data[(ch * in_h_ + t.index) * in_w_];
                    double* dst = &mid.data[(ch * out_h_ + oh) * in_w_];
                    for (std::size_t j = 0; j < in_w_; ++j) dst[j] += w * src[j];
                }
        Tensor out({c, out_h_, out_w_}, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oh = 0; oh < out_h_; ++oh) {
                const double* src = &mid.data[(ch * out_h_ + oh) * in_w_];
                double* dst = &out.data[(ch * out_h_ + oh) * out_w_];
                for (std::size_t ow = 0; ow < out_w_; ++ow) {
                    double s = 0.0;
                    for (const Tap& t : cols_[ow].taps) s += t.weight * src[t.index];
                    dst[ow] = s;
                }
            }
        return out;
    }

    /// Adjoint application: (c, m, n) -> (c, M, N); <Ax, y> == <x, A'y>.
    Tensor adjoint_tensor(const Tensor& y) const {
        check_dims(y, out_h_, out_w_, "adjoint_apply");
        const std::size_t c = y.dims[0];
        Tensor mid({c, out_h_, in_w_}, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oh = 0; oh < out_h_; ++oh) {
                const double* src = &y.data[(ch * out_h_ + oh) * out_w_];
                double* dst = &mid.data[(ch * out_h_ + oh) * in_w_];
                for (std::size_t ow = 0; ow < out_w_; ++ow)
                    for (const Tap& t : cols_[ow].taps) dst[t.index] += t.weight * src[ow];
            }
        Tensor out({c, in_h_, in_w_}, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oh = 0; oh < out_h_; ++oh) {
                const double* src = &mid.data[(ch * out_h_ + oh) * in_w_];
                for (const Tap& t : rows_[oh].taps) {
                    double* dst = &out.data[(ch * in_h_ + t.index) * in_w_];
                    const double w = t.weight;
                    for (std::size_t j = 0; j < in_w_; ++j) dst[j] += w * src[j];
                }
            }
        return out;
    }

    Image apply(const Image& im) const { return Image::from_tensor(apply_tensor(im.to_tensor())); }
    Image adjoint_apply(const Image& im) const {
        return Image::from_tensor(adjoint_tensor(im.to_tensor()));
    }

    const std::vector<OutputRow>& row_taps() const { return rows_; }
    const std::vector<OutputRow>& col_taps() const { return cols_; }

private:
    void check_dims(const Tensor& t, std::size_t h, std::size_t w, const char* what) const {
        if (t.rank() != 3 || t.dims[1] != h || t.dims[2] != w)
            throw std::invalid_argument(std::string(what) + ": expected (c," +
                                        std::to_string(h) + "," + std::to_string(w) +
                                        "), got " + shape_str(t.dims));
    }

    std::vector<OutputRow> build_axis(std::size_t in_n, std::size_t out_n) const {
        const double s = static_cast<double>(factor_);
        std::vector<OutputRow> rows(out_n);
        for (std::size_t o = 0; o < out_n; ++o) {
            const double center = (o + 0.5) * s - 0.5;  // in input pixel coordinates
            std::vector<double> dense(in_n, 0.0);
            if (kernel_ == Kernel::Box) {
                for (std::size_t i = o * factor_; i < (o + 1) * factor_; ++i)
                    dense[i] = 1.0;
            } else {
                // Antialiased Catmull-Rom: support scaled by the factor.
                const double support = 2.0 * s;
                const long lo = static_cast<long>(std::ceil(center - support));
                const long hi = static_cast<long>(std::floor(center + support));
                for (long i = lo; i <= hi; ++i) {
                    const double w = catmull_rom((static_cast<double>(i) - center) / s);
                    if (w == 0.0) continue;
                    // Edge replication: out-of-range taps fold onto the border.
                    const long ci = std::min<long>(std::max<long>(i, 0),
                                                   static_cast<long>(in_n) - 1);
                    dense[static_cast<std::size_t>(ci)] += w;
                }
            }
            double total = 0.0;
            for (double w : dense) total += w;
            OutputRow row;
            for (std::size_t i = 0; i < in_n; ++i)
                if (dense[i] != 0.0)
                    row.taps.push_back({static_cast<std::uint32_t>(i), dense[i] / total});
            rows[o] = std::move(row);
        }
        return rows;
    }

    Kernel kernel_;
    std::size_t in_h_, in_w_, factor_, out_h_ = 0, out_w_ = 0;
    std::vector<OutputRow> rows_, cols_;
};

inline LinearResampler build_downscaler(Kernel kernel, std::size_t hr_height,
                                        std::size_t hr_width, std::size_t factor) {
    return LinearResampler(kernel, hr_height, hr_width, factor);
}

}  // namespace pulse
