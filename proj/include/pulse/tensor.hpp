#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pulse {

/// Dense row-major tensor of doubles. Rank 0 (empty dims) is a scalar.
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : dims(std::move(shape)), data(numel_of(dims), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : dims(std::move(shape)), data(std::move(values)) {
        if (data.size() != numel_of(dims))
            throw std::invalid_argument("Tensor: data length does not match dims");
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data.assign(1, v);
        return t;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return dims.size(); }
    bool is_scalar() const { return numel() == 1 && dims.empty(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 3-D accessor (c, h, w); caller guarantees rank 3.
    double& at3(std::size_t c, std::size_t h, std::size_t w) {
        return data[(c * dims[1] + h) * dims[2] + w];
    }
    double at3(std::size_t c, std::size_t h, std::size_t w) const {
        return data[(c * dims[1] + h) * dims[2] + w];
    }

    // 2-D accessor (i, j); caller guarantees rank 2.
    double& at2(std::size_t i, std::size_t j) { return data[i * dims[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * dims[1] + j]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline std::string shape_str(const std::vector<std::size_t>& dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

inline double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace pulse
