#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pulse/rng.hpp"
#include "pulse/tensor.hpp"

namespace pulse {

enum class Retraction { Renormalize, TangentThenRenormalize };

inline Retraction retraction_from_name(const std::string& s) {
    if (s == "renorm") return Retraction::Renormalize;
    if (s == "tangent") return Retraction::TangentThenRenormalize;
    throw std::invalid_argument("unknown retraction '" + s + "' (expected tangent|renorm)");
}

/// Rescales v onto the sphere of the given radius.
inline Tensor project_sphere(const Tensor& v, double radius) {
    const double n = norm2(v);
    if (n == 0.0) throw std::invalid_argument("project_sphere: zero vector");
    Tensor out = v;
    const double f = radius / n;
    for (double& x : out.data) x *= f;
    return out;
}

/// Standard Gaussian sample renormalized to norm sqrt(d).
inline Tensor sample_sphere(std::size_t d, std::uint64_t seed) {
    if (d == 0) throw std::invalid_argument("sample_sphere: d must be >= 1");
    Rng rng(seed);
    Tensor v({d}, 0.0);
    double n = 0.0;
    do {
        for (double& x : v.data) x = rng.normal();
        n = norm2(v);
    } while (n == 0.0);  // astronomically unlikely; keeps the projection defined
    return project_sphere(v, std::sqrt(static_cast<double>(d)));
}

/// One projected-gradient step for a single style vector on the sqrt(d)
/// sphere. Tangent mode removes the radial gradient component before
/// stepping. If the raw step lands exactly on the origin the step is retried
/// with a halved learning rate; if that keeps failing the vector is returned
/// unchanged.
inline Tensor spherical_step_one(const Tensor& v, const Tensor& g, double lr,
                                 Retraction mode) {
    if (!v.same_shape(g))
        throw std::invalid_argument("spherical_step: style/gradient shape mismatch");
    const std::size_t d = v.numel();
    const double radius = std::sqrt(static_cast<double>(d));
    Tensor step_dir = g;
    if (mode == Retraction::TangentThenRenormalize) {
        const double vn = norm2(v);
        const double coef = dot(g, v) / (vn * vn);
        for (std::size_t i = 0; i < d; ++i) step_dir.data[i] -= coef * v.data[i];
    }
    double step = lr;
    for (int attempt = 0; attempt < 64; ++attempt) {
        Tensor cand = v;
        for (std::size_t i = 0; i < d; ++i) cand.data[i] -= step * step_dir.data[i];
        if (norm2(cand) > 0.0) return project_sphere(cand, radius);
        step *= 0.5;
    }
    return v;
}

inline std::vector<Tensor> spherical_step(const std::vector<Tensor>& styles,
                                          const std::vector<Tensor>& grads, double lr,
                                          Retraction mode) {
    if (styles.size() != grads.size())
        throw std::invalid_argument("spherical_step: styles/grads count mismatch");
    std::vector<Tensor> out;
    out.reserve(styles.size());
    for (std::size_t i = 0; i < styles.size(); ++i)
        out.push_back(spherical_step_one(styles[i], grads[i], lr, mode));
    return out;
}

/// What plain descent does when the sphere constraint is replaced by the
/// norm penalty itself: minimizing |z|^2 from a seeded Gaussian start drags
/// the iterate toward the origin. Returns the norm at every step (steps+1
/// entries) so the decay is directly assertable.
inline std::vector<double> squared_norm_descent_norms(std::size_t d, std::size_t steps,
                                                      double lr, std::uint64_t seed) {
    Rng rng(seed);
    Tensor z = rng.normal_tensor({d});
    std::vector<double> norms;
    norms.reserve(steps + 1);
    norms.push_back(norm2(z));
    for (std::size_t s = 0; s < steps; ++s) {
        for (double& x : z.data) x -= lr * 2.0 * x;  // grad of |z|^2 is 2z
        norms.push_back(norm2(z));
    }
    return norms;
}

struct NormStats {
    double mean_norm = 0.0;
    double std_norm = 0.0;
    double fraction_within = 0.0;  // norms inside [0.9, 1.1] * sqrt(d)
};

/// Monte Carlo over standard Gaussians in dimension d: how tightly do norms
/// concentrate around sqrt(d)?
inline NormStats gaussian_norm_stats(std::size_t d, std::size_t n_samples,
                                     std::uint64_t seed) {
    if (d == 0 || n_samples == 0)
        throw std::invalid_argument("gaussian_norm_stats: d and n_samples must be >= 1");
    Rng rng(seed);
    const double root_d = std::sqrt(static_cast<double>(d));
    double sum = 0.0, sum_sq = 0.0;
    std::size_t inside = 0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        double q = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double x = rng.normal();
            q += x * x;
        }
        const double n = std::sqrt(q);
        sum += n;
        sum_sq += n * n;
        if (n >= 0.9 * root_d && n <= 1.1 * root_d) ++inside;
    }
    NormStats st;
    st.mean_norm = sum / n_samples;
    const double var = sum_sq / n_samples - st.mean_norm * st.mean_norm;
    st.std_norm = std::sqrt(std::max(var, 0.0));
    st.fraction_within = static_cast<double>(inside) / n_samples;
    return st;
}

}  // namespace pulse
