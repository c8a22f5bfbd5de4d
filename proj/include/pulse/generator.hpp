#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulse/autodiff.hpp"
#include "pulse/image.hpp"
#include "pulse/linalg.hpp"
#include "pulse/rng.hpp"
#include "pulse/sphere.hpp"
#include "pulse/tensor.hpp"

namespace pulse {

struct SynthLayer {
    Tensor conv;           // (Cout, Cin, 3, 3)
    Tensor style_scale_w;  // (Cout, d)
    Tensor style_scale_b;  // (Cout)
    Tensor style_shift_w;  // (Cout, d)
    Tensor style_shift_b;  // (Cout)
    Tensor noise_gain;     // rank-0 learned gain
};

/// Architecture plus immutable weights: mapping network (one invertible
/// linear layer + leaky-ReLU), a learned constant base, and k synthesis
/// layers. Resolution doubles after every other layer, so layers 2i and 2i+1
/// run at r0 * 2^i, giving an output side of r0 * 2^(ceil(k/2)-1).
struct GeneratorSpec {
    std::size_t d = 0;
    std::size_t k = 0;
    std::size_t r0 = 0;
    std::vector<std::size_t> widths;  // channels per resolution stage
    double slope = 0.2;
    std::size_t out_channels = 1;

    Tensor map_A;  // (d, d), invertible
    Tensor map_b;  // (d)
    Tensor base;   // (widths[0], r0, r0)
    std::vector<SynthLayer> layers;
    Tensor out_conv;  // (out_channels, widths.back(), 1, 1)
    Tensor out_bias;  // (out_channels)

    static std::size_t stage_count(std::size_t k) { return (k + 1) / 2; }
    static std::size_t output_resolution_for(std::size_t r0, std::size_t k) {
        return r0 << (stage_count(k) - 1);
    }

    std::size_t stage_of(std::size_t layer) const { return layer / 2; }
    bool upsample_before(std::size_t layer) const { return layer >= 2 && layer % 2 == 0; }
    std::size_t layer_resolution(std::size_t layer) const { return r0 << stage_of(layer); }
    std::size_t output_resolution() const { return output_resolution_for(r0, k); }
    std::size_t layer_out_width(std::size_t layer) const { return widths[stage_of(layer)]; }
    std::size_t layer_in_width(std::size_t layer) const {
        return layer == 0 ? widths[0] : widths[stage_of(layer - 1)];
    }
    std::vector<std::size_t> noise_dims(std::size_t layer) const {
        const std::size_t r = layer_resolution(layer);
        return {r, r};
    }

    /// Structural and numeric sanity; called after construction and on load.
    /// `check_condition` runs the mapping-matrix invertibility estimate.
    void validate(bool check_condition = true) const {
        if (d == 0 || k == 0 || r0 == 0)
            throw std::invalid_argument("generator: d, k, r0 must be >= 1");
        if (out_channels != 1 && out_channels != 3)
            throw std::invalid_argument("generator: out_channels must be 1 or 3");
        if (widths.size() != stage_count(k))
            throw std::invalid_argument(
                "generator: widths/resolution inconsistency: need " +
                std::to_string(stage_count(k)) + " stage widths for k=" + std::to_string(k) +
                ", got " + std::to_string(widths.size()));
        for (std::size_t w : widths)
            if (w == 0) throw std::invalid_argument("generator: zero stage width");
        auto want = [](const Tensor& t, std::vector<std::size_t> dims, const char* what) {
            if (t.dims != dims)
                throw std::invalid_argument(std::string("generator: ") + what + " has shape " +
                                            shape_str(t.dims) + ", expected " +
                                            shape_str(dims));
            if (!t.all_finite())
                throw std::invalid_argument(std::string("generator: non-finite ") + what);
        };
        want(map_A, {d, d}, "map_A");
        want(map_b, {d}, "map_b");
        want(base, {widths[0], r0, r0}, "base");
        if (layers.size() != k)
            throw std::invalid_argument("generator: expected " + std::to_string(k) +
                                        " synthesis layers, got " +
                                        std::to_string(layers.size()));
        for (std::size_t i = 0; i < k; ++i) {
            const SynthLayer& l = layers[i];
            const std::size_t ci = layer_in_width(i), co = layer_out_width(i);
            const std::string tag = "layer " + std::to_string(i);
            want(l.conv, {co, ci, 3, 3}, (tag + " conv").c_str());
            want(l.style_scale_w, {co, d}, (tag + " style_scale_w").c_str());
            want(l.style_scale_b, {co}, (tag + " style_scale_b").c_str());
            want(l.style_shift_w, {co, d}, (tag + " style_shift_w").c_str());
            want(l.style_shift_b, {co}, (tag + " style_shift_b").c_str());
            if (!l.noise_gain.is_scalar())
                throw std::invalid_argument("generator: " + tag + " noise_gain must be scalar");
        }
        want(out_conv, {out_channels, widths.back(), 1, 1}, "out_conv");
        want(out_bias, {out_channels}, "out_bias");
        if (check_condition && linalg::condition_estimate(map_A) >= 1e6)
            throw std::runtime_error("generator: mapping matrix is ill-conditioned (>= 1e6)");
    }
};

/// Per-run optimization state: k style vectors plus one noise map per layer.
/// Only the first trainable_noise_count noise maps receive gradient updates.
struct LatentState {
    std::vector<Tensor> styles;  // k vectors of dim d
    std::vector<Tensor> noise;   // k maps of (res_i, res_i)
    std::size_t trainable_noise_count = 0;
};

inline Tensor map_latent(const GeneratorSpec& spec, const Tensor& z) {
    if (z.dims != std::vector<std::size_t>{spec.d})
        throw std::invalid_argument("map_latent: z must have shape (" +
                                    std::to_string(spec.d) + ")");
    std::vector<double> y = linalg::matvec(spec.map_A, z.data);
    Tensor w({spec.d}, std::move(y));
    for (std::size_t i = 0; i < spec.d; ++i)
        w.data[i] = leaky_relu_scalar(w.data[i] + spec.map_b.data[i], spec.slope);
    return w;
}

/// Exact inverse of map_latent: undo the leaky-ReLU, then solve A z = w' - b.
inline Tensor inverse_map(const GeneratorSpec& spec, const Tensor& w) {
    if (w.dims != std::vector<std::size_t>{spec.d})
        throw std::invalid_argument("inverse_map: w must have shape (" +
                                    std::to_string(spec.d) + ")");
    std::vector<double> rhs(spec.d);
    for (std::size_t i = 0; i < spec.d; ++i) {
        const double v = w.data[i] >= 0.0 ? w.data[i] : w.data[i] / spec.slope;
        rhs[i] = v - spec.map_b.data[i];
    }
    linalg::LuFactors lu(spec.map_A);
    return Tensor({spec.d}, lu.solve(rhs));
}

/// Push-forward of the uniform sphere distribution through the mapping
/// network: the init distribution for style vectors.
inline Tensor sample_latent_pushforward(const GeneratorSpec& spec, std::uint64_t seed) {
    return map_latent(spec, sample_sphere(spec.d, seed));
}

/// One standard-Gaussian noise map per synthesis layer.
inline std::vector<Tensor> sample_noise(const GeneratorSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> maps;
    maps.reserve(spec.k);
    for (std::size_t i = 0; i < spec.k; ++i)
        maps.push_back(rng.normal_tensor(spec.noise_dims(i)));
    return maps;
}

/// Appends the full synthesis network to `g`, reading styles and noise from
/// the given nodes, and returns the output image node (values in (0,1)).
/// Weight tensors become Param nodes named after their PLSW entries.
inline int build_synthesis(Graph& g, const GeneratorSpec& spec,
                           const std::vector<int>& style_ids,
                           const std::vector<int>& noise_ids) {
    if (style_ids.size() != spec.k || noise_ids.size() != spec.k)
        throw std::invalid_argument("build_synthesis: need one style and one noise node per layer");
    int x = g.param("base", spec.base);
    for (std::size_t i = 0; i < spec.k; ++i) {
        const SynthLayer& l = spec.layers[i];
        const std::string tag = "layer" + std::to_string(i);
        if (spec.upsample_before(i)) x = g.upsample2x(x);
        x = g.conv2d(x, g.param(tag + ".conv", l.conv));
        const int sc = g.add(g.matvec(g.param(tag + ".style_scale_w", l.style_scale_w),
                                      style_ids[i]),
                             g.param(tag + ".style_scale_b", l.style_scale_b));
        const int sh = g.add(g.matvec(g.param(tag + ".style_shift_w", l.style_shift_w),
                                      style_ids[i]),
                             g.param(tag + ".style_shift_b", l.style_shift_b));
        x = g.add(g.mul(x, sc), sh);
        const int noise_term =
            g.mul(g.param(tag + ".noise_gain", l.noise_gain), noise_ids[i]);
        x = g.add(x, noise_term);
        x = g.leaky_relu(x, spec.slope);
    }
    x = g.conv2d(x, g.param("out.conv", spec.out_conv));
    x = g.add(x, g.param("out.bias", spec.out_bias));
    return g.sigmoid(x);
}

/// Deterministic forward pass of the synthesis network.
inline Image synthesize(const GeneratorSpec& spec, const LatentState& state) {
    if (state.styles.size() != spec.k || state.noise.size() != spec.k)
        throw std::invalid_argument("synthesize: state must carry k styles and k noise maps");
    Graph g;
    std::vector<int> sids, nids;
    Bindings bind;
    for (std::size_t i = 0; i < spec.k; ++i) {
        const std::string sn = "style" + std::to_string(i);
        const std::string nn = "noise" + std::to_string(i);
        sids.push_back(g.input(sn, {spec.d}, false));
        nids.push_back(g.input(nn, spec.noise_dims(i), false));
        bind[sn] = state.styles[i];
        bind[nn] = state.noise[i];
    }
    const int img = build_synthesis(g, spec, sids, nids);
    std::vector<Tensor> values;
    g.forward(bind, values);
    return Image::from_tensor(values[static_cast<std::size_t>(img)]);
}

namespace detail {

inline double tensor_std(const Tensor& t) {
    double mean = 0.0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.data) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(t.numel()));
}

/// Orthonormal rows that are also zero-sum, so a constant (DC) input never
/// reaches the conv output. Without this a large activation mean builds up
/// layer over layer, inflates the normalization, and drowns out the
/// fine-scale influence of the early styles on the image.
inline Tensor zero_sum_orthonormal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    if (rows + 1 > cols)
        throw std::invalid_argument("zero_sum_orthonormal_rows: too many rows");
    Tensor m({rows, cols});
    for (double& v : m.data) v = rng.normal();
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = m.data.data() + r * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += row[j];
        mean /= static_cast<double>(cols);
        for (std::size_t j = 0; j < cols; ++j) row[j] -= mean;
        for (std::size_t p = 0; p < r; ++p) {
            const double* prev = m.data.data() + p * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += row[j] * prev[j];
            for (std::size_t j = 0; j < cols; ++j) row[j] -= dot * prev[j];
        }
        double nrm = 0.0;
        for (std::size_t j = 0; j < cols; ++j) nrm += row[j] * row[j];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12)
            throw std::runtime_error("zero_sum_orthonormal_rows: degenerate draw");
        for (std::size_t j = 0; j < cols; ++j) row[j] /= nrm;
    }
    return m;
}

/// 3x3 kernels with orthonormal zero-sum rows: a constant (DC) input never
/// reaches the conv output. Without this a large activation mean builds up
/// layer over layer, inflates the normalization, and drowns out the
/// fine-scale influence of the styles on the image.
inline Tensor zero_sum_conv(std::size_t co, std::size_t ci, Rng& rng) {
    Tensor rows = zero_sum_orthonormal_rows(co, ci * 9, rng);
    return Tensor({co, ci, 3, 3}, std::move(rows.data));
}

/// 3x3 kernels built from low-pass spatial profiles times zero-sum channel
/// mixes. Outputs stay mean-free (no brightness buildup) but, unlike generic
/// zero-sum rows, the kernels are spatially smooth, so coarse structure in
/// the input survives instead of being turned into pixel-scale edges.
inline Tensor smooth_zero_mean_conv(std::size_t co, std::size_t ci, Rng& rng) {
    if (ci < 2 || co > 2 * (ci - 1))
        throw std::invalid_argument("smooth_zero_mean_conv: too many rows");
    // Two orthonormal smooth profiles: flat, and a center hump with the flat
    // component removed.
    double prof[2][9] = {{1, 1, 1, 1, 1, 1, 1, 1, 1}, {1, 2, 1, 2, 4, 2, 1, 2, 1}};
    for (double& v : prof[0]) v /= 3.0;
    double dot = 0.0;
    for (std::size_t t = 0; t < 9; ++t) dot += prof[1][t] * prof[0][t];
    double n2 = 0.0;
    for (std::size_t t = 0; t < 9; ++t) {
        prof[1][t] -= dot * prof[0][t];
        n2 += prof[1][t] * prof[1][t];
    }
    for (double& v : prof[1]) v /= std::sqrt(n2);

    const std::size_t mix_rank = ci - 1;
    Tensor mbasis = zero_sum_orthonormal_rows(mix_rank, ci, rng);
    Tensor coef = linalg::random_orthonormal(co, 2 * mix_rank, rng);
    Tensor kern({co, ci, 3, 3});
    for (std::size_t c = 0; c < co; ++c)
        for (std::size_t j = 0; j < ci; ++j)
            for (std::size_t t = 0; t < 9; ++t) {
                double v = 0.0;
                for (std::size_t q = 0; q < 2; ++q)
                    for (std::size_t r = 0; r < mix_rank; ++r)
                        v += coef.at2(c, q * mix_rank + r) * mbasis.at2(r, j) * prof[q][t];
                kern.data[(c * ci + j) * 9 + t] = v;
            }
    return kern;
}

}  // namespace detail

/// Seeded random generator weights. Convolutions start from orthonormal rows
/// and are rescaled by a probe pass so every layer's conv output has unit
/// standard deviation on Gaussian input (then asserted within [0.1, 10]).
/// The mapping matrix is random orthogonal, hence invertible.
inline GeneratorSpec init_random_generator(std::size_t d, std::size_t k, std::size_t r0,
                                           std::vector<std::size_t> widths,
                                           std::uint64_t seed,
                                           std::size_t out_channels = 1) {
    GeneratorSpec spec;
    spec.d = d;
    spec.k = k;
    spec.r0 = r0;
    spec.widths = std::move(widths);
    spec.out_channels = out_channels;
    if (spec.widths.size() != GeneratorSpec::stage_count(k))
        throw std::invalid_argument(
            "init_random_generator: widths/resolution inconsistency: need " +
            std::to_string(GeneratorSpec::stage_count(k)) + " widths for k=" +
            std::to_string(k) + ", got " + std::to_string(spec.widths.size()));

    Rng rng(seed);
    spec.map_A = linalg::random_orthonormal(d, d, rng);
    // A mapping bias comparable to the rotated latent itself concentrates the
    // push-forward onto a cap of the sphere rather than spreading it
    // uniformly. Styles sampled from that cap sit close together, so both
    // recovery targets and run initializations land in a region the step
    // budget can actually cross; the modulation swing below is sized against
    // the cap's spread, which keeps the rendered family just as varied.
    spec.map_b = rng.normal_tensor({d}, 1.2);
    spec.base = rng.normal_tensor({spec.widths[0], r0, r0});

    // Zero-sum conv rows keep every feature map spatially zero-mean, so a
    // feature-mean offset cannot compound layer over layer; unchecked, that
    // buildup saturates the output squash for most styles and collapses them
    // to near-constant images. Texture is driven by channel scales, and the
    // modulation rows live in a small per-layer subspace of style space: the
    // normalization below pins the total style-to-image sensitivity, so
    // spreading it across all d directions leaves each one too flat to
    // descend within the step budget. Shifts stay weak except on the last
    // layer, where a single strong direction feeds straight through the
    // output convolution and gives the inversion a smooth brightness axis to
    // descend before the texture axes lock in.
    // Early layers build a static multi-scale carrier (their modulations stay
    // weak), and the strong style response sits on the last layer pair: one
    // texture direction per late layer plus one brightness direction on the
    // final shift, which feeds straight through the output convolution. A
    // response that passes through several strongly modulated layers is a
    // high-order polynomial in the style coordinates and full of plateaus;
    // one-hop response keeps the inversion landscape close to quadratic so
    // plain gradient steps can actually finish within the step budget.
    const double weak_sigma = 0.003 / std::sqrt(static_cast<double>(d));
    const double strong_sigma = 4.0 / std::sqrt(static_cast<double>(d));
    const double bright_sigma = 0.6 / std::sqrt(static_cast<double>(d));
    Tensor dirs = linalg::random_orthonormal(std::min(k + 2, d), d, rng);
    auto rows_along = [&](std::size_t co, std::size_t row, double sigma) {
        Tensor coef = rng.normal_tensor({co}, sigma * std::sqrt(static_cast<double>(d)));
        Tensor w({co, d});
        for (std::size_t c = 0; c < co; ++c)
            for (std::size_t j = 0; j < d; ++j) w.at2(c, j) = coef.data[c] * dirs.at2(row, j);
        return w;
    };
    for (std::size_t i = 0; i < k; ++i) {
        SynthLayer l;
        const std::size_t ci = spec.layer_in_width(i), co = spec.layer_out_width(i);
        l.conv = (i + 2 >= k) ? detail::smooth_zero_mean_conv(co, ci, rng)
                              : detail::zero_sum_conv(co, ci, rng);
        if (i + 1 == k) {
            // Both strong texture directions live on the final layer, one hop
            // from the output squash. Per-channel contrast is then linear in a
            // two-dimensional style plane, and the channels' zero-contrast
            // lines cross that plane at scattered angles instead of piling up
            // at one spot, so no region of the style prior renders flat.
            Tensor ca = rng.normal_tensor({co}, strong_sigma * std::sqrt(static_cast<double>(d)));
            Tensor cb = rng.normal_tensor({co}, strong_sigma * std::sqrt(static_cast<double>(d)));
            Tensor w({co, d});
            for (std::size_t c = 0; c < co; ++c)
                for (std::size_t j = 0; j < d; ++j)
                    w.at2(c, j) = ca.data[c] * dirs.at2(k - 1, j) + cb.data[c] * dirs.at2(k, j);
            l.style_scale_w = std::move(w);
            l.style_shift_w = rows_along(co, k + 1, bright_sigma);
        } else {
            l.style_scale_w = rows_along(co, i, weak_sigma);
            l.style_shift_w = rows_along(co, i, weak_sigma / 8.0);
        }
        l.style_scale_b = Tensor({co}, 1.0);
        l.style_shift_b = Tensor({co}, 0.6);
        l.noise_gain = Tensor::scalar(0.015);
        spec.layers.push_back(std::move(l));
    }
    spec.out_conv = rng.normal_tensor(
        {out_channels, spec.widths.back(), 1, 1},
        1.0 / std::sqrt(static_cast<double>(spec.widths.back())));
    spec.out_bias = Tensor({out_channels}, 0.0);

    // Calibration pass: push the center of the style distribution (the
    // push-forward of z = 0, projected like any sampled style) through and
    // normalize each conv so its raw output keeps unit scale; the range check
    // guards the init contract. Calibrating at a random style instead would
    // bias the whole family dim, because a style's swing mostly raises
    // contrast above the baseline.
    const Tensor cap_center = project_sphere(
        map_latent(spec, Tensor({d})), std::sqrt(static_cast<double>(d)));
    std::vector<Tensor> probe_styles, probe_noise;
    for (std::size_t i = 0; i < k; ++i) {
        probe_styles.push_back(cap_center);
        probe_noise.push_back(rng.normal_tensor(spec.noise_dims(i)));
    }
    Tensor x = spec.base;
    for (std::size_t i = 0; i < k; ++i) {
        SynthLayer& l = spec.layers[i];
        if (spec.upsample_before(i)) x = upsample2x_nearest(x);
        Tensor y = conv2d_same(x, l.conv);
        const double sd = detail::tensor_std(y);
        if (sd < 1e-12)
            throw std::runtime_error("init_random_generator: degenerate conv output");
        for (double& v : l.conv.data) v /= sd;
        for (double& v : y.data) v /= sd;
        const std::size_t co = spec.layer_out_width(i);
        const std::vector<double> sc =
            linalg::matvec(l.style_scale_w, probe_styles[i].data);
        const std::vector<double> sh =
            linalg::matvec(l.style_shift_w, probe_styles[i].data);
        const double gain = l.noise_gain.data[0];
        for (std::size_t c = 0; c < co; ++c) {
            const double scale = sc[c] + l.style_scale_b.data[c];
            const double shift = sh[c] + l.style_shift_b.data[c];
            for (std::size_t px = 0; px < y.dims[1] * y.dims[2]; ++px) {
                double& v = y.data[c * y.dims[1] * y.dims[2] + px];
                v = leaky_relu_scalar(v * scale + shift + gain * probe_noise[i].data[px],
                                      spec.slope);
            }
        }
        const double layer_sd = detail::tensor_std(y);
        if (layer_sd < 0.1 || layer_sd > 10.0)
            throw std::runtime_error("init_random_generator: layer " + std::to_string(i) +
                                     " output std " + std::to_string(layer_sd) +
                                     " outside [0.1, 10]");
        x = std::move(y);
    }
    Tensor y = conv2d_same(x, spec.out_conv);
    const double sd = detail::tensor_std(y);
    if (sd < 1e-12) throw std::runtime_error("init_random_generator: degenerate output conv");
    const double target_presigmoid_std = 2.8;
    for (double& v : spec.out_conv.data) v *= target_presigmoid_std / sd;

    spec.validate(false);  // structure only; the orthogonal map needs no estimate
    return spec;
}

/// Stage widths when the caller does not pick them: 16 channels for the first
/// half of the stages, 8 for the rest.
inline std::vector<std::size_t> default_widths(std::size_t k) {
    const std::size_t stages = GeneratorSpec::stage_count(k);
    std::vector<std::size_t> w(stages);
    for (std::size_t s = 0; s < stages; ++s) w[s] = (s < (stages + 1) / 2) ? 16 : 8;
    return w;
}

/// Desk-scale default: d=64, k=6, 32x32 output.
inline GeneratorSpec default_desk_generator(std::uint64_t seed,
                                            std::size_t out_channels = 1) {
    return init_random_generator(64, 6, 8, default_widths(6), seed, out_channels);
}

/// Paper-scale architecture constants (d=512, k=18, 1024x1024). Materializing
/// weights at this scale is possible but slow; tests use the shape math only.
struct PaperScaleConfig {
    static constexpr std::size_t d = 512;
    static constexpr std::size_t k = 18;
    static constexpr std::size_t r0 = 4;
};

}  // namespace pulse
