#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulse/autodiff.hpp"
#include "pulse/generator.hpp"
#include "pulse/image.hpp"
#include "pulse/resample.hpp"
#include "pulse/tensor.hpp"

namespace pulse {

enum class CrossVariant { Euclidean, Geodesic };

struct ObjectiveConfig {
    int p = 2;                                       // norm exponent, 1 or 2
    double lambda_geo = 0.01;                        // weight of the cross term
    CrossVariant variant = CrossVariant::Geodesic;
    double eps = 1e-3;                               // convergence gate on the downscaling loss

    void validate() const {
        if (p != 1 && p != 2) throw std::invalid_argument("objective: p must be 1 or 2");
        if (lambda_geo < 0) throw std::invalid_argument("objective: lambda_geo must be >= 0");
        if (eps <= 0) throw std::invalid_argument("objective: eps must be > 0");
    }
};

/// Mean over all low-resolution samples of |DS(sr) - lr|^p. The mean (rather
/// than a raw sum) keeps the eps threshold meaningful across resolutions.
inline double downscaling_loss(const Image& sr, const Image& lr, const LinearResampler& rs,
                               int p) {
    if (sr.channels != lr.channels)
        throw std::invalid_argument("downscaling_loss: channel mismatch");
    if (sr.height != rs.input_height() || sr.width != rs.input_width() ||
        lr.height != rs.output_height() || lr.width != rs.output_width())
        throw std::invalid_argument("downscaling_loss: resampler does not map sr dims to lr dims");
    const Tensor down = rs.apply_tensor(sr.to_tensor());
    double acc = 0.0;
    for (std::size_t i = 0; i < down.numel(); ++i) {
        const double d = down.data[i] - lr.data[i];
        acc += (p == 2) ? d * d : std::abs(d);
    }
    return acc / static_cast<double>(down.numel());
}

/// Sum over style pairs of squared euclidean distance.
inline double cross_loss(const std::vector<Tensor>& styles) {
    if (styles.empty()) throw std::invalid_argument("cross_loss: need at least one style");
    double acc = 0.0;
    for (std::size_t i = 0; i < styles.size(); ++i)
        for (std::size_t j = i + 1; j < styles.size(); ++j) {
            for (std::size_t t = 0; t < styles[i].numel(); ++t) {
                const double d = styles[i].data[t] - styles[j].data[t];
                acc += d * d;
            }
        }
    return acc;
}

/// Sum over style pairs of squared angle.
inline double geocross_loss(const std::vector<Tensor>& styles) {
    if (styles.empty()) throw std::invalid_argument("geocross_loss: need at least one style");
    double acc = 0.0;
    for (std::size_t i = 0; i < styles.size(); ++i)
        for (std::size_t j = i + 1; j < styles.size(); ++j) {
            const double th = pair_angle(styles[i], styles[j]);
            acc += th * th;
        }
    return acc;
}

/// The full scalar objective as a reusable graph:
///   total = downscaling_loss(synthesize(styles, noise)) + lambda * cross-term.
/// Build once per (spec, lr image, resampler, config); evaluate with fresh
/// bindings per step. Immutable after construction, so concurrent runs only
/// need their own value buffers.
class ObjectiveGraph {
public:
    ObjectiveGraph(const GeneratorSpec& spec, const Image& lr_image,
                   const LinearResampler& resampler, const ObjectiveConfig& cfg,
                   std::size_t trainable_noise_count)
        : d_(spec.d), k_(spec.k) {
        cfg.validate();
        const std::size_t res = spec.output_resolution();
        if (resampler.input_height() != res || resampler.input_width() != res)
            throw std::invalid_argument("objective: resampler input " +
                                        std::to_string(resampler.input_height()) + "x" +
                                        std::to_string(resampler.input_width()) +
                                        " does not match generator output " +
                                        std::to_string(res) + "x" + std::to_string(res));
        if (resampler.output_height() != lr_image.height ||
            resampler.output_width() != lr_image.width)
            throw std::invalid_argument("objective: resampler output does not match lr image");
        if (lr_image.channels != spec.out_channels)
            throw std::invalid_argument("objective: lr channels do not match generator");

        auto rsp = std::make_shared<const LinearResampler>(resampler);
        for (std::size_t i = 0; i < k_; ++i) {
            style_ids_.push_back(graph_.input(style_name(i), {d_}, true));
            noise_ids_.push_back(
                graph_.input(noise_name(i), spec.noise_dims(i), i < trainable_noise_count));
        }
        image_id_ = build_synthesis(graph_, spec, style_ids_, noise_ids_);
        graph_.set_name(image_id_, "image");

        const int down = graph_.resample(image_id_, std::move(rsp));
        const int lr_node = graph_.param("lr", lr_image.to_tensor());
        const int diff = graph_.add(down, graph_.scale(lr_node, -1.0));
        const int ds = graph_.scale(graph_.sum(graph_.pow_abs(diff, cfg.p)),
                                    1.0 / static_cast<double>(lr_image.numel()));
        graph_.set_name(ds, "ds_loss");
        ds_id_ = ds;

        int total = ds;
        if (cfg.lambda_geo > 0.0) {
            const int reg = (cfg.variant == CrossVariant::Geodesic)
                                ? graph_.geocross(style_ids_)
                                : graph_.cross(style_ids_);
            total = graph_.add(ds, graph_.scale(reg, cfg.lambda_geo));
        }
        graph_.set_name(total, "total");
        graph_.set_output(total);
    }

    static std::string style_name(std::size_t i) { return "style" + std::to_string(i); }
    static std::string noise_name(std::size_t i) { return "noise" + std::to_string(i); }

    Bindings bindings_for(const LatentState& state) const {
        if (state.styles.size() != k_ || state.noise.size() != k_)
            throw std::invalid_argument("objective: state must carry k styles and k noise maps");
        Bindings b;
        for (std::size_t i = 0; i < k_; ++i) {
            b[style_name(i)] = state.styles[i];
            b[noise_name(i)] = state.noise[i];
        }
        return b;
    }

    const Graph& graph() const { return graph_; }
    int image_node() const { return image_id_; }
    int ds_loss_node() const { return ds_id_; }
    const std::vector<int>& style_nodes() const { return style_ids_; }
    const std::vector<int>& noise_nodes() const { return noise_ids_; }

private:
    std::size_t d_, k_;
    Graph graph_;
    std::vector<int> style_ids_, noise_ids_;
    int image_id_ = -1;
    int ds_id_ = -1;
};

/// Convenience scalar evaluation of the full objective at one state.
inline double total_objective(const LatentState& state, const GeneratorSpec& spec,
                              const Image& lr_image, const LinearResampler& resampler,
                              const ObjectiveConfig& cfg) {
    ObjectiveGraph og(spec, lr_image, resampler, cfg, state.trainable_noise_count);
    std::vector<Tensor> values;
    return og.graph().forward_scalar(og.bindings_for(state), values);
}

}  // namespace pulse
