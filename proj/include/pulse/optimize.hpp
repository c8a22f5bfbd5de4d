#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "pulse/generator.hpp"
#include "pulse/image.hpp"
#include "pulse/objective.hpp"
#include "pulse/resample.hpp"
#include "pulse/rng.hpp"
#include "pulse/sphere.hpp"

namespace pulse {

inline constexpr std::size_t kTrainableNoiseDefault = static_cast<std::size_t>(-1);

struct OptimConfig {
    std::size_t steps = 100;
    double lr = 0.4;
    std::size_t restarts = 1;
    std::uint64_t seed = 0;
    Retraction retraction = Retraction::TangentThenRenormalize;
    std::size_t trainable_noise_count = kTrainableNoiseDefault;  // default: ceil(k/3)
    double eps = 1e-3;  // convergence gate on the downscaling loss
    std::size_t jobs = 1;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("optim: steps must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("optim: lr must be > 0");
        if (restarts < 1) throw std::invalid_argument("optim: restarts must be >= 1");
        if (!(eps > 0.0)) throw std::invalid_argument("optim: eps must be > 0");
    }

    std::size_t resolve_noise_count(std::size_t k) const {
        if (trainable_noise_count == kTrainableNoiseDefault) return (k + 2) / 3;
        return std::min(trainable_noise_count, k);
    }
};

struct RunResult {
    Image best_image;
    double best_loss = std::numeric_limits<double>::infinity();  // downscaling loss
    bool converged = false;          // best_loss <= eps; false means "no image found"
    std::vector<double> trajectory;  // downscaling loss at init and after every step
    std::size_t restart_index = 0;
    std::uint64_t seed = 0;          // per-run seed the init draws derive from
    // worst relative deviation of any style norm from sqrt(d), over all
    // evaluated states (the sphere-constraint witness)
    double max_style_norm_error = 0.0;
};

enum class RestartMode { FreshStyles, FreshNoiseOnly };

inline RestartMode restart_mode_from_name(const std::string& s) {
    if (s == "restart") return RestartMode::FreshStyles;
    if (s == "noise") return RestartMode::FreshNoiseOnly;
    throw std::invalid_argument("unknown mode '" + s + "' (expected restart|noise)");
}

namespace detail {

inline RunResult run_single(const ObjectiveGraph& og, const GeneratorSpec& spec,
                            const OptimConfig& opt, std::uint64_t run_seed,
                            std::uint64_t style_seed, std::size_t restart_index) {
    const double root_d = std::sqrt(static_cast<double>(spec.d));
    LatentState state;
    // One push-forward style sample, projected onto the sphere the optimizer
    // walks on, tiled across all k layers.
    state.styles.assign(spec.k,
                        project_sphere(sample_latent_pushforward(spec, style_seed), root_d));
    state.noise = sample_noise(spec, derive_seed(run_seed, 2));
    state.trainable_noise_count = opt.resolve_noise_count(spec.k);

    RunResult rr;
    rr.restart_index = restart_index;
    rr.seed = run_seed;
    rr.trajectory.reserve(opt.steps + 1);

    const Graph& g = og.graph();
    std::vector<Tensor> values, grads;
    for (std::size_t step = 0;; ++step) {
        for (const Tensor& v : state.styles) {
            const double err = std::abs(norm2(v) - root_d) / root_d;
            rr.max_style_norm_error = std::max(rr.max_style_norm_error, err);
        }
        const Bindings bind = og.bindings_for(state);
        g.forward_scalar(bind, values);
        const double ds = values[static_cast<std::size_t>(og.ds_loss_node())].data[0];
        rr.trajectory.push_back(ds);
        if (ds < rr.best_loss) {
            rr.best_loss = ds;
            rr.best_image =
                Image::from_tensor(values[static_cast<std::size_t>(og.image_node())]);
        }
        if (step == opt.steps) break;
        g.backward(values, grads);
        for (std::size_t i = 0; i < spec.k; ++i) {
            const Tensor& sg = grads[static_cast<std::size_t>(og.style_nodes()[i])];
            if (sg.data.empty()) continue;
            state.styles[i] = spherical_step_one(state.styles[i], sg, opt.lr, opt.retraction);
        }
        for (std::size_t i = 0; i < state.trainable_noise_count; ++i) {
            const Tensor& ng = grads[static_cast<std::size_t>(og.noise_nodes()[i])];
            if (ng.data.empty()) continue;
            for (std::size_t t = 0; t < ng.numel(); ++t)
                state.noise[i].data[t] -= opt.lr * ng.data[t];
        }
    }
    rr.converged = rr.best_loss <= opt.eps;
    return rr;
}

}  // namespace detail

///// The core search: spherical gradient descent over the style vectors (plus
/// plain descent on the trainable noise maps), tracking the best state seen.
/// converged=false is the "no image found" outcome; the best image is still
/// returned so callers can decide what to surface.
inline RunResult run_pulse(const Image& lr_image, const GeneratorSpec& spec,
                           const LinearResampler& resampler, const ObjectiveConfig& obj,
                           const OptimConfig& opt) {
    opt.validate();
    ObjectiveGraph og(spec, lr_image, resampler, obj, opt.resolve_noise_count(spec.k));
    const std::uint64_t run_seed = derive_seed(opt.seed, 0);
    return detail::run_single(og, spec, opt, run_seed, derive_seed(run_seed, 1), 0);
}

/// n independent seeded runs sharing one objective graph, sorted best-first.
/// FreshStyles draws new styles and noise per run; FreshNoiseOnly pins the
/// style init of run 0 and varies only the noise.
inline std::vector<RunResult> multi_restart(const Image& lr_image, const GeneratorSpec& spec,
                                            const LinearResampler& resampler,
                                            const ObjectiveConfig& obj, const OptimConfig& opt,
                                            std::size_t n,
                                            RestartMode mode = RestartMode::FreshStyles) {
    opt.validate();
    if (n == 0) return {};
    const ObjectiveGraph og(spec, lr_image, resampler, obj, opt.resolve_noise_count(spec.k));
    const std::uint64_t fixed_style_seed = derive_seed(derive_seed(opt.seed, 0), 1);

    std::vector<RunResult> results(n);
    auto run_index = [&](std::size_t i) {
        const std::uint64_t run_seed = derive_seed(opt.seed, i);
        const std::uint64_t style_seed =
            (mode == RestartMode::FreshNoiseOnly) ? fixed_style_seed
                                                  : derive_seed(run_seed, 1);
        results[i] = detail::run_single(og, spec, opt, run_seed, style_seed, i);
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) run_index(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mu;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    run_index(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    std::stable_sort(results.begin(), results.end(),
                     [](const RunResult& a, const RunResult& b) {
                         if (a.best_loss != b.best_loss) return a.best_loss < b.best_loss;
                         return a.restart_index < b.restart_index;
                     });
    return results;
}

}  // namespace pulse
