#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulse/degrade.hpp"
#include "pulse/generator.hpp"
#include "pulse/image.hpp"
#include "pulse/io.hpp"
#include "pulse/objective.hpp"
#include "pulse/optimize.hpp"
#include "pulse/resample.hpp"

namespace pulse {

struct ItemSummary {
    std::string id;
    std::size_t runs = 0;
    std::size_t converged_runs = 0;
    bool success = false;  // any run converged
    double best_loss = std::numeric_limits<double>::infinity();
};

struct GroupReport {
    std::string name;
    std::size_t attempts = 0;   // items evaluated
    std::size_t successes = 0;  // items with at least one converged run
    std::vector<ItemSummary> items;

    bool has_rate() const { return attempts > 0; }
    double rate() const { return static_cast<double>(successes) / static_cast<double>(attempts); }
};

/// Group-wise success counts. `attempts` counts evaluated items (an item is
/// one input image or trial); an item succeeds when any of its runs
/// converges, and rate is exactly successes/attempts. runs_per_item is
/// echoed in the config line.
struct BenchReport {
    std::vector<GroupReport> groups;
    std::vector<std::string> skipped;  // "path: reason", never silently dropped
    std::string config_echo;

    std::string to_csv() const {
        std::string out = "group,attempts,successes,rate\n";
        char buf[64];
        for (const GroupReport& g : groups) {
            out += g.name + "," + std::to_string(g.attempts) + "," +
                   std::to_string(g.successes) + ",";
            if (g.has_rate()) {
                std::snprintf(buf, sizeof buf, "%.6f", g.rate());
                out += buf;
            } else {
                out += "n/a";
            }
            out += "\n";
        }
        return out;
    }

    std::string to_table() const {
        std::string out;
        if (!config_echo.empty()) out += "# " + config_echo + "\n";
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-16s %8s %9s %8s\n", "group", "attempts",
                      "successes", "rate");
        out += buf;
        for (const GroupReport& g : groups) {
            if (g.has_rate())
                std::snprintf(buf, sizeof buf, "%-16s %8zu %9zu %8.4f\n", g.name.c_str(),
                              g.attempts, g.successes, g.rate());
            else
                std::snprintf(buf, sizeof buf, "%-16s %8zu %9zu %8s\n", g.name.c_str(),
                              g.attempts, g.successes, "n/a");
            out += buf;
        }
        for (const std::string& s : skipped) out += "skipped: " + s + "\n";
        return out;
    }
};

namespace detail {

inline std::string config_echo(const ObjectiveConfig& obj, const OptimConfig& opt,
                               Kernel kernel, std::size_t runs_per_item) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "steps=%zu lr=%g eps=%g restarts=%zu runs_per_item=%zu lambda_geo=%g "
                  "kernel=%s retraction=%s seed=%llu",
                  opt.steps, opt.lr, opt.eps, opt.restarts, runs_per_item, obj.lambda_geo,
                  kernel_name(kernel),
                  opt.retraction == Retraction::TangentThenRenormalize ? "tangent" : "renorm",
                  static_cast<unsigned long long>(opt.seed));
    return buf;
}

inline ItemSummary summarize_runs(const std::string& id,
                                  const std::vector<RunResult>& runs) {
    ItemSummary item;
    item.id = id;
    item.runs = runs.size();
    for (const RunResult& r : runs) {
        if (r.converged) ++item.converged_runs;
        item.best_loss = std::min(item.best_loss, r.best_loss);
    }
    item.success = item.converged_runs > 0;
    return item;
}

/// Samples a generator state the same way run initialization does: one
/// sphere-projected push-forward style tiled k times, fresh noise.
inline LatentState sample_state(const GeneratorSpec& spec, std::uint64_t seed) {
    LatentState st;
    const double root_d = std::sqrt(static_cast<double>(spec.d));
    st.styles.assign(spec.k, project_sphere(sample_latent_pushforward(
                                                spec, derive_seed(seed, 1)),
                                            root_d));
    st.noise = sample_noise(spec, derive_seed(seed, 2));
    return st;
}

}  // namespace detail

/// Self-consistency protocol: synthesize a target from a sampled state,
/// downscale it, and check that the search re-attains the eps gate.
inline BenchReport recovery_experiment(const GeneratorSpec& spec, std::size_t scale_factor,
                                       std::size_t trials, const ObjectiveConfig& obj,
                                       const OptimConfig& opt,
                                       Kernel kernel = Kernel::Bicubic) {
    const std::size_t res = spec.output_resolution();
    const LinearResampler rs = build_downscaler(kernel, res, res, scale_factor);
    BenchReport report;
    report.config_echo = detail::config_echo(obj, opt, kernel, opt.restarts);
    GroupReport group;
    group.name = "recovery";
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = derive_seed(opt.seed, t, 0xfeed);
        const LatentState target = detail::sample_state(spec, trial_seed);
        const Image lr = rs.apply(synthesize(spec, target));
        OptimConfig run_opt = opt;
        run_opt.seed = derive_seed(trial_seed, 3);
        const std::vector<RunResult> runs =
            multi_restart(lr, spec, rs, obj, run_opt, opt.restarts);
        ItemSummary item = detail::summarize_runs("trial" + std::to_string(t), runs);
        ++group.attempts;
        if (item.success) ++group.successes;
        group.items.push_back(std::move(item));
    }
    report.groups.push_back(std::move(group));
    return report;
}

enum class DegradeKind { Gaussian, Blur, SaltPepper };

inline DegradeKind degrade_kind_from_name(const std::string& s) {
    if (s == "gaussian") return DegradeKind::Gaussian;
    if (s == "blur") return DegradeKind::Blur;
    if (s == "saltpepper") return DegradeKind::SaltPepper;
    throw std::invalid_argument("unknown degradation '" + s +
                                "' (expected gaussian|blur|saltpepper)");
}

inline Image apply_degradation(const Image& im, DegradeKind kind, double param,
                               std::uint64_t seed) {
    switch (kind) {
        case DegradeKind::Gaussian: return degrade_gaussian(im, param, seed);
        case DegradeKind::Blur:
            return degrade_motion_blur(im, static_cast<long>(std::llround(param)), seed);
        case DegradeKind::SaltPepper: return degrade_salt_pepper(im, param, seed);
    }
    throw std::logic_error("apply_degradation: bad kind");
}

struct RobustnessTrial {
    double output_to_clean = 0.0;   // |DS(best image) - lr_clean|_2
    double output_to_noisy = 0.0;   // |DS(best image) - lr_noisy|_2
    double corruption = 0.0;        // |lr_noisy - lr_clean|_2
    bool denoised = false;          // output_to_clean < corruption
};

struct RobustnessReport {
    BenchReport bench;
    std::vector<RobustnessTrial> trials;

    std::size_t denoised_count() const {
        std::size_t n = 0;
        for (const RobustnessTrial& t : trials) n += t.denoised ? 1 : 0;
        return n;
    }
    double mean_output_to_clean() const {
        double s = 0.0;
        for (const RobustnessTrial& t : trials) s += t.output_to_clean;
        return trials.empty() ? 0.0 : s / static_cast<double>(trials.size());
    }
    double mean_corruption() const {
        double s = 0.0;
        for (const RobustnessTrial& t : trials) s += t.corruption;
        return trials.empty() ? 0.0 : s / static_cast<double>(trials.size());
    }
};

/// Recovery setup with degraded low-resolution inputs. Each trial searches
/// against the degraded image and then compares the best output's
/// downscaling against the clean target (the implicit-denoising statistic).
/// The best run is used whether or not it met the eps gate.
inline RobustnessReport robustness_experiment(const GeneratorSpec& spec,
                                              std::size_t scale_factor, DegradeKind kind,
                                              double param, std::size_t trials,
                                              const ObjectiveConfig& obj,
                                              const OptimConfig& opt,
                                              Kernel kernel = Kernel::Bicubic) {
    const std::size_t res = spec.output_resolution();
    const LinearResampler rs = build_downscaler(kernel, res, res, scale_factor);
    RobustnessReport report;
    report.bench.config_echo = detail::config_echo(obj, opt, kernel, opt.restarts);
    GroupReport group;
    group.name = "robustness";
    for (std::size_t t = 0; t < trials; ++t) {
        // Same trial-seed tag as recovery_experiment so a zero-strength
        // degradation reproduces its targets and run seeds exactly.
        const std::uint64_t trial_seed = derive_seed(opt.seed, t, 0xfeed);
        const LatentState target = detail::sample_state(spec, trial_seed);
        const Image lr_clean = rs.apply(synthesize(spec, target));
        const Image lr_noisy =
            apply_degradation(lr_clean, kind, param, derive_seed(trial_seed, 4));
        OptimConfig run_opt = opt;
        run_opt.seed = derive_seed(trial_seed, 3);
        const std::vector<RunResult> runs =
            multi_restart(lr_noisy, spec, rs, obj, run_opt, opt.restarts);
        ItemSummary item = detail::summarize_runs("trial" + std::to_string(t), runs);
        ++group.attempts;
        if (item.success) ++group.successes;

        RobustnessTrial rt;
        const Image down = rs.apply(runs.front().best_image);  // runs sorted best-first
        rt.output_to_clean = l2_diff(down, lr_clean);
        rt.output_to_noisy = l2_diff(down, lr_noisy);
        rt.corruption = l2_diff(lr_noisy, lr_clean);
        rt.denoised = rt.output_to_clean < rt.corruption;
        report.trials.push_back(rt);
        group.items.push_back(std::move(item));
    }
    report.bench.groups.push_back(std::move(group));
    return report;
}

/// Group-wise success rates over a directory tree: every subdirectory of
/// `dataset_root` is a group, every PGM/PPM inside is an item run
/// `runs_per_image` times. Unreadable or mis-sized images are recorded under
/// `skipped`.
inline BenchReport success_rate(const std::string& dataset_root, const GeneratorSpec& spec,
                                std::size_t runs_per_image, const ObjectiveConfig& obj,
                                const OptimConfig& opt, Kernel kernel = Kernel::Bicubic) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dataset_root))
        throw std::runtime_error(dataset_root + ": not a directory");
    BenchReport report;
    report.config_echo = detail::config_echo(obj, opt, kernel, runs_per_image);

    std::vector<std::string> group_names;
    for (const auto& entry : fs::directory_iterator(dataset_root))
        if (entry.is_directory()) group_names.push_back(entry.path().filename().string());
    std::sort(group_names.begin(), group_names.end());

    const std::size_t res = spec.output_resolution();
    for (std::size_t gi = 0; gi < group_names.size(); ++gi) {
        GroupReport group;
        group.name = group_names[gi];
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(fs::path(dataset_root) / group.name)) {
            if (!entry.is_regular_file()) continue;
            const std::string ext = entry.path().extension().string();
            if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());

        for (std::size_t fi = 0; fi < files.size(); ++fi) {
            const std::string& path = files[fi];
            Image lr;
            try {
                lr = read_image(path);
            } catch (const std::exception& e) {
                report.skipped.push_back(path + ": " + e.what());
                continue;
            }
            if (lr.height != lr.width || lr.height == 0 || res % lr.height != 0 ||
                res / lr.height < 2) {
                report.skipped.push_back(path + ": size " + std::to_string(lr.width) + "x" +
                                         std::to_string(lr.height) +
                                         " incompatible with generator output " +
                                         std::to_string(res) + "x" + std::to_string(res));
                continue;
            }
            if (lr.channels != spec.out_channels) {
                report.skipped.push_back(path + ": channel count does not match generator");
                continue;
            }
            const LinearResampler rs = build_downscaler(kernel, res, res, res / lr.height);
            OptimConfig run_opt = opt;
            run_opt.seed = derive_seed(derive_seed(opt.seed, gi, 0xda7a), fi);
            const std::vector<RunResult> runs =
                multi_restart(lr, spec, rs, obj, run_opt, runs_per_image);
            ItemSummary item = detail::summarize_runs(path, runs);
            ++group.attempts;
            if (item.success) ++group.successes;
            group.items.push_back(std::move(item));
        }
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace pulse
