#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pulse/rng.hpp"
#include "pulse/sphere.hpp"

using namespace pulse;

TEST_CASE("projection onto the sphere") {
    const Tensor v({2}, {3.0, 4.0});
    const Tensor p = project_sphere(v, 1.0);
    REQUIRE(p.data[0] == Catch::Approx(0.6).margin(1e-15));
    REQUIRE(p.data[1] == Catch::Approx(0.8).margin(1e-15));

    // Idempotent once on the sphere.
    const Tensor pp = project_sphere(p, 1.0);
    REQUIRE(max_abs_diff(p, pp) <= 1e-15);

    REQUIRE_THROWS_AS(project_sphere(Tensor({3}, 0.0), 1.0), std::invalid_argument);
    REQUIRE(retraction_from_name("tangent") == Retraction::TangentThenRenormalize);
    REQUIRE(retraction_from_name("renorm") == Retraction::Renormalize);
    REQUIRE_THROWS_AS(retraction_from_name("euclidean"), std::invalid_argument);
}

TEST_CASE("sphere samples have exact radius and no mean bias") {
    for (std::size_t d : {1, 2, 17, 512}) {
        const double root_d = std::sqrt(static_cast<double>(d));
        for (std::uint64_t s = 0; s < 20; ++s) {
            const Tensor v = sample_sphere(d, 1000 + s);
            REQUIRE(std::fabs(norm2(v) - root_d) <= 1e-9 * root_d);
        }
    }
    // d=1 collapses to the two-point set {-1, +1} (up to rounding in the
    // normalize-then-scale arithmetic).
    for (std::uint64_t s = 0; s < 10; ++s) {
        const double x = sample_sphere(1, s).data[0];
        REQUIRE(std::fabs(std::fabs(x) - 1.0) <= 1e-12);
    }

    const std::size_t d = 512, n = 10000;
    Tensor mean({d}, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const Tensor v = sample_sphere(d, derive_seed(7, s));
        for (std::size_t i = 0; i < d; ++i) mean.data[i] += v.data[i] / n;
    }
    REQUIRE(norm2(mean) <= 0.05 * std::sqrt(static_cast<double>(d)));

    REQUIRE(max_abs_diff(sample_sphere(64, 5), sample_sphere(64, 5)) == 0.0);
    REQUIRE_THROWS_AS(sample_sphere(0, 1), std::invalid_argument);
}

TEST_CASE("spherical steps stay on the sphere") {
    Rng rng(31);
    for (Retraction mode : {Retraction::Renormalize, Retraction::TangentThenRenormalize}) {
        Tensor v = sample_sphere(32, rng.next_u64());
        const double radius = norm2(v);
        for (int i = 0; i < 50; ++i) {
            const Tensor g = rng.normal_tensor({32});
            v = spherical_step_one(v, g, 0.4, mode);
            REQUIRE(std::fabs(norm2(v) - radius) <= 1e-9 * radius);
        }
    }
}

TEST_CASE("zero and radial gradients leave the point fixed") {
    const Tensor v = sample_sphere(16, 9);
    const Tensor zero({16}, 0.0);
    for (Retraction mode : {Retraction::Renormalize, Retraction::TangentThenRenormalize}) {
        REQUIRE(max_abs_diff(spherical_step_one(v, zero, 0.4, mode), v) == 0.0);
        // A gradient parallel to v only rescales the raw step, and the
        // retraction cancels pure rescaling.
        Tensor radial = v;
        for (double& x : radial.data) x *= 0.3;
        REQUIRE(max_abs_diff(spherical_step_one(v, radial, 0.4, mode), v) <= 1e-12);
    }

    // Raw step that lands exactly at the origin: the halved retry keeps the
    // direction, so the point survives unchanged.
    const Tensor v2({2}, {1.0, 1.0});
    Tensor g2 = v2;
    const double lr = 0.4;
    for (double& x : g2.data) x /= lr;  // v - lr*g == 0
    const Tensor stepped = spherical_step_one(v2, g2, lr, Retraction::Renormalize);
    REQUIRE(max_abs_diff(stepped, v2) <= 1e-12);

    REQUIRE_THROWS_AS(spherical_step_one(v2, Tensor({3}, 1.0), 0.4, Retraction::Renormalize),
                      std::invalid_argument);
}

TEST_CASE("tangent and plain retraction genuinely differ") {
    const Tensor v = sample_sphere(8, 77);
    Rng rng(78);
    const Tensor g = rng.normal_tensor({8});
    const Tensor a = spherical_step_one(v, g, 0.4, Retraction::Renormalize);
    const Tensor b = spherical_step_one(v, g, 0.4, Retraction::TangentThenRenormalize);
    REQUIRE(max_abs_diff(a, b) > 1e-6);

    const std::vector<Tensor> batch = spherical_step({v, v}, {g, g}, 0.4,
                                                     Retraction::TangentThenRenormalize);
    REQUIRE(batch.size() == 2);
    REQUIRE(max_abs_diff(batch[0], b) == 0.0);
    REQUIRE_THROWS_AS(spherical_step({v}, {g, g}, 0.4, Retraction::Renormalize),
                      std::invalid_argument);
}

TEST_CASE("norm concentration in high dimension") {
    const NormStats hi = gaussian_norm_stats(512, 10000, 99);
    REQUIRE(hi.fraction_within >= 0.99);
    // E|z| for large d is essentially sqrt(d - 1/2).
    REQUIRE(hi.mean_norm == Catch::Approx(std::sqrt(511.5)).epsilon(0.005));
    REQUIRE(hi.std_norm < 1.0);

    // In d=1 the same window [0.9, 1.1] catches only a sliver of |N(0,1)|:
    // 2*(Phi(1.1) - Phi(0.9)) = 0.0968.
    const NormStats lo = gaussian_norm_stats(1, 10000, 99);
    REQUIRE(lo.fraction_within == Catch::Approx(0.0968).margin(0.015));

    REQUIRE_THROWS_AS(gaussian_norm_stats(0, 10, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(gaussian_norm_stats(8, 0, 1), std::invalid_argument);
}

TEST_CASE("unconstrained descent on the norm penalty collapses") {
    const std::vector<double> norms = squared_norm_descent_norms(512, 100, 0.1, 4);
    REQUIRE(norms.size() == 101);
    for (std::size_t i = 1; i < norms.size(); ++i) REQUIRE(norms[i] < norms[i - 1]);
    // (1 - 2*lr) = 0.8 contraction per step.
    REQUIRE(norms.back() == Catch::Approx(norms.front() * std::pow(0.8, 100)).epsilon(1e-9));
    REQUIRE(norms.back() < 1e-7 * norms.front());
}
