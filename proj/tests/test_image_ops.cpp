#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "pulse/degrade.hpp"
#include "pulse/image.hpp"
#include "pulse/resample.hpp"

using namespace pulse;

TEST_CASE("image tensor roundtrip") {
    Image im = oracle::random_image(4, 6, 3, 1);
    Image back = Image::from_tensor(im.to_tensor());
    REQUIRE(back.height == 4);
    REQUIRE(back.width == 6);
    REQUIRE(back.channels == 3);
    REQUIRE(max_abs_diff(im, back) == 0.0);
    REQUIRE_THROWS_AS(Image(2, 2, 4), std::invalid_argument);
}

TEST_CASE("downscaler construction rules") {
    REQUIRE_THROWS_AS(build_downscaler(Kernel::Bicubic, 8, 8, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(build_downscaler(Kernel::Bicubic, 9, 8, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(build_downscaler(Kernel::Box, 8, 10, 4), std::invalid_argument);

    LinearResampler rs = build_downscaler(Kernel::Bicubic, 16, 32, 4);
    REQUIRE(rs.output_height() == 4);
    REQUIRE(rs.output_width() == 8);
    REQUIRE(rs.factor() == 4);

    Image wrong(8, 8, 1);
    REQUIRE_THROWS_AS(rs.apply(wrong), std::invalid_argument);
    REQUIRE_THROWS_AS(rs.adjoint_apply(wrong), std::invalid_argument);

    REQUIRE(kernel_from_name("bicubic") == Kernel::Bicubic);
    REQUIRE(kernel_from_name("box") == Kernel::Box);
    REQUIRE_THROWS_AS(kernel_from_name("lanczos"), std::invalid_argument);
}

TEST_CASE("constants map to constants") {
    for (Kernel k : {Kernel::Bicubic, Kernel::Box})
        for (std::size_t f : {2, 4, 8})
            for (std::size_t n : {16, 24, 32}) {
                LinearResampler rs = build_downscaler(k, n, n, f);
                Image im(n, n, 1, 0.7);
                Image lo = rs.apply(im);
                for (double v : lo.data) REQUIRE(v == Catch::Approx(0.7).margin(1e-12));
            }
    // Same for a very large factor near the top of the supported range.
    LinearResampler big = build_downscaler(Kernel::Bicubic, 256, 256, 64);
    Image im(256, 256, 1, 0.3);
    Image lo = big.apply(im);
    REQUIRE(lo.height == 4);
    for (double v : lo.data) REQUIRE(v == Catch::Approx(0.3).margin(1e-12));
}

TEST_CASE("box weights are uniform") {
    LinearResampler rs = build_downscaler(Kernel::Box, 12, 12, 4);
    for (const auto& row : rs.row_taps()) {
        REQUIRE(row.taps.size() == 4);
        for (const auto& t : row.taps)
            REQUIRE(t.weight == Catch::Approx(0.25).margin(1e-15));
    }
    Image im(8, 8, 1, 0.0);
    im.at(0, 1, 2) = 1.0;
    Image lo = build_downscaler(Kernel::Box, 8, 8, 4).apply(im);
    REQUIRE(lo.at(0, 0, 0) == Catch::Approx(1.0 / 16.0).margin(1e-15));
    REQUIRE(lo.at(0, 0, 1) == 0.0);
    REQUIRE(lo.at(0, 1, 0) == 0.0);
    REQUIRE(lo.at(0, 1, 1) == 0.0);
}

TEST_CASE("bicubic impulse response matches hand-computed weights") {
    // Impulse at input index 4 of an 8-sample axis, factor 2: the four output
    // samples pick up the normalized kernel values at distances
    // 1.75, 0.75, -0.25, -1.25 (in output units), each divided by the
    // partition sum 2.
    const double expect[4] = {-0.01171875, 0.11328125, 0.43359375, -0.03515625};
    Image im(8, 8, 1, 0.0);
    im.at(0, 4, 4) = 1.0;
    Image lo = build_downscaler(Kernel::Bicubic, 8, 8, 2).apply(im);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            REQUIRE(lo.at(0, y, x) ==
                    Catch::Approx(expect[y] * expect[x]).margin(1e-15));

    // Antialiasing signature: the stretched cubic has negative lobes.
    LinearResampler rs2 = build_downscaler(Kernel::Bicubic, 16, 16, 2);
    bool has_negative = false;
    for (const auto& row : rs2.row_taps())
        for (const auto& t : row.taps) has_negative |= t.weight < 0.0;
    REQUIRE(has_negative);
}

TEST_CASE("apply agrees with the dense operator matrix") {
    struct Case { Kernel k; std::size_t h, w, f, c; };
    const Case cases[] = {
        {Kernel::Bicubic, 16, 16, 2, 1}, {Kernel::Bicubic, 32, 32, 4, 1},
        {Kernel::Bicubic, 32, 32, 8, 3}, {Kernel::Bicubic, 16, 32, 4, 1},
        {Kernel::Box, 16, 16, 2, 1},     {Kernel::Box, 24, 24, 4, 3},
        {Kernel::Box, 32, 16, 8, 1},
    };
    for (const Case& tc : cases) {
        CAPTURE(kernel_name(tc.k), tc.h, tc.w, tc.f, tc.c);
        LinearResampler rs = build_downscaler(tc.k, tc.h, tc.w, tc.f);
        const auto m = oracle::dense_matrix(tc.k, tc.h, tc.w, tc.f);
        const Image x = oracle::random_image(tc.h, tc.w, tc.c, 77 + tc.h + tc.f);
        const Image want = oracle::apply_dense(m, x, tc.h / tc.f, tc.w / tc.f);
        REQUIRE(max_abs_diff(rs.apply(x), want) <= 1e-12);

        const Image y = oracle::random_image(tc.h / tc.f, tc.w / tc.f, tc.c, 901 + tc.w);
        const Image want_t = oracle::apply_dense_transposed(m, y, tc.h, tc.w);
        REQUIRE(max_abs_diff(rs.adjoint_apply(y), want_t) <= 1e-12);
    }
}

TEST_CASE("adjoint identity over random pairs") {
    for (Kernel k : {Kernel::Bicubic, Kernel::Box}) {
        LinearResampler rs = build_downscaler(k, 32, 32, 4);
        for (int trial = 0; trial < 100; ++trial) {
            const Image x = oracle::random_image(32, 32, 1, 1000 + trial);
            const Image y = oracle::random_image(8, 8, 1, 2000 + trial);
            const double lhs = oracle::image_dot(rs.apply(x), y);
            const double rhs = oracle::image_dot(x, rs.adjoint_apply(y));
            REQUIRE(std::fabs(lhs - rhs) <= 1e-10);
        }
    }
}

TEST_CASE("apply is linear") {
    LinearResampler rs = build_downscaler(Kernel::Bicubic, 24, 24, 4);
    const Image x = oracle::random_image(24, 24, 1, 5);
    const Image y = oracle::random_image(24, 24, 1, 6);
    Image combo(24, 24, 1);
    for (std::size_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = 2.5 * x.data[i] - 0.75 * y.data[i];
    const Image lx = rs.apply(x), ly = rs.apply(y), lc = rs.apply(combo);
    for (std::size_t i = 0; i < lc.data.size(); ++i)
        REQUIRE(lc.data[i] ==
                Catch::Approx(2.5 * lx.data[i] - 0.75 * ly.data[i]).margin(1e-12));
}

TEST_CASE("gaussian degradation statistics") {
    const Image im = oracle::random_image(100, 100, 3, 42);
    REQUIRE(max_abs_diff(degrade_gaussian(im, 0.0, 9), im) == 0.0);

    const Image noisy = degrade_gaussian(im, 25.0, 9);
    REQUIRE(max_abs_diff(degrade_gaussian(im, 25.0, 9), noisy) == 0.0);
    REQUIRE(max_abs_diff(degrade_gaussian(im, 25.0, 10), noisy) > 0.0);

    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < im.data.size(); ++i) {
        const double d = noisy.data[i] - im.data[i];
        sum += d;
        sumsq += d * d;
    }
    const double n = static_cast<double>(im.data.size());
    const double mean = sum / n;
    const double sd = std::sqrt(sumsq / n - mean * mean);
    REQUIRE(std::fabs(mean) < 0.005);
    REQUIRE(sd == Catch::Approx(25.0 / 255.0).epsilon(0.05));

    // No clamping: strong noise pushes samples outside [0,1].
    const Image hot = degrade_gaussian(Image(100, 100, 1, 1.0), 100.0, 3);
    double lo = 1e9, hi = -1e9;
    for (double v : hot.data) { lo = std::min(lo, v); hi = std::max(hi, v); }
    REQUIRE(hi > 1.0);
    REQUIRE(lo < 0.0);

    REQUIRE_THROWS_AS(degrade_gaussian(im, -1.0, 0), std::invalid_argument);
}

TEST_CASE("salt and pepper statistics") {
    const Image im(100, 100, 3, 0.5);
    REQUIRE(max_abs_diff(degrade_salt_pepper(im, 0.0, 1), im) == 0.0);

    const Image sp = degrade_salt_pepper(im, 0.05, 1);
    REQUIRE(max_abs_diff(degrade_salt_pepper(im, 0.05, 1), sp) == 0.0);

    std::size_t corrupted = 0, salt = 0;
    for (std::size_t y = 0; y < 100; ++y)
        for (std::size_t x = 0; x < 100; ++x) {
            const double v = sp.at(0, y, x);
            if (v == 0.5) continue;
            REQUIRE((v == 0.0 || v == 1.0));
            // All channels of a hit pixel take the same value.
            REQUIRE(sp.at(1, y, x) == v);
            REQUIRE(sp.at(2, y, x) == v);
            ++corrupted;
            if (v == 1.0) ++salt;
        }
    REQUIRE(corrupted >= 400);
    REQUIRE(corrupted <= 600);
    REQUIRE(salt >= corrupted / 4);  // roughly even salt/pepper split
    REQUIRE(salt <= corrupted * 3 / 4);

    const Image all = degrade_salt_pepper(im, 1.0, 2);
    for (double v : all.data) REQUIRE((v == 0.0 || v == 1.0));

    REQUIRE_THROWS_AS(degrade_salt_pepper(im, 1.5, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(degrade_salt_pepper(im, -0.1, 0), std::invalid_argument);
}

TEST_CASE("motion blur length scales with image height") {
    REQUIRE(motion_blur_length(100, 1024) == 100);
    REQUIRE(motion_blur_length(100, 512) == 50);
    REQUIRE(motion_blur_length(100, 64) == 6);
    REQUIRE(motion_blur_length(3, 32) == 1);
    REQUIRE(motion_blur_length(0, 1024) == 1);
    REQUIRE_THROWS_AS(motion_blur_length(-2, 64), std::invalid_argument);
}

TEST_CASE("motion blur kernel and application") {
    std::size_t side = 0;
    const std::vector<double> kern = motion_line_kernel(5, 0.3, side);
    REQUIRE(side == 7);
    double total = 0.0;
    for (double v : kern) total += v;
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));

    // Normalized kernel + edge replication preserves constants exactly.
    const Image flat(32, 32, 1, 0.42);
    const Image blurred = degrade_motion_blur(flat, 100, 7);
    REQUIRE(max_abs_diff(blurred, flat) <= 1e-12);

    const Image im = oracle::random_image(32, 32, 1, 8);
    const Image b1 = degrade_motion_blur(im, 160, 21);
    REQUIRE(max_abs_diff(degrade_motion_blur(im, 160, 21), b1) == 0.0);
    REQUIRE(max_abs_diff(b1, im) > 0.0);

    // Horizontal-ish blur spreads an impulse along a line.
    Image imp(64, 64, 1, 0.0);
    imp.at(0, 32, 32) = 1.0;
    const Image spread = degrade_motion_blur(imp, 160, 4);  // effective length 10
    std::size_t lit = 0;
    for (double v : spread.data) lit += v > 1e-6;
    REQUIRE(lit >= 10);
}
