#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdlib>

#include "msconv/conv.hpp"
#include "msconv/gradcheck.hpp"
#include "msconv/rng.hpp"
#include "testutil.hpp"

using namespace msconv;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::to_raw;

namespace {

ConvWeights random_conv(std::int64_t c_in, std::int64_t c_out, int k, int groups, int stride,
                        int padding, std::uint64_t seed) {
    ConvWeights w;
    w.kernel = Tensor::randn({c_out, c_in / groups, k, k}, seed);
    w.bias = Tensor::randn({1, c_out, 1, 1}, seed ^ 0xb1a5);
    w.stride = stride;
    w.padding = padding;
    w.groups = groups;
    return w;
}

Tensor ref_conv(const Tensor& x, const ConvWeights& w) {
    const auto raw = refimpl::conv2d(to_raw(x), to_raw(w.kernel),
                                     w.bias ? to_raw(*w.bias).data : std::vector<double>{},
                                     w.stride, w.padding, w.groups);
    return testutil::from_raw(raw);
}

} // namespace

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input bit-exactly") {
    const Tensor x = Tensor::randn({1, 3, 4, 5}, 2);
    CHECK(bit_equal(conv2d(x, make_conv_identity(3, 1)), x));
    CHECK(bit_equal(conv2d(x, make_conv_identity(3, 3)), x));
}

TEST_CASE("conv2d: all-ones 3x3 kernel counts in-bounds taps") {
    ConvWeights w;
    w.kernel = Tensor::constant({1, 1, 3, 3}, 1.0);
    w.stride = 1;
    w.padding = 1;
    const Tensor x = Tensor::constant({1, 1, 5, 5}, 1.0);
    const Tensor y = conv2d(x, w);
    CHECK(y.at(0, 0, 2, 2) == 9.0);
    CHECK(y.at(0, 0, 0, 0) == 4.0);
    CHECK(y.at(0, 0, 0, 2) == 6.0);
}

TEST_CASE("conv2d matches the brute-force reference on 50 seeded cases") {
    SplitMix64 rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const int groups = std::array{1, 2, 4}[i % 3];
        const int k = (i % 2) ? 3 : 1;
        const std::int64_t cing = 1 + static_cast<std::int64_t>(rng.next() % 3);
        const std::int64_t coutg = 1 + static_cast<std::int64_t>(rng.next() % 3);
        const std::int64_t h = 3 + static_cast<std::int64_t>(rng.next() % 5);
        const std::int64_t wdt = 3 + static_cast<std::int64_t>(rng.next() % 5);
        const Tensor x = Tensor::randn({2, cing * groups, h, wdt}, rng.next());
        const ConvWeights w = random_conv(cing * groups, coutg * groups, k, groups, 1,
                                          (k - 1) / 2, rng.next());
        worst = std::max(worst, max_abs_diff(conv2d(x, w), ref_conv(x, w)));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("conv2d: stride-2 output geometry") {
    const Tensor x = Tensor::randn({1, 1, 5, 5}, 3);
    const ConvWeights w = random_conv(1, 1, 3, 1, 2, 0, 4);
    const Tensor y = conv2d(x, w);
    CHECK(y.shape() == Shape4{1, 1, 2, 2});
    CHECK(max_abs_diff(y, ref_conv(x, w)) <= 1e-12);
}

TEST_CASE("grouped conv equals independent per-group convs, concatenated") {
    SplitMix64 rng(77);
    const int groups = 2;
    const std::int64_t c_in = 6, c_out = 4;
    const Tensor x = Tensor::randn({1, c_in, 5, 5}, rng.next());
    const ConvWeights w = random_conv(c_in, c_out, 3, groups, 1, 1, rng.next());

    std::vector<Tensor> parts;
    for (int g = 0; g < groups; ++g) {
        ConvWeights wg;
        wg.kernel = slice_channels(w.kernel, g * (c_out / groups), (g + 1) * (c_out / groups));
        wg.bias = slice_channels(*w.bias, g * (c_out / groups), (g + 1) * (c_out / groups));
        wg.stride = 1;
        wg.padding = 1;
        wg.groups = 1;
        parts.push_back(conv2d(slice_channels(x, g * (c_in / groups), (g + 1) * (c_in / groups)), wg));
    }
    CHECK(max_abs_diff(conv2d(x, w), concat_channels(parts)) <= 1e-12);
}

TEST_CASE("conv2d rejects bad geometry") {
    const Tensor x = Tensor::zeros({1, 3, 4, 4});
    CHECK_THROWS_AS(conv2d(x, random_conv(4, 2, 1, 1, 1, 0, 1)), ShapeError);   // channel mismatch
    CHECK_THROWS_AS(conv2d(x, random_conv(3, 3, 3, 3, 1, 1, 1)), ShapeError);   // group divisibility
    ConvWeights shrink = random_conv(3, 1, 3, 1, 1, 0, 2);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 1, 1}), shrink), ShapeError);   // empty output
}

TEST_CASE("deform conv: zero offsets and unit mask degenerate to conv2d") {
    SplitMix64 rng(55);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const int groups = (i % 2) ? 2 : 1;
        const int k = (i % 3 == 0) ? 1 : 3;
        const std::int64_t c_in = 2 * groups;
        const std::int64_t c_out = 2 * groups;
        const Tensor x = Tensor::randn({1, c_in, 5, 5}, rng.next());
        const ConvWeights w = random_conv(c_in, c_out, k, groups, 1, (k - 1) / 2, rng.next());
        const DeformInputs d{Tensor::zeros({1, 2 * groups * k * k, 5, 5}),
                             Tensor::constant({1, static_cast<std::int64_t>(groups) * k * k, 5, 5}, 1.0)};
        worst = std::max(worst,
                         max_abs_diff(modulated_deform_conv2d(x, d, w, groups), conv2d(x, w)));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("deform conv: constant 0.5 mask scales a bias-free 1x1 grouped conv") {
    const int groups = 2;
    const Tensor x = Tensor::randn({1, 4, 4, 4}, 9);
    ConvWeights w = random_conv(4, 4, 1, groups, 1, 0, 10);
    w.bias.reset();
    const DeformInputs d{Tensor::zeros({1, 4, 4, 4}), Tensor::constant({1, 2, 4, 4}, 0.5)};
    const Tensor got = modulated_deform_conv2d(x, d, w, groups);
    const Tensor want = mul(conv2d(x, w), Tensor::constant({1, 4, 4, 4}, 0.5));
    CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("deform conv: integer (0,1) offset shifts columns left with zero fill") {
    std::vector<double> xs(16);
    for (int i = 0; i < 16; ++i) xs[static_cast<std::size_t>(i)] = i + 1;
    const Tensor x = Tensor::from_data({1, 1, 4, 4}, xs);
    ConvWeights w = make_conv_identity(1, 1);
    std::vector<double> off(2 * 16, 0.0);
    for (int i = 0; i < 16; ++i) off[static_cast<std::size_t>(2 * 16 / 2 + i)] = 1.0; // dx channel
    const DeformInputs d{Tensor::from_data({1, 2, 4, 4}, off),
                         Tensor::constant({1, 1, 4, 4}, 1.0)};
    const Tensor y = modulated_deform_conv2d(x, d, w, 1);
    for (std::int64_t r = 0; r < 4; ++r) {
        for (std::int64_t c = 0; c < 3; ++c) CHECK(y.at(0, 0, r, c) == x.at(0, 0, r, c + 1));
        CHECK(y.at(0, 0, r, 3) == 0.0);
    }
}

TEST_CASE("bilinear_sample: integer coords, midpoints, and zero padding") {
    const Tensor img = Tensor::from_data({1, 1, 2, 2}, {0.0, 0.0, 4.0, 4.0});
    CHECK(bilinear_sample(img, 0, 0, 1.0, 0.0) == 4.0);
    CHECK(bilinear_sample(img, 0, 0, 0.5, 0.5) == 2.0);
    const Tensor img2 = Tensor::from_data({1, 1, 2, 2}, {8.0, 1.0, 2.0, 3.0});
    CHECK(bilinear_sample(img2, 0, 0, -0.5, -0.5) == 0.25 * 8.0);
    CHECK(bilinear_sample(img2, 0, 0, -3.0, 0.0) == 0.0);
}

TEST_CASE("local_avg_pool: border-aware divisor preserves constants exactly") {
    for (double c : {2.0, 0.1, -3.7}) {
        const Tensor x = Tensor::constant({1, 2, 4, 5}, c);
        const Tensor y = local_avg_pool(x, 3);
        for (double v : y.data()) CHECK(v == c);
    }
    std::vector<double> arange(9);
    for (int i = 0; i < 9; ++i) arange[static_cast<std::size_t>(i)] = i;
    const Tensor grid = Tensor::from_data({1, 1, 3, 3}, arange);
    CHECK(local_avg_pool(grid, 3).at(0, 0, 1, 1) == 4.0);

    const Tensor tiny = Tensor::randn({1, 3, 1, 1}, 5);
    CHECK(bit_equal(local_avg_pool(tiny, 3), tiny));
}

TEST_CASE("global_avg_pool: constants exact, means match the naive loop") {
    const Tensor c = Tensor::constant({2, 3, 4, 4}, 0.3);
    const Tensor pooled = global_avg_pool(c);
    for (double v : pooled.data()) CHECK(v == 0.3);

    const Tensor quad = Tensor::from_data({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
    CHECK(global_avg_pool(quad).value() == 1.5);

    const Tensor x = Tensor::randn({2, 3, 5, 7}, 31);
    const Tensor got = global_avg_pool(x);
    CHECK(max_abs_diff(got, testutil::from_raw(refimpl::global_avg_pool(to_raw(x)))) <= 1e-12);
}

TEST_CASE("resize: constants survive every path exactly") {
    const Tensor x = Tensor::constant({1, 2, 3, 3}, 1.37);
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{7, 5},
                        {2, 2},
                        {6, 2},
                        {1, 9},
                        {3, 3}}) {
        for (UpsampleMode up : {UpsampleMode::Bilinear, UpsampleMode::Nearest}) {
            const Tensor y = resize(x, h, w, up);
            CHECK(y.shape() == Shape4{1, 2, h, w});
            for (double v : y.data()) CHECK(v == 1.37);
        }
    }
}

TEST_CASE("resize: adaptive max-pool bins on the 4x4 arange") {
    std::vector<double> xs(16);
    for (int i = 0; i < 16; ++i) xs[static_cast<std::size_t>(i)] = i;
    const Tensor x = Tensor::from_data({1, 1, 4, 4}, xs);
    const Tensor y = resize(x, 2, 2);
    CHECK(y.at(0, 0, 0, 0) == 5.0);
    CHECK(y.at(0, 0, 0, 1) == 7.0);
    CHECK(y.at(0, 0, 1, 0) == 13.0);
    CHECK(y.at(0, 0, 1, 1) == 15.0);
}

TEST_CASE("resize: same-shape target is a bit-exact identity") {
    const Tensor x = Tensor::randn({2, 3, 4, 5}, 12);
    CHECK(bit_equal(resize(x, 4, 5), x));
}

TEST_CASE("resize: half-pixel bilinear and nearest 1-D expansions") {
    const double a = 0.8, b = -1.6;
    const Tensor x = Tensor::from_data({1, 1, 1, 2}, {a, b});
    const Tensor up = resize(x, 1, 4);
    CHECK(up.at(0, 0, 0, 0) == a);
    CHECK(up.at(0, 0, 0, 1) == doctest::Approx(a + 0.25 * (b - a)).epsilon(1e-15));
    CHECK(up.at(0, 0, 0, 2) == doctest::Approx(a + 0.75 * (b - a)).epsilon(1e-15));
    CHECK(up.at(0, 0, 0, 3) == b);

    const Tensor nn = resize(x, 1, 4, UpsampleMode::Nearest);
    CHECK(nn.at(0, 0, 0, 0) == a);
    CHECK(nn.at(0, 0, 0, 1) == a);
    CHECK(nn.at(0, 0, 0, 2) == b);
    CHECK(nn.at(0, 0, 0, 3) == b);

    CHECK_THROWS_AS(resize(x, 0, 2), ShapeError);
}

TEST_CASE("resize matches the straight-line reference on random cases") {
    SplitMix64 rng(600);
    for (int i = 0; i < 15; ++i) {
        const std::int64_t h = 1 + static_cast<std::int64_t>(rng.next() % 7);
        const std::int64_t w = 1 + static_cast<std::int64_t>(rng.next() % 7);
        const std::int64_t oh = 1 + static_cast<std::int64_t>(rng.next() % 7);
        const std::int64_t ow = 1 + static_cast<std::int64_t>(rng.next() % 7);
        const bool nearest = (i % 4) == 0;
        const Tensor x = Tensor::randn({1, 2, h, w}, rng.next());
        const Tensor got = resize(x, oh, ow, nearest ? UpsampleMode::Nearest : UpsampleMode::Bilinear);
        CHECK(max_abs_diff(got, refimpl::resize(to_raw(x), oh, ow, nearest)) <= 1e-12);
    }
}

TEST_CASE("conv and deform forwards are bit-identical across MSCONV_THREADS") {
    const Tensor x = Tensor::randn({2, 4, 8, 8}, 91);
    const ConvWeights w = random_conv(4, 6, 3, 1, 1, 1, 92);
    const DeformInputs d{Tensor::randn({1, 2 * 9, 6, 6}, 93, 0.3),
                         Tensor::constant({1, 9, 6, 6}, 0.7)};
    const Tensor xd = Tensor::randn({1, 2, 6, 6}, 94);
    const ConvWeights wd = random_conv(2, 2, 3, 1, 1, 1, 95);

    setenv("MSCONV_THREADS", "1", 1);
    const Tensor y1 = conv2d(x, w);
    const Tensor z1 = modulated_deform_conv2d(xd, d, wd, 1);
    setenv("MSCONV_THREADS", "4", 1);
    const Tensor y4 = conv2d(x, w);
    const Tensor z4 = modulated_deform_conv2d(xd, d, wd, 1);
    unsetenv("MSCONV_THREADS");
    CHECK(bit_equal(y1, y4));
    CHECK(bit_equal(z1, z4));
}

TEST_CASE("spatial op gradchecks pass") {
    for (const char* op : {"conv2d", "deform_conv", "lap", "gap", "resize_up", "resize_down",
                           "resize_mixed"}) {
        const GradcheckReport r = run_gradcheck_op(op, 1);
        INFO(op, " max_rel_err=", r.max_rel_err);
        CHECK(r.pass);
    }
}
