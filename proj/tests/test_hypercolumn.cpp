#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"

#include "pxseg/errors.hpp"
#include "pxseg/hypercolumn.hpp"
#include "pxseg/ops.hpp"
#include "pxseg/ref_kernels.hpp"
#include "pxseg/rng.hpp"
#include "pxseg/tensor.hpp"
#include "test_util.hpp"

using namespace pxseg;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

// Pyramid shaped like the backbone taps: stride-s level has floor-halved dims.
FeaturePyramid make_pyramid(int input_h, int input_w, const std::vector<std::pair<int, int>>&
                                                          channels_and_strides,
                            Rng& rng, bool requires_grad = false) {
    FeaturePyramid pyr;
    pyr.input_height = input_h;
    pyr.input_width = input_w;
    for (const auto& [c, s] : channels_and_strides) {
        PyramidLevel lv;
        lv.stride = s;
        lv.map = random_tensor({c, input_h / s, input_w / s}, rng, -2.0, 2.0, requires_grad);
        pyr.levels.push_back(std::move(lv));
    }
    return pyr;
}

std::vector<ref::RefLevel> ref_views(const FeaturePyramid& pyr) {
    std::vector<ref::RefLevel> views;
    for (const auto& lv : pyr.levels)
        views.push_back({lv.map.data().data(), lv.map.dim(0), lv.map.dim(1), lv.map.dim(2),
                         lv.stride});
    return views;
}

} // namespace

TEST_SUITE("hypercolumn") {

TEST_CASE("map_coordinate: identity at stride 1, hand values at stride 2, clamp rule") {
    auto [r1, c1] = map_coordinate({0, 0}, 1, 8, 8);
    CHECK(r1 == 0.0);
    CHECK(c1 == 0.0);

    // (3 + 0.5)/2 - 0.5 = 1.25
    auto [r2, c2] = map_coordinate({3, 3}, 2, 4, 4);
    CHECK(r2 == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(c2 == doctest::Approx(1.25).epsilon(1e-15));

    // (0 + 0.5)/4 - 0.5 = -0.375, clamped up to 0
    auto [r4, c4] = map_coordinate({0, 0}, 4, 2, 2);
    CHECK(r4 == 0.0);
    CHECK(c4 == 0.0);

    // far edge clamps down to the last map cell
    auto [rh, ch] = map_coordinate({7, 7}, 4, 2, 2);
    CHECK(rh <= 1.0);
    CHECK(ch <= 1.0);

    // unclamped interior values stay put at stride 1
    auto [r5, c5] = map_coordinate({5, 2}, 1, 8, 8);
    CHECK(r5 == 5.0);
    CHECK(c5 == 2.0);
}

TEST_CASE("map_coordinate: always lands inside the map for every input pixel") {
    const int h = 13, w = 9;
    for (int stride : {1, 2, 4, 8}) {
        const int mh = std::max(1, h / stride), mw = std::max(1, w / stride);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                auto [rf, cf] = map_coordinate({r, c}, stride, mh, mw);
                CHECK(rf >= 0.0);
                CHECK(rf <= mh - 1);
                CHECK(cf >= 0.0);
                CHECK(cf <= mw - 1);
            }
        }
    }
}

TEST_CASE("bilinear_sample: integer coordinates reproduce stored values bit-for-bit") {
    Rng rng(2024);
    const Tensor map = random_tensor({3, 4, 5}, rng);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 5; ++c) {
            const Tensor v = bilinear_sample(map, static_cast<double>(r),
                                             static_cast<double>(c));
            CHECK(v.shape() == std::vector<int>{3});
            for (int ch = 0; ch < 3; ++ch) {
                const double stored =
                    map.data()[static_cast<std::size_t>((ch * 4 + r) * 5 + c)];
                CHECK(v.data()[static_cast<std::size_t>(ch)] == stored);
            }
        }
    }
}

TEST_CASE("bilinear_sample: hand-evaluated 2x2 interior and edge points") {
    const Tensor map = Tensor::from_data({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});

    const Tensor center = bilinear_sample(map, 0.5, 0.5);
    CHECK(center.data()[0] == doctest::Approx(1.5).epsilon(1e-15));

    const Tensor edge = bilinear_sample(map, 0.0, 0.5);
    CHECK(edge.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("bilinear_sample: out-of-range coordinates are rejected") {
    const Tensor map = Tensor::zeros({1, 2, 2});
    CHECK_THROWS_AS(bilinear_sample(map, -0.01, 0.0), ShapeError);
    CHECK_THROWS_AS(bilinear_sample(map, 0.0, 1.01), ShapeError);
    CHECK_THROWS_AS(bilinear_sample(map, 2.0, 0.0), ShapeError);
    CHECK_THROWS_AS(bilinear_sample(Tensor::zeros({2, 2}), 0.0, 0.0), ShapeError);
}

TEST_CASE("bilinear_sample: each channel stays within its 4 source cells") {
    Rng rng(77);
    const Tensor map = random_tensor({2, 6, 7}, rng, -3.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double rf = rng.next_uniform(0.0, 5.0);
        const double cf = rng.next_uniform(0.0, 6.0);
        const Tensor v = bilinear_sample(map, rf, cf);
        const int r0 = static_cast<int>(std::floor(rf));
        const int c0 = static_cast<int>(std::floor(cf));
        const int r1 = std::min(r0 + 1, 5), c1 = std::min(c0 + 1, 6);
        for (int ch = 0; ch < 2; ++ch) {
            const auto at = [&](int r, int c) {
                return map.data()[static_cast<std::size_t>((ch * 6 + r) * 7 + c)];
            };
            const double lo = std::min({at(r0, c0), at(r0, c1), at(r1, c0), at(r1, c1)});
            const double hi = std::max({at(r0, c0), at(r0, c1), at(r1, c0), at(r1, c1)});
            CHECK(v.data()[static_cast<std::size_t>(ch)] >= lo - 1e-12);
            CHECK(v.data()[static_cast<std::size_t>(ch)] <= hi + 1e-12);
        }
    }
}

TEST_CASE("bilinear_sample: gradient matches finite differences") {
    Rng rng(501);
    Tensor map = random_tensor({2, 4, 4}, rng, -1.0, 1.0, true);
    std::vector<Tensor> leaves = {map};
    const double worst = gradcheck([&]() { return sum(bilinear_sample(map, 1.3, 2.7)); },
                                   leaves);
    CHECK(worst < 1e-4);
}

TEST_CASE("extract_hypercolumns: degenerate one-level stride-1 pyramid is a lookup") {
    Rng rng(11);
    FeaturePyramid pyr = make_pyramid(5, 6, {{4, 1}}, rng);
    const std::vector<std::pair<int, int>> pixels = {{0, 0}, {2, 3}, {4, 5}};
    const Tensor h = extract_hypercolumns(pyr, pixels);
    CHECK(h.shape() == std::vector<int>{3, 4});
    for (std::size_t p = 0; p < pixels.size(); ++p) {
        const auto [r, c] = pixels[p];
        for (int ch = 0; ch < 4; ++ch) {
            const double stored =
                pyr.levels[0].map.data()[static_cast<std::size_t>((ch * 5 + r) * 6 + c)];
            CHECK(h.data()[p * 4 + static_cast<std::size_t>(ch)] == stored);
        }
    }
}

TEST_CASE("extract_hypercolumns: concatenation is level-major, F sums channels") {
    FeaturePyramid pyr;
    pyr.input_height = 2;
    pyr.input_width = 2;
    PyramidLevel a;
    a.stride = 1;
    a.map = Tensor::full({2, 2, 2}, 10.0);
    PyramidLevel b;
    b.stride = 2;
    b.map = Tensor::full({3, 1, 1}, 20.0);
    pyr.levels = {a, b};
    CHECK(pyr.feature_width() == 5);

    const Tensor h = extract_hypercolumns(pyr, {{1, 0}});
    CHECK(h.shape() == std::vector<int>{1, 5});
    CHECK(h.data()[0] == 10.0);
    CHECK(h.data()[1] == 10.0);
    CHECK(h.data()[2] == 20.0);
    CHECK(h.data()[3] == 20.0);
    CHECK(h.data()[4] == 20.0);
}

TEST_CASE("extract_hypercolumns: empty pixel list gives a (0,F) tensor") {
    Rng rng(3);
    FeaturePyramid pyr = make_pyramid(8, 8, {{2, 1}, {3, 2}}, rng);
    const Tensor h = extract_hypercolumns(pyr, {});
    CHECK(h.shape() == std::vector<int>{0, 5});
    CHECK(h.size() == 0);
}

TEST_CASE("extract_hypercolumns: out-of-bounds pixels and empty pyramids are rejected") {
    Rng rng(4);
    FeaturePyramid pyr = make_pyramid(8, 8, {{2, 1}}, rng);
    CHECK_THROWS_AS(extract_hypercolumns(pyr, {{8, 0}}), ShapeError);
    CHECK_THROWS_AS(extract_hypercolumns(pyr, {{0, -1}}), ShapeError);
    CHECK_THROWS_AS(extract_hypercolumns(FeaturePyramid{}, {{0, 0}}), ShapeError);
}

TEST_CASE("extract_hypercolumns: matches the per-pixel straight-line oracle") {
    Rng rng(90210);
    FeaturePyramid pyr = make_pyramid(16, 12, {{2, 1}, {3, 2}, {4, 4}}, rng);

    std::vector<std::pair<int, int>> pixels;
    for (int i = 0; i < 10; ++i)
        pixels.emplace_back(static_cast<int>(rng.next_below(16)),
                            static_cast<int>(rng.next_below(12)));

    const Tensor batched = extract_hypercolumns(pyr, pixels);
    const std::vector<double> want = ref::hypercolumn_gather(ref_views(pyr), pixels, 16, 12);
    REQUIRE(static_cast<std::size_t>(batched.size()) == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(batched.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));

    // and against the public per-pixel composition (map + sample + concat)
    const int f = pyr.feature_width();
    for (std::size_t p = 0; p < pixels.size(); ++p) {
        std::size_t col = 0;
        for (const auto& lv : pyr.levels) {
            const auto [rf, cf] =
                map_coordinate(pixels[p], lv.stride, lv.map.dim(1), lv.map.dim(2));
            const Tensor v = bilinear_sample(lv.map, rf, cf);
            for (int ch = 0; ch < lv.map.dim(0); ++ch, ++col) {
                CHECK(batched.data()[p * static_cast<std::size_t>(f) + col] ==
                      doctest::Approx(v.data()[static_cast<std::size_t>(ch)])
                          .epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("extract_hypercolumns: batched equals one-pixel-at-a-time over the full image") {
    Rng rng(515);
    FeaturePyramid pyr = make_pyramid(8, 8, {{2, 1}, {2, 2}}, rng);

    std::vector<std::pair<int, int>> all;
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) all.emplace_back(r, c);

    const Tensor batched = extract_hypercolumns(pyr, all);
    const int f = pyr.feature_width();
    for (std::size_t p = 0; p < all.size(); ++p) {
        const Tensor one = extract_hypercolumns(pyr, {all[p]});
        for (int j = 0; j < f; ++j) {
            CHECK(batched.data()[p * static_cast<std::size_t>(f) +
                                 static_cast<std::size_t>(j)] ==
                  doctest::Approx(one.data()[static_cast<std::size_t>(j)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("extract_hypercolumns: gradients flow into every tapped level") {
    Rng rng(606);
    FeaturePyramid pyr = make_pyramid(8, 8, {{2, 1}, {3, 2}}, rng, true);
    const std::vector<std::pair<int, int>> pixels = {{0, 0}, {3, 4}, {7, 7}, {5, 1}};

    std::vector<Tensor> leaves = {pyr.levels[0].map, pyr.levels[1].map};
    const double worst = gradcheck(
        [&]() {
            const Tensor h = extract_hypercolumns(pyr, pixels);
            return sum(mul(h, h));
        },
        leaves);
    CHECK(worst < 1e-4);

    // reachability: at least one nonzero gradient entry per level
    for (Tensor& leaf : leaves) leaf.zero_grad();
    backward(sum(extract_hypercolumns(pyr, pixels)));
    for (const Tensor& leaf : leaves) {
        bool any = false;
        for (double g : leaf.grad()) any = any || g != 0.0;
        CHECK(any);
    }
}

} // TEST_SUITE
