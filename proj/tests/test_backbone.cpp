#include <cmath>

#include "doctest.h"
#include "iseg/backbone.hpp"
#include "iseg/ops.hpp"

using namespace iseg;

namespace {

Tensor random_image(Rng& rng, std::int64_t h, std::int64_t w) {
    std::vector<double> v(static_cast<std::size_t>(3 * h * w));
    for (double& x : v) x = rng.uniform();
    return Tensor::from_data({3, h, w}, v);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("stage extents follow the stride arithmetic") {
    Rng rng(11);
    BackboneWeights w = BackboneWeights::make(rng);
    const Stages s = extract_stages(random_image(rng, 64, 64), w);
    CHECK(s.c3.shape() == Shape{32, 8, 8});
    CHECK(s.c4.shape() == Shape{32, 4, 4});
    CHECK(s.c5.shape() == Shape{32, 2, 2});

    const Stages r = extract_stages(random_image(rng, 128, 64), w);
    CHECK(r.c3.shape() == Shape{32, 16, 8});
    CHECK(r.c5.shape() == Shape{32, 4, 2});
}

TEST_CASE("zero image with zero biases gives all-zero stages") {
    Rng rng(12);
    BackboneWeights w = BackboneWeights::make(rng);
    const Stages s = extract_stages(Tensor::zeros({3, 64, 64}), w);
    for (const Tensor* t : {&s.c3, &s.c4, &s.c5})
        for (std::int64_t i = 0; i < t->numel(); ++i) CHECK(t->data()[i] == 0.0);
}

TEST_CASE("fixed seed and image give bit-identical stages across runs") {
    Rng ra(99), rb(99);
    BackboneWeights wa = BackboneWeights::make(ra);
    BackboneWeights wb = BackboneWeights::make(rb);
    const Tensor img_a = random_image(ra, 64, 64);
    const Tensor img_b = random_image(rb, 64, 64);
    const Stages sa = extract_stages(img_a, wa);
    const Stages sb = extract_stages(img_b, wb);
    CHECK(bit_equal(sa.c3, sb.c3));
    CHECK(bit_equal(sa.c4, sb.c4));
    CHECK(bit_equal(sa.c5, sb.c5));
}

TEST_CASE("indivisible input extent is rejected") {
    Rng rng(13);
    BackboneWeights w = BackboneWeights::make(rng);
    CHECK_THROWS_WITH_AS(extract_stages(Tensor::zeros({3, 60, 64}), w),
                         doctest::Contains("multiple of 64"), std::runtime_error);
    CHECK_THROWS_WITH_AS(extract_stages(Tensor::zeros({1, 64, 64}), w),
                         doctest::Contains("image must be"), std::runtime_error);
}

TEST_CASE("pyramid levels share channels and follow the 2^l rule") {
    Rng rng(14);
    BackboneWeights bw = BackboneWeights::make(rng);
    PyramidWeights pw = PyramidWeights::make(rng, 32);
    const FeaturePyramid p = build_pyramid(extract_stages(random_image(rng, 64, 128), bw), pw);
    REQUIRE(p.levels.size() == 4);
    CHECK(p.channels() == 32);
    for (int i = 0; i < 4; ++i) {
        const std::int64_t div = std::int64_t{1} << (3 + i);
        CHECK(p.levels[i].shape() == Shape{32, 64 / div, 128 / div});
    }
}

TEST_CASE("64x64 input leaves a single pixel at the coarsest level") {
    Rng rng(15);
    BackboneWeights bw = BackboneWeights::make(rng);
    PyramidWeights pw = PyramidWeights::make(rng, 16);
    const FeaturePyramid p = build_pyramid(extract_stages(random_image(rng, 64, 64), bw), pw);
    CHECK(p.levels[3].shape() == Shape{16, 1, 1});
    CHECK(p.channels() == 16);
}

TEST_CASE("identity 1x1 projections reproduce the stages") {
    Rng rng(16);
    BackboneWeights bw = BackboneWeights::make(rng);
    PyramidWeights pw = PyramidWeights::make(rng, 32);
    for (Tensor& k : pw.lateral_k) {
        for (double& v : k.mutable_data()) v = 0.0;
        for (std::int64_t o = 0; o < 32; ++o) k.mutable_data()[static_cast<std::size_t>(o * 32 + o)] = 1.0;
    }
    const Stages s = extract_stages(random_image(rng, 64, 64), bw);
    const FeaturePyramid p = build_pyramid(s, pw);
    CHECK(bit_equal(p.levels[0], s.c3));
    CHECK(bit_equal(p.levels[1], s.c4));
    CHECK(bit_equal(p.levels[2], s.c5));
}

TEST_CASE("token flattening matches per-level maps and total count") {
    Rng rng(17);
    BackboneWeights bw = BackboneWeights::make(rng);
    PyramidWeights pw = PyramidWeights::make(rng, 8);
    const FeaturePyramid p = build_pyramid(extract_stages(random_image(rng, 64, 64), bw), pw);
    const Tensor tok = p.tokens();
    CHECK(tok.shape() == Shape{64 + 16 + 4 + 1, 8});
    // first row = pixel (0,0) of level 3, last row = the lone level-6 pixel
    for (std::int64_t c = 0; c < 8; ++c) {
        CHECK(tok.at({0, c}) == p.levels[0].at({c, 0, 0}));
        CHECK(tok.at({84, c}) == p.levels[3].at({c, 0, 0}));
    }
}

TEST_CASE("gradients reach the image and every weight") {
    Rng rng(18);
    BackboneWeights bw = BackboneWeights::make(rng);
    PyramidWeights pw = PyramidWeights::make(rng, 8);
    Tensor img = random_image(rng, 64, 64);
    img.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        const FeaturePyramid p = build_pyramid(extract_stages(img, bw), pw);
        Tensor loss = ops::sum_all(p.tokens());
        for (int i = 1; i < 4; ++i) loss = ops::add(loss, ops::mean_all(p.levels[i]));
        tape.backward(loss);
    }
    CHECK(img.has_grad());
    ParamList params;
    bw.collect("backbone", params);
    pw.collect("pyramid", params);
    CHECK(params.size() == 18);
    for (const auto& [name, t] : params) {
        INFO(name);
        CHECK(t.has_grad());
        double asum = 0.0;
        for (double g : t.grad()) asum += std::abs(g);
        CHECK(std::isfinite(asum));
        CHECK(asum > 0.0);
    }
}
