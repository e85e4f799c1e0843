#include <cmath>

#include "doctest.h"
#include "iseg/gradcheck.hpp"
#include "iseg/heads.hpp"
#include "iseg/ops.hpp"

using namespace iseg;

namespace {

Tensor randn(Rng& rng, const Shape& shape, bool grad, double scale = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.normal() * scale;
    Tensor t = Tensor::from_data(shape, v);
    t.set_requires_grad(grad);
    return t;
}

Tensor readout(const Tensor& t, const Tensor& w) { return ops::sum_all(ops::mul(t, w)); }

}  // namespace

TEST_CASE("class head is a linear projection with the right width") {
    Rng rng(41);
    HeadWeights w = HeadWeights::make(rng, 16, 3, 45);
    const Tensor q = randn(rng, {5, 16}, false);
    const Tensor logits = class_head(q, w);
    CHECK(logits.shape() == Shape{5, 3});

    for (double& v : w.cls_w.mutable_data()) v = 0.0;
    for (double& v : w.cls_b.mutable_data()) v = 0.0;
    const Tensor zeroed = class_head(q, w);
    const Tensor probs = ops::sigmoid(zeroed);
    for (std::int64_t i = 0; i < zeroed.numel(); ++i) {
        CHECK(zeroed.data()[i] == 0.0);
        CHECK(probs.data()[i] == 0.5);
    }
}

TEST_CASE("class head gradients match finite differences") {
    Rng rng(42);
    HeadWeights w = HeadWeights::make(rng, 8, 3, 45);
    Tensor q = randn(rng, {4, 8}, true);
    const Tensor rw = randn(rng, {4, 3}, false);
    auto f = [&]() { return readout(class_head(q, w), rw); };
    CHECK(finite_difference_check(f, q) < 1e-4);
    CHECK(finite_difference_check(f, w.cls_w) < 1e-4);
}

TEST_CASE("freshly made box head opens every box at the image center") {
    Rng rng(43);
    HeadWeights w = HeadWeights::make(rng, 16, 3, 45);
    const Tensor boxes = box_head(randn(rng, {6, 16}, false), w);
    REQUIRE(boxes.shape() == Shape{6, 4});
    for (std::int64_t i = 0; i < boxes.numel(); ++i) CHECK(boxes.data()[i] == 0.5);
}

TEST_CASE("box head outputs stay in the open unit interval with ordered corners") {
    Rng rng(44);
    HeadWeights w = HeadWeights::make(rng, 16, 3, 45);
    for (double& v : w.box_w3.mutable_data()) v = rng.normal();
    for (double& v : w.box_b3.mutable_data()) v = rng.normal();
    const Tensor boxes = box_head(randn(rng, {20, 16}, false), w);
    for (std::int64_t i = 0; i < 20; ++i) {
        for (std::int64_t j = 0; j < 4; ++j) {
            CHECK(boxes.at({i, j}) > 0.0);
            CHECK(boxes.at({i, j}) < 1.0);
        }
        const BoxXYXY corners = box_convert(
            BoxCxCyWH{boxes.at({i, 0}), boxes.at({i, 1}), boxes.at({i, 2}), boxes.at({i, 3})});
        CHECK(corners.x1 < corners.x2);
        CHECK(corners.y1 < corners.y2);
    }
}

TEST_CASE("box head gradients match finite differences") {
    Rng rng(45);
    HeadWeights w = HeadWeights::make(rng, 8, 3, 45);
    for (double& v : w.box_w3.mutable_data()) v = rng.normal() * 0.5;
    Tensor q = randn(rng, {3, 8}, true);
    const Tensor rw = randn(rng, {3, 4}, false);
    auto f = [&]() { return readout(box_head(q, w), rw); };
    CHECK(finite_difference_check(f, q) < 1e-4);
    CHECK(finite_difference_check(f, w.box_w1, 1e-5, 16, 7) < 1e-4);
}

TEST_CASE("mask branch emits raw parameter rows of the configured size") {
    Rng rng(46);
    HeadWeights w = HeadWeights::make(rng, 16, 3, 441);
    const Tensor dyn = mask_branch(randn(rng, {5, 16}, false), w);
    CHECK(dyn.shape() == Shape{5, 441});

    for (double& v : w.mask_w3.mutable_data()) v = 0.0;
    const Tensor zeroed = mask_branch(randn(rng, {2, 16}, false), w);
    for (std::int64_t i = 0; i < zeroed.numel(); ++i) CHECK(zeroed.data()[i] == 0.0);
}

TEST_CASE("mask branch gradients match finite differences") {
    Rng rng(47);
    HeadWeights w = HeadWeights::make(rng, 8, 3, 45);
    for (double& v : w.mask_w3.mutable_data()) v = rng.normal() * 0.3;
    Tensor q = randn(rng, {3, 8}, true);
    const Tensor rw = randn(rng, {3, 45}, false);
    auto f = [&]() { return readout(mask_branch(q, w), rw); };
    CHECK(finite_difference_check(f, q) < 1e-4);
}

TEST_CASE("per-query extraction matches the batched tensors") {
    Rng rng(48);
    HeadWeights w = HeadWeights::make(rng, 16, 3, 45);
    for (double& v : w.box_w3.mutable_data()) v = rng.normal();
    const Tensor q = randn(rng, {4, 16}, false);
    const Tensor cls = class_head(q, w);
    const Tensor boxes = box_head(q, w);
    const Tensor dyn = mask_branch(q, w);
    const QueryPrediction p = extract_prediction(cls, boxes, dyn, 2);
    CHECK(p.class_logits.shape() == Shape{3});
    CHECK(p.dyn_params.shape() == Shape{45});
    for (std::int64_t c = 0; c < 3; ++c) CHECK(p.class_logits.at({c}) == cls.at({2, c}));
    CHECK(p.box.cx == boxes.at({2, 0}));
    CHECK(p.box.h == boxes.at({2, 3}));
    for (std::int64_t c = 0; c < 45; ++c) CHECK(p.dyn_params.at({c}) == dyn.at({2, c}));
}
