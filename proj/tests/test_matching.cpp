#include <cmath>
#include <functional>

#include "doctest.h"
#include "iseg/gradcheck.hpp"
#include "iseg/matching.hpp"
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

// Exhaustive reference: enumerates injective target->prediction maps in
// lexicographic order, keeping the first minimum (strict <), which realizes
// the same tie-break as the solver.
std::vector<std::int64_t> brute_force(const Tensor& cost) {
    const std::int64_t n = cost.dim(0), g = cost.dim(1);
    std::vector<std::int64_t> best, cur;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    std::function<void(std::int64_t, double)> rec = [&](std::int64_t t, double acc) {
        if (t == g) {
            if (acc < best_cost) {
                best_cost = acc;
                best = cur;
            }
            return;
        }
        for (std::int64_t p = 0; p < n; ++p) {
            if (used[static_cast<std::size_t>(p)]) continue;
            used[static_cast<std::size_t>(p)] = 1;
            cur.push_back(p);
            rec(t + 1, acc + cost.at({p, t}));
            cur.pop_back();
            used[static_cast<std::size_t>(p)] = 0;
        }
    };
    rec(0, 0.0);
    return best;
}

double assignment_cost(const Tensor& cost, const std::vector<std::int64_t>& a) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j)
        s += cost.at({a[j], static_cast<std::int64_t>(j)});
    return s;
}

InstanceTarget make_target(std::int64_t cls, BoxCxCyWH box, std::int64_t hw = 32) {
    InstanceTarget t;
    t.class_id = cls;
    t.box = box;
    const BoxXYXY c = box_convert(box);
    std::vector<double> m(static_cast<std::size_t>(hw * hw), 0.0);
    for (std::int64_t y = 0; y < hw; ++y)
        for (std::int64_t x = 0; x < hw; ++x) {
            const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(hw);
            const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(hw);
            if (nx >= c.x1 && nx <= c.x2 && ny >= c.y1 && ny <= c.y2)
                m[static_cast<std::size_t>(y * hw + x)] = 1.0;
        }
    t.mask = Tensor::from_data({hw, hw}, std::move(m));
    return t;
}

StagePredictions make_stage(Rng& rng, std::int64_t n, std::int64_t c, std::int64_t d,
                            bool grad) {
    StagePredictions sp;
    sp.cls_logits = randn(rng, {n, c}, grad);
    sp.boxes = ops::sigmoid(randn(rng, {n, 4}, false));
    sp.boxes.set_requires_grad(grad);
    sp.dyn = randn(rng, {n, d}, grad, 0.1);
    return sp;
}

void shift_offset_bias(Tensor& dyn, std::int64_t c, std::int64_t m, std::int64_t k, Rng& rng) {
    const std::int64_t start = 2 * m * k * c;
    for (std::int64_t row = 0; row < dyn.dim(0); ++row)
        for (std::int64_t i = start; i < start + 2 * m * k; ++i)
            dyn.mutable_data()[static_cast<std::size_t>(row * dyn.dim(1) + i)] +=
                rng.uniform(0.15, 0.35);
}

}  // namespace

TEST_CASE("solver handles the worked examples") {
    const Tensor c1 = Tensor::from_data({2, 2}, {1.0, 2.0, 2.0, 1.0});
    const Assignment a1 = hungarian(c1);
    CHECK(a1.pred_of_target == std::vector<std::int64_t>{0, 1});
    CHECK(assignment_cost(c1, a1.pred_of_target) == 2.0);

    const Tensor c2 = Tensor::from_data(
        {3, 3}, {0.0, 10.0, 10.0, 10.0, 0.0, 10.0, 10.0, 10.0, 0.0});
    CHECK(hungarian(c2).pred_of_target == std::vector<std::int64_t>{0, 1, 2});

    CHECK(hungarian(Tensor::from_data({1, 1}, {7.0})).pred_of_target ==
          std::vector<std::int64_t>{0});

    // more predictions than targets
    const Tensor c3 = Tensor::from_data({3, 1}, {5.0, 1.0, 3.0});
    CHECK(hungarian(c3).pred_of_target == std::vector<std::int64_t>{1});
}

TEST_CASE("exact ties resolve to the lexicographically smallest assignment") {
    CHECK(hungarian(Tensor::zeros({3, 2})).pred_of_target == std::vector<std::int64_t>{0, 1});
    CHECK(hungarian(Tensor::full({4, 3}, 2.5)).pred_of_target ==
          std::vector<std::int64_t>{0, 1, 2});
    // both diagonals cost 2; identity wins the tie
    CHECK(hungarian(Tensor::from_data({2, 2}, {1.0, 1.0, 1.0, 1.0})).pred_of_target ==
          std::vector<std::int64_t>{0, 1});
    // target 0 prefers the smallest prediction even when target 1 then pays more
    const Tensor t = Tensor::from_data({3, 2}, {0.0, 0.0, 0.0, 5.0, 5.0, 0.0});
    CHECK(hungarian(t).pred_of_target == std::vector<std::int64_t>{0, 2});
}

TEST_CASE("solver rejects malformed inputs") {
    CHECK_THROWS_WITH_AS(hungarian(Tensor::zeros({2, 3})), doctest::Contains("more targets"),
                         std::runtime_error);
    Tensor bad = Tensor::zeros({2, 2});
    bad.mutable_data()[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(hungarian(bad), doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("solver matches exhaustive search on a thousand random instances") {
    Rng rng(61);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::int64_t n = rng.uniform_int(1, 7);
        const std::int64_t g = rng.uniform_int(1, n);
        std::vector<double> v(static_cast<std::size_t>(n * g));
        for (double& x : v) x = rng.uniform(-5.0, 5.0);
        const Tensor cost = Tensor::from_data({n, g}, v);
        const std::vector<std::int64_t> got = hungarian(cost).pred_of_target;
        const std::vector<std::int64_t> want = brute_force(cost);
        REQUIRE(got == want);
        CHECK(assignment_cost(cost, got) == assignment_cost(cost, want));
    }
}

TEST_CASE("matching cost rewards the exact prediction and punishes mismatch") {
    const LossWeights w;
    const BoxCxCyWH box{0.5, 0.5, 0.25, 0.25};
    const std::vector<InstanceTarget> targets = {make_target(1, box)};
    const Tensor boxes = Tensor::from_data({2, 4}, {0.5, 0.5, 0.25, 0.25, 0.9, 0.9, 0.05, 0.05});
    const Tensor confident =
        Tensor::from_data({2, 3}, {-40.0, 40.0, -40.0, -40.0, -40.0, -40.0});
    const Tensor cost = matching_cost(confident, boxes, targets, w);
    REQUIRE(cost.shape() == Shape{2, 1});
    CHECK(std::abs(cost.at({0, 0}) - (-2.0)) < 1e-10);  // only the class reward survives
    CHECK(cost.at({1, 0}) > cost.at({0, 0}));

    // identical boxes, zero confidence -> every term cancels
    const Tensor zero_conf = Tensor::full({1, 3}, -40.0);
    const Tensor same = Tensor::from_data({1, 4}, {0.5, 0.5, 0.25, 0.25});
    CHECK(std::abs(matching_cost(zero_conf, same, targets, w).at({0, 0})) < 1e-10);
}

TEST_CASE("dice loss hits its closed forms") {
    // identical binary masks: exactly zero
    const Tensor m = Tensor::from_data({2, 3}, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    CHECK(dice_loss(m, m).item() == 0.0);

    // disjoint n-pixel masks: 1 - 1/(2n+1)
    for (std::int64_t n : {1, 4, 9}) {
        std::vector<double> a(static_cast<std::size_t>(2 * n), 0.0), b = a;
        for (std::int64_t i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = 1.0;
            b[static_cast<std::size_t>(n + i)] = 1.0;
        }
        const Tensor ta = Tensor::from_data({2 * n}, a), tb = Tensor::from_data({2 * n}, b);
        CHECK(std::abs(dice_loss(ta, tb).item() -
                       (1.0 - 1.0 / static_cast<double>(2 * n + 1))) < 1e-15);
    }

    // all-0.5 prediction against an n-of-2n target: 1 - (n+1)/(2n+1)
    const std::int64_t n = 8;
    std::vector<double> t(static_cast<std::size_t>(2 * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = 1.0;
    const Tensor half = Tensor::full({2 * n}, 0.5);
    CHECK(std::abs(dice_loss(half, Tensor::from_data({2 * n}, t)).item() -
                   (1.0 - static_cast<double>(n + 1) / static_cast<double>(2 * n + 1))) < 1e-15);
}

TEST_CASE("dice loss is bounded and symmetric on binary masks") {
    Rng rng(62);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(24), b(24);
        for (double& x : a) x = rng.uniform() < 0.4 ? 1.0 : 0.0;
        for (double& x : b) x = rng.uniform() < 0.4 ? 1.0 : 0.0;
        const Tensor ta = Tensor::from_data({24}, a), tb = Tensor::from_data({24}, b);
        const double fwd = dice_loss(ta, tb).item();
        CHECK(fwd >= 0.0);
        CHECK(fwd < 1.0);
        CHECK(fwd == dice_loss(tb, ta).item());
    }
    CHECK_THROWS_WITH_AS(dice_loss(Tensor::zeros({4}), Tensor::full({4}, 0.3)),
                         doctest::Contains("not binary"), std::runtime_error);
}

TEST_CASE("block max downsampling keeps any covered cell") {
    Tensor m = Tensor::zeros({4, 8});
    m.mutable_data()[3] = 1.0;   // (0,3) -> block (0,1)
    m.mutable_data()[17] = 1.0;  // (2,1) -> block (1,0)
    const Tensor d = downsample_mask_block_max(m, 2);
    REQUIRE(d.shape() == Shape{2, 4});
    CHECK(d.at({0, 1}) == 1.0);
    CHECK(d.at({1, 0}) == 1.0);
    CHECK(d.at({0, 0}) == 0.0);
    CHECK_THROWS_WITH_AS(downsample_mask_block_max(m, 3), doctest::Contains("not divisible"),
                         std::runtime_error);
}

TEST_CASE("focal loss reduces to halved bce at gamma zero alpha half") {
    Rng rng(63);
    const Tensor logits = randn(rng, {4, 3}, false);
    std::vector<double> t(12);
    for (double& x : t) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Tensor targets = Tensor::from_data({4, 3}, t);
    const double focal = ops::sigmoid_focal_loss_sum(logits, targets, 0.5, 0.0).item();
    const double bce = ops::bce_with_logits_sum(logits, targets).item();
    CHECK(std::abs(focal - 0.5 * bce) < 1e-12);

    // a positive at logit zero costs alpha * 0.5^gamma * ln 2
    const double one = ops::sigmoid_focal_loss_sum(Tensor::zeros({1, 1}), Tensor::full({1, 1}, 1.0),
                                                   0.25, 2.0)
                           .item();
    CHECK(std::abs(one - 0.25 * 0.25 * std::log(2.0)) < 1e-15);
}

TEST_CASE("zero mask stages leave the mask branch without gradient") {
    Rng rng(64);
    const std::int64_t d_param = expected_param_count(4, 2, 2);
    std::vector<StagePredictions> stages = {make_stage(rng, 3, 3, d_param, true),
                                            make_stage(rng, 3, 3, d_param, true)};
    const MaskFeature fm = {randn(rng, {4, 4, 4}, false)};
    const std::vector<InstanceTarget> targets = {make_target(0, {0.4, 0.4, 0.3, 0.3})};
    LossConfig cfg;
    cfg.mask_stages = 0;
    cfg.mask_heads = 2;
    cfg.mask_points = 2;

    Tape tape;
    {
        TapeScope scope(tape);
        const LossBreakdown lb = total_loss(stages, fm, targets, cfg);
        CHECK(lb.dice == 0.0);
        CHECK(lb.bce == 0.0);
        CHECK(lb.cls > 0.0);
        tape.backward(lb.total);
    }
    for (const StagePredictions& sp : stages) {
        CHECK(!sp.dyn.has_grad());
        CHECK(sp.cls_logits.has_grad());
        CHECK(sp.boxes.has_grad());
    }
}

TEST_CASE("mask stages feed gradient into the mask branch") {
    Rng rng(65);
    const std::int64_t d_param = expected_param_count(4, 2, 2);
    std::vector<StagePredictions> stages = {make_stage(rng, 3, 3, d_param, true),
                                            make_stage(rng, 3, 3, d_param, true)};
    const MaskFeature fm = {randn(rng, {4, 4, 4}, false)};
    const std::vector<InstanceTarget> targets = {make_target(2, {0.5, 0.6, 0.4, 0.3})};
    LossConfig cfg;
    cfg.mask_stages = 1;
    cfg.mask_heads = 2;
    cfg.mask_points = 2;

    Tape tape;
    {
        TapeScope scope(tape);
        const LossBreakdown lb = total_loss(stages, fm, targets, cfg);
        CHECK(lb.dice > 0.0);
        CHECK(lb.bce > 0.0);
        tape.backward(lb.total);
    }
    CHECK(!stages[0].dyn.has_grad());  // only the final stage carries mask loss
    CHECK(stages[1].dyn.has_grad());

    LossConfig bad = cfg;
    bad.mask_stages = 3;
    CHECK_THROWS_WITH_AS(total_loss(stages, fm, targets, bad), doctest::Contains("out of range"),
                         std::runtime_error);
}

TEST_CASE("improving a matched box strictly shrinks the iou term") {
    Rng rng(66);
    const std::vector<InstanceTarget> targets = {make_target(0, {0.5, 0.5, 0.3, 0.3})};
    LossConfig cfg;
    cfg.mask_stages = 0;
    StagePredictions sp;
    sp.cls_logits = Tensor::from_data({2, 2}, {5.0, -5.0, -5.0, -5.0});
    sp.boxes = Tensor::from_data({2, 4}, {0.42, 0.42, 0.3, 0.3, 0.9, 0.9, 0.05, 0.05});
    sp.dyn = Tensor::zeros({2, 45});
    const MaskFeature fm = {randn(rng, {4, 4, 4}, false)};
    const double worse = total_loss({sp}, fm, targets, cfg).iou;

    StagePredictions better = sp;
    better.boxes = Tensor::from_data({2, 4}, {0.47, 0.47, 0.3, 0.3, 0.9, 0.9, 0.05, 0.05});
    CHECK(total_loss({better}, fm, targets, cfg).iou < worse);
}

TEST_CASE("near-perfect detection drives the detection loss toward zero") {
    Rng rng(67);
    const std::vector<InstanceTarget> targets = {make_target(1, {0.5, 0.5, 0.25, 0.25})};
    StagePredictions sp;
    sp.cls_logits = Tensor::from_data({2, 3}, {-40.0, 40.0, -40.0, -40.0, -40.0, -40.0});
    sp.boxes = Tensor::from_data({2, 4}, {0.5, 0.5, 0.25, 0.25, 0.3, 0.3, 0.1, 0.1});
    sp.dyn = Tensor::zeros({2, 45});
    LossConfig cfg;
    cfg.mask_stages = 0;
    const MaskFeature fm = {randn(rng, {4, 4, 4}, false)};
    const LossBreakdown lb = total_loss({sp}, fm, targets, cfg);
    CHECK(lb.total.item() < 1e-6);
    CHECK(lb.l1 == 0.0);
    CHECK(std::abs(lb.iou) < 1e-12);
}

TEST_CASE("a scene without instances trains classification only") {
    Rng rng(68);
    std::vector<StagePredictions> stages = {make_stage(rng, 4, 3, 45, true)};
    const MaskFeature fm = {randn(rng, {4, 4, 4}, false)};
    LossConfig cfg;
    cfg.mask_stages = 1;
    cfg.mask_heads = 2;
    cfg.mask_points = 2;
    Tape tape;
    {
        TapeScope scope(tape);
        const LossBreakdown lb = total_loss(stages, fm, {}, cfg);
        CHECK(lb.cls > 0.0);
        CHECK(lb.l1 == 0.0);
        CHECK(lb.iou == 0.0);
        CHECK(lb.dice == 0.0);
        CHECK(lb.bce == 0.0);
        tape.backward(lb.total);
    }
    CHECK(stages[0].cls_logits.has_grad());
    CHECK(!stages[0].boxes.has_grad());
}

TEST_CASE("mask-aware matching can flip an otherwise tied assignment") {
    Rng rng(69);
    const std::int64_t d_param = expected_param_count(4, 2, 2);
    StagePredictions sp;
    sp.cls_logits = Tensor::zeros({2, 2});
    sp.boxes = Tensor::from_data({2, 4}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
    Tensor dyn = Tensor::zeros({2, d_param});
    dyn.mutable_data()[static_cast<std::size_t>(0 * d_param + d_param - 1)] = -3.0;
    dyn.mutable_data()[static_cast<std::size_t>(1 * d_param + d_param - 1)] = 3.0;
    sp.dyn = dyn;
    InstanceTarget t = make_target(0, {0.5, 0.5, 0.9, 0.9});
    for (double& v : t.mask.mutable_data()) v = 1.0;  // full-frame instance
    const MaskFeature fm = {randn(rng, {4, 4, 4}, false)};

    LossConfig cfg;
    cfg.mask_stages = 1;
    cfg.mask_heads = 2;
    cfg.mask_points = 2;
    const LossBreakdown plain = total_loss({sp}, fm, {t}, cfg);
    CHECK(plain.stage_assignments[0].pred_of_target == std::vector<std::int64_t>{0});

    cfg.match_include_mask = true;
    const LossBreakdown masked = total_loss({sp}, fm, {t}, cfg);
    CHECK(masked.stage_assignments[0].pred_of_target == std::vector<std::int64_t>{1});
}

TEST_CASE("loss gradients match finite differences on a micro instance") {
    Rng rng(70);
    const std::int64_t d_param = expected_param_count(4, 2, 2);
    std::vector<StagePredictions> stages = {make_stage(rng, 2, 2, d_param, true)};
    shift_offset_bias(stages[0].dyn, 4, 2, 2, rng);
    const MaskFeature fm = {randn(rng, {4, 4, 4}, true)};
    const std::vector<InstanceTarget> targets = {make_target(1, {0.55, 0.45, 0.4, 0.35})};
    LossConfig cfg;
    cfg.mask_stages = 1;
    cfg.mask_heads = 2;
    cfg.mask_points = 2;
    auto f = [&]() { return total_loss(stages, fm, targets, cfg).total; };
    CHECK(finite_difference_check(f, stages[0].cls_logits) < 1e-3);
    CHECK(finite_difference_check(f, stages[0].boxes) < 1e-3);
    CHECK(finite_difference_check(f, stages[0].dyn, 1e-5, 40, 11) < 1e-3);
    CHECK(finite_difference_check(f, fm.map, 1e-5, 30, 12) < 1e-3);
}
