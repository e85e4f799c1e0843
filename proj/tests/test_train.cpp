#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "iseg/train.hpp"

using namespace iseg;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

ParamList single_param(double value) {
    Tensor p = Tensor::from_data({1}, {value});
    p.set_requires_grad(true);
    return ParamList{{"p", p}};
}

std::vector<Scene> training_scenes(std::size_t count) {
    SceneConfig sc;
    std::vector<Scene> scenes;
    for (std::uint64_t seed = 0; scenes.size() < count; ++seed) {
        Scene s = generate_scene(seed, sc);
        if (!s.instances.empty()) scenes.push_back(std::move(s));
    }
    return scenes;
}

}  // namespace

TEST_CASE("first Adam update matches the closed form") {
    RunConfig cfg;
    cfg.lr = 0.1;
    cfg.clip_norm = 100.0;  // inactive
    ParamList params = single_param(1.0);
    AdamState opt = AdamState::make(params, cfg);
    params[0].second.grad_buffer()[0] = 0.5;
    adam_step(params, opt);
    // At t=1 the bias corrections cancel exactly: step = lr*g/(|g|+eps).
    double expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(params[0].second.data()[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(opt.t == 1);
    CHECK(opt.m[0].data()[0] == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(opt.v[0].data()[0] == doctest::Approx(0.00025).epsilon(1e-15));
    CHECK_FALSE(params[0].second.has_grad());  // buffers dropped

    // A second identical gradient keeps mhat/sqrt(vhat) = sign(g) exactly.
    params[0].second.grad_buffer()[0] = 0.5;
    adam_step(params, opt);
    CHECK(params[0].second.data()[0] ==
          doctest::Approx(expected - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("global clipping rescales gradients before the moments see them") {
    RunConfig cfg;
    cfg.clip_norm = 1.0;
    Tensor a = Tensor::from_data({1}, {0.0});
    Tensor b = Tensor::from_data({1}, {0.0});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    ParamList params{{"a", a}, {"b", b}};
    CHECK(global_grad_norm(params) == 0.0);
    a.grad_buffer()[0] = 3.0;
    b.grad_buffer()[0] = 4.0;
    CHECK(global_grad_norm(params) == 5.0);
    AdamState opt = AdamState::make(params, cfg);
    adam_step(params, opt);
    CHECK(opt.m[0].data()[0] == doctest::Approx(0.1 * 0.6).epsilon(1e-15));
    CHECK(opt.m[1].data()[0] == doctest::Approx(0.1 * 0.8).epsilon(1e-15));
}

TEST_CASE("parameters without a gradient this step keep value and moments") {
    RunConfig cfg;
    ParamList params = single_param(2.5);
    AdamState opt = AdamState::make(params, cfg);
    adam_step(params, opt);
    CHECK(params[0].second.data()[0] == 2.5);
    CHECK(opt.m[0].data()[0] == 0.0);
    CHECK(opt.t == 1);
}

TEST_CASE("fresh trainers are deterministic step for step") {
    RunConfig cfg;
    cfg.steps = 2;
    std::vector<Scene> scenes = training_scenes(1);
    Trainer a = Trainer::fresh(cfg);
    Trainer b = Trainer::fresh(cfg);
    LossBreakdown la = a.train_step(scenes[0]);
    LossBreakdown lb = b.train_step(scenes[0]);
    CHECK(la.total.item() == lb.total.item());
    CHECK(la.cls == lb.cls);
    CHECK(la.dice == lb.dice);
    for (std::size_t i = 0; i < a.params.size(); ++i)
        CHECK(bit_equal(a.params[i].second, b.params[i].second));
}

TEST_CASE("checkpoint resume reproduces the next step bit-exactly") {
    RunConfig cfg;
    std::vector<Scene> scenes = training_scenes(2);
    Trainer a = Trainer::fresh(cfg);
    a.train_step(scenes[0]);
    a.train_step(scenes[1]);

    std::filesystem::path path = std::filesystem::temp_directory_path() / "iseg_resume.iatc";
    save_checkpoint(path.string(), a.checkpoint());  // snapshot before continuing
    LossBreakdown next = a.train_step(scenes[0]);

    Trainer b = Trainer::resume(load_checkpoint(path.string()));
    std::filesystem::remove(path);
    CHECK(b.step() == 2);
    LossBreakdown redo = b.train_step(scenes[0]);
    CHECK(redo.total.item() == next.total.item());
    CHECK(redo.l1 == next.l1);
    CHECK(redo.bce == next.bce);
    for (std::size_t i = 0; i < a.params.size(); ++i)
        CHECK(bit_equal(a.params[i].second, b.params[i].second));
}

TEST_CASE("a non-finite forward fails fast and leaves parameters untouched") {
    RunConfig cfg;
    std::vector<Scene> scenes = training_scenes(1);
    Trainer tr = Trainer::fresh(cfg);
    // The ops layer rejects non-finite results at construction, so a poisoned
    // weight aborts the step as an exception before any update happens.
    tr.weights.heads.mask_w3.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> snapshot;
    for (const auto& [name, t] : tr.params) snapshot.push_back(t.data());
    CHECK_THROWS_WITH_AS(tr.train_step(scenes[0]), doctest::Contains("non-finite"),
                         std::runtime_error);
    CHECK(tr.step() == 0);
    for (std::size_t i = 0; i < tr.params.size(); ++i) {
        const std::vector<double>& now = tr.params[i].second.data();
        const std::vector<double>& before = snapshot[i];
        for (std::size_t k = 0; k < now.size(); ++k)
            CHECK((now[k] == before[k] || (std::isnan(now[k]) && std::isnan(before[k]))));
    }
}

TEST_CASE("prediction extraction respects threshold, ordering, and top_k") {
    RunConfig cfg;
    Rng rng(7);
    ModelWeights w = ModelWeights::make(rng, cfg);
    Scene scene = training_scenes(1)[0];

    // Fresh heads are biased to ~0.01 confidence, so the default threshold
    // keeps nothing.
    CHECK(predict_instances(w, cfg, scene.image).empty());

    RunConfig open = cfg;
    open.score_threshold = 0.0;
    std::vector<PredictionInstance> all = predict_instances(w, open, scene.image);
    CHECK(static_cast<std::int64_t>(all.size()) == cfg.num_queries);
    for (std::size_t i = 0; i + 1 < all.size(); ++i) CHECK(all[i].score >= all[i + 1].score);
    for (const PredictionInstance& p : all) {
        CHECK(p.score > 0.0);
        CHECK(p.score < 1.0);
        CHECK(p.class_id >= 0);
        CHECK(p.class_id < cfg.num_classes);
        CHECK(p.mask_probs.shape() == Shape{8, 8});
        for (double v : p.mask_probs.data()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }

    open.top_k = 3;
    CHECK(predict_instances(w, open, scene.image).size() == 3);
}

TEST_CASE("matched mask IoU is a mean over targets in [0,1]") {
    RunConfig cfg;
    Rng rng(7);
    ModelWeights w = ModelWeights::make(rng, cfg);
    std::vector<Scene> scenes = training_scenes(2);
    double iou = matched_mask_iou(w, cfg, scenes);
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);

    Scene empty;
    empty.image = scenes[0].image;
    CHECK(matched_mask_iou(w, cfg, {empty}) == 0.0);
}

TEST_CASE("a few optimizer steps on one scene reduce its loss") {
    RunConfig cfg;
    std::vector<Scene> scenes = training_scenes(1);
    Trainer tr = Trainer::fresh(cfg);
    double first = tr.train_step(scenes[0]).total.item();
    double last = first;
    for (int i = 0; i < 24; ++i) last = tr.train_step(scenes[0]).total.item();
    CHECK(std::isfinite(last));
    CHECK(last < first);
}
