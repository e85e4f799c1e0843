#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "iseg/data.hpp"
#include "iseg/model.hpp"
#include "iseg/ops.hpp"

using namespace iseg;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

Scene nonempty_scene() {
    SceneConfig sc;
    for (std::uint64_t seed = 0;; ++seed) {
        Scene s = generate_scene(seed, sc);
        if (s.instances.size() >= 2) return s;
    }
}

}  // namespace

TEST_CASE("forward produces one prediction set per decoder stage with the right shapes") {
    RunConfig cfg;
    Rng rng(7);
    ModelWeights w = ModelWeights::make(rng, cfg);
    Scene scene = nonempty_scene();
    ModelOutput out = model_forward(scene.image, w, cfg);

    REQUIRE(static_cast<std::int64_t>(out.stages.size()) == cfg.dec_layers);
    for (const StagePredictions& sp : out.stages) {
        CHECK(sp.cls_logits.shape() == Shape{cfg.num_queries, cfg.num_classes});
        CHECK(sp.boxes.shape() == Shape{cfg.num_queries, 4});
        CHECK(sp.dyn.shape() == Shape{cfg.num_queries, 441});  // (8+1)*(3*4*4+1)
        CHECK(all_finite(sp.cls_logits));
        CHECK(all_finite(sp.dyn));
        for (double v : sp.boxes.data()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK(out.fm.map.shape() == Shape{cfg.mask_channels, 8, 8});
    CHECK(all_finite(out.fm.map));
    CHECK(out.references.shape() == Shape{cfg.num_queries, 2});
    for (double v : out.references.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("same seed builds the same model; different seeds differ") {
    RunConfig cfg;
    Scene scene = nonempty_scene();
    Rng ra(7), rb(7), rc(8);
    ModelWeights a = ModelWeights::make(ra, cfg);
    ModelWeights b = ModelWeights::make(rb, cfg);
    ModelWeights c = ModelWeights::make(rc, cfg);
    ModelOutput oa = model_forward(scene.image, a, cfg);
    ModelOutput ob = model_forward(scene.image, b, cfg);
    ModelOutput oc = model_forward(scene.image, c, cfg);
    CHECK(bit_equal(oa.stages[0].cls_logits, ob.stages[0].cls_logits));
    CHECK(bit_equal(oa.fm.map, ob.fm.map));
    CHECK(!bit_equal(oa.stages[0].cls_logits, oc.stages[0].cls_logits));
}

TEST_CASE("collect yields unique trainable names covering every submodule") {
    RunConfig cfg;
    Rng rng(7);
    ModelWeights w = ModelWeights::make(rng, cfg);
    ParamList params;
    w.collect(params);
    std::set<std::string> names;
    for (const auto& [name, t] : params) {
        CHECK(names.insert(name).second);
        CHECK(t.requires_grad());
        CHECK(all_finite(t));
    }
    for (const char* expected :
         {"backbone.stage1.kernel", "pyramid.lateral3.kernel", "encoder.layer0.attn.offset.b",
          "decoder.layer1.cross_attn.value.w", "decoder.ref.w", "query.content", "query.pos",
          "pre_head.g", "heads.cls.w", "heads.mask.w3", "mask_encoder.proj.w"})
        CHECK(names.count(expected) == 1);
}

TEST_CASE("checkpoints restore a model bit-exactly and reject shape mismatches") {
    RunConfig cfg;
    Scene scene = nonempty_scene();
    Rng ra(7);
    ModelWeights a = ModelWeights::make(ra, cfg);
    Checkpoint ck;
    ck.step = 12;
    ck.config_text = resolved_config_text(cfg);
    a.collect(ck.entries);

    std::filesystem::path path = std::filesystem::temp_directory_path() / "iseg_model_ck.iatc";
    save_checkpoint(path.string(), ck);
    Checkpoint back = load_checkpoint(path.string());
    std::filesystem::remove(path);
    CHECK(back.step == 12);
    CHECK(back.config_text == ck.config_text);

    Rng rb(99);
    ModelWeights b = ModelWeights::make(rb, cfg);
    load_weights(b, back);
    ModelOutput oa = model_forward(scene.image, a, cfg);
    ModelOutput ob = model_forward(scene.image, b, cfg);
    CHECK(bit_equal(oa.stages.back().cls_logits, ob.stages.back().cls_logits));
    CHECK(bit_equal(oa.stages.back().dyn, ob.stages.back().dyn));
    CHECK(bit_equal(oa.fm.map, ob.fm.map));

    RunConfig narrow = cfg;
    narrow.d_model = 16;
    Rng rn(1);
    ModelWeights n = ModelWeights::make(rn, narrow);
    CHECK_THROWS_WITH_AS(load_weights(n, back), doctest::Contains("shape mismatch"),
                         std::runtime_error);

    Checkpoint truncated = back;
    truncated.entries.pop_back();
    Rng rm(2);
    ModelWeights m = ModelWeights::make(rm, cfg);
    CHECK_THROWS_WITH_AS(load_weights(m, truncated), doctest::Contains("missing entry"),
                         std::runtime_error);
}

TEST_CASE("training loss reaches every parameter group") {
    RunConfig cfg;
    Rng rng(7);
    ModelWeights w = ModelWeights::make(rng, cfg);
    Scene scene = nonempty_scene();
    LossConfig lc = make_loss_config(cfg);

    Tape tape;
    LossBreakdown lb;
    {
        TapeScope scope(tape);
        ModelOutput out = model_forward(scene.image, w, cfg);
        lb = total_loss(out.stages, out.fm, scene.instances, lc);
        tape.backward(lb.total);
    }
    CHECK(std::isfinite(lb.total.item()));
    CHECK(lb.total.item() > 0.0);

    ParamList params;
    w.collect(params);
    std::int64_t with_grad = 0;
    double norm_sq = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        ++with_grad;
        for (double g : t.grad()) {
            REQUIRE(std::isfinite(g));
            norm_sq += g * g;
        }
    }
    // Every group must be reached, in particular the mask branch and the
    // learned queries feeding it.
    CHECK(with_grad == static_cast<std::int64_t>(params.size()));
    CHECK(norm_sq > 0.0);
    CHECK(w.query_content.has_grad());
    CHECK(w.heads.mask_w3.has_grad());
    CHECK(w.mask_encoder.proj_w.has_grad());
}
