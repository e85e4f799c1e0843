#include "iseg/model.hpp"

#include "iseg/init.hpp"
#include "iseg/ops.hpp"

namespace iseg {
namespace {

Tensor ones_param(const Shape& shape) {
    Tensor t = Tensor::full(shape, 1.0);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

ModelWeights ModelWeights::make(Rng& rng, const RunConfig& cfg) {
    validate_run_config(cfg);
    const std::int64_t d = cfg.d_model;
    ModelWeights w;
    w.backbone = BackboneWeights::make(rng);
    w.pyramid = PyramidWeights::make(rng, d);
    w.encoder = EncoderWeights::make(rng, d, cfg.ffn_dim, cfg.enc_heads, cfg.enc_points,
                                     kPyramidLevels, cfg.enc_layers);
    w.decoder = DecoderWeights::make(rng, d, cfg.ffn_dim, cfg.dec_heads, cfg.dec_points,
                                     kPyramidLevels, cfg.dec_layers);
    w.query_content = normal_param(rng, {cfg.num_queries, d}, 1.0);
    w.query_pos = normal_param(rng, {cfg.num_queries, d}, 1.0);
    w.pre_head_g = ones_param({d});
    w.pre_head_b = zeros_param({d});
    const std::int64_t dyn =
        expected_param_count(cfg.mask_channels, cfg.mask_heads, cfg.mask_points);
    w.heads = HeadWeights::make(rng, d, cfg.num_classes, dyn);
    w.mask_encoder = MaskEncoderWeights::make(rng, d, cfg.ffn_dim, cfg.enc_heads, cfg.enc_points,
                                              cfg.mask_encoder_layers, cfg.mask_channels);
    return w;
}

void ModelWeights::collect(ParamList& out) const {
    backbone.collect("backbone", out);
    pyramid.collect("pyramid", out);
    encoder.collect("encoder", out);
    decoder.collect("decoder", out);
    out.emplace_back("query.content", query_content);
    out.emplace_back("query.pos", query_pos);
    out.emplace_back("pre_head.g", pre_head_g);
    out.emplace_back("pre_head.b", pre_head_b);
    heads.collect("heads", out);
    mask_encoder.collect("mask_encoder", out);
}

ModelOutput model_forward(const Tensor& image, const ModelWeights& w, const RunConfig& cfg) {
    Stages st = extract_stages(image, w.backbone);
    FeaturePyramid pyr = build_pyramid(st, w.pyramid);
    std::vector<kernels::LevelShape> levels = pyr.shapes();
    EncodingConfig pe = make_pe_config(cfg);

    Tensor memory = encoder_stack(pyr.tokens(), levels, pe, w.encoder);
    DecoderOutput dec =
        decoder_stack(w.query_content, w.query_pos, memory, levels, w.decoder);

    ModelOutput out;
    for (const Tensor& stage : dec.stages) {
        Tensor h = ops::layer_norm(stage, w.pre_head_g, w.pre_head_b);
        out.stages.push_back(
            StagePredictions{class_head(h, w.heads), box_head(h, w.heads), mask_branch(h, w.heads)});
    }
    // Mask features come from the refined stride-8 slice of the memory.
    Tensor p3 = ops::tokens_to_map(ops::slice_rows(memory, 0, levels[0].h * levels[0].w),
                                   levels[0].h, levels[0].w);
    out.fm = mask_encoder(p3, pe, w.mask_encoder);
    out.references = dec.references;
    return out;
}

void load_weights(ModelWeights& w, const Checkpoint& ck) {
    ParamList params;
    w.collect(params);
    for (std::pair<std::string, Tensor>& entry : params) {
        const Tensor* src = ck.find(entry.first);
        check(src != nullptr, "checkpoint: missing entry " + entry.first);
        check(src->shape() == entry.second.shape(),
              "checkpoint/config shape mismatch for " + entry.first);
        entry.second.mutable_data() = src->data();
    }
}

}  // namespace iseg
