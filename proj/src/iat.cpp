#include "iseg/iat.hpp"

#include "iseg/init.hpp"
#include "iseg/ops.hpp"

namespace iseg {

std::int64_t expected_param_count(std::int64_t c, std::int64_t m, std::int64_t k) {
    check(c > 0 && m > 0 && k > 0, "expected_param_count: counts must be positive");
    check(c % m == 0, "expected_param_count: channels " + std::to_string(c) +
                          " not divisible by heads " + std::to_string(m));
    return (c + 1) * (3 * m * k + 1);
}

DynamicLayers unpack_params(const Tensor& vec, std::int64_t c, std::int64_t m, std::int64_t k) {
    const std::int64_t d = expected_param_count(c, m, k);
    check(vec.rank() == 1 && vec.numel() == d,
          "unpack_params: expected [" + std::to_string(d) + "], got " + shape_str(vec.shape()));
    DynamicLayers dyn;
    dyn.heads = m;
    dyn.points = k;
    dyn.channels = c;
    const std::int64_t mk = m * k;
    std::int64_t at = 0;
    auto take = [&](std::int64_t n, Shape shape) {
        Tensor part = ops::reshape(ops::slice_rows(vec, at, n), std::move(shape));
        at += n;
        return part;
    };
    dyn.offset_w = take(2 * mk * c, {2 * mk, c});
    dyn.offset_b = take(2 * mk, {2 * mk});
    dyn.weight_w = take(mk * c, {mk, c});
    dyn.weight_b = take(mk, {mk});
    dyn.output_w = take(c, {1, c});
    dyn.output_b = take(1, {1});
    return dyn;
}

Tensor flatten_params(const DynamicLayers& dyn) {
    const std::int64_t mk = dyn.heads * dyn.points;
    const std::int64_t c = dyn.channels;
    std::vector<Tensor> parts = {
        ops::reshape(dyn.offset_w, {2 * mk * c}), dyn.offset_b,
        ops::reshape(dyn.weight_w, {mk * c}),     dyn.weight_b,
        ops::reshape(dyn.output_w, {c}),          dyn.output_b,
    };
    return ops::concat_rows(parts);
}

MaskEncoderWeights MaskEncoderWeights::make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                            std::int64_t heads, std::int64_t points,
                                            std::int64_t num_layers, std::int64_t c_mask) {
    MaskEncoderWeights w;
    for (std::int64_t i = 0; i < num_layers; ++i)
        w.layers.push_back(EncoderLayerWeights::make(rng, d, ffn_hidden, heads, points, 1));
    w.proj_w = linear_init(rng, c_mask, d);
    w.proj_b = zeros_param({c_mask});
    w.norm_g = Tensor::full({c_mask}, 1.0);
    w.norm_g.set_requires_grad(true);
    w.norm_b = zeros_param({c_mask});
    return w;
}

void MaskEncoderWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    out.emplace_back(prefix + ".proj.w", proj_w);
    out.emplace_back(prefix + ".proj.b", proj_b);
    out.emplace_back(prefix + ".norm.gamma", norm_g);
    out.emplace_back(prefix + ".norm.beta", norm_b);
}

MaskFeature mask_encoder(const Tensor& p3_map, const EncodingConfig& pe_cfg,
                         const MaskEncoderWeights& w) {
    check(p3_map.rank() == 3, "mask_encoder: map must be [d,h,w]");
    const std::int64_t h = p3_map.dim(1), wd = p3_map.dim(2);
    const std::vector<kernels::LevelShape> levels = {{h, wd}};
    Tensor x = ops::map_to_tokens(p3_map);
    if (!w.layers.empty()) {
        const Tensor pos = absolute_pe_tokens(h, wd, pe_cfg);
        const Tensor refs = encoder_reference_points(levels);
        for (const EncoderLayerWeights& layer : w.layers)
            x = encoder_layer(x, pos, refs, levels, layer);
    }
    x = ops::layer_norm(ops::linear(x, w.proj_w, w.proj_b), w.norm_g, w.norm_b);
    return {ops::tokens_to_map(x, h, wd)};
}

PeMode parse_pe_mode(const std::string& s) {
    if (s == "none") return PeMode::none;
    if (s == "abs") return PeMode::abs;
    if (s == "rel") return PeMode::rel;
    throw std::runtime_error("pe_mode: expected none|abs|rel, got '" + s + "'");
}

std::string pe_mode_name(PeMode mode) {
    switch (mode) {
        case PeMode::none: return "none";
        case PeMode::abs: return "abs";
        default: return "rel";
    }
}

Tensor mask_input_tokens(const MaskFeature& fm, const Tensor& center_norm, PeMode mode,
                         const EncodingConfig& pe_cfg) {
    const std::int64_t c = fm.map.dim(0), h = fm.map.dim(1), w = fm.map.dim(2);
    const Tensor tokens = ops::map_to_tokens(fm.map);
    if (mode == PeMode::none) return tokens;
    EncodingConfig cfg = pe_cfg;
    cfg.d_model = c;
    if (mode == PeMode::abs) return ops::add(tokens, absolute_pe_tokens(h, w, cfg));
    check(center_norm.defined() && center_norm.numel() == 2,
          "mask_input_tokens: rel mode needs a 2-element center");
    // normalized -> grid units: pix = norm * extent - 0.5
    const Tensor extent = Tensor::from_data({2}, {static_cast<double>(w), static_cast<double>(h)});
    const Tensor center = ops::add_scalar(ops::mul(ops::reshape(center_norm, {2}), extent), -0.5);
    return ops::add(tokens, relative_pe_tokens(center, h, w, cfg));
}

Tensor mask_attention_weights(const Tensor& input_tokens, const DynamicLayers& dyn) {
    const std::int64_t q = input_tokens.dim(0);
    Tensor logits = ops::linear(input_tokens, dyn.weight_w, dyn.weight_b);
    logits = ops::reshape(logits, {q, dyn.heads, dyn.points});
    return ops::softmax(logits, 2);
}

MaskOutput predict_mask(const MaskFeature& fm, const Tensor& center_norm,
                        const DynamicLayers& dyn, PeMode mode, const EncodingConfig& pe_cfg) {
    const std::int64_t c = fm.map.dim(0), h = fm.map.dim(1), w = fm.map.dim(2);
    check(dyn.channels == c, "predict_mask: dynamic layers expect " +
                                 std::to_string(dyn.channels) + " channels, feature has " +
                                 std::to_string(c));
    const std::int64_t hw = h * w;
    const std::vector<kernels::LevelShape> levels = {{h, w}};
    const Tensor input = mask_input_tokens(fm, center_norm, mode, pe_cfg);

    Tensor offsets = ops::linear(input, dyn.offset_w, dyn.offset_b);
    offsets = ops::reshape(offsets, {hw, dyn.heads, 1, dyn.points, 2});
    const Tensor attn = ops::reshape(mask_attention_weights(input, dyn),
                                     {hw, dyn.heads, 1, dyn.points});
    const Tensor refs = encoder_reference_points(levels);
    const Tensor locs = ops::compose_sampling_locations(refs, offsets, levels);
    // values are the raw mask feature: the dynamic layers are the only
    // per-instance projections, keeping the parameter count at D exactly
    const Tensor sampled = ops::ms_deform_sample(ops::map_to_tokens(fm.map), levels, locs, attn);
    const Tensor logits_map =
        ops::reshape(ops::linear(sampled, dyn.output_w, dyn.output_b), {h, w});
    return {logits_map, ops::sigmoid(logits_map)};
}

}  // namespace iseg
