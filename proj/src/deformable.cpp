#include "iseg/deformable.hpp"

#include <cmath>

#include "iseg/init.hpp"
#include "iseg/ops.hpp"

namespace iseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

void collect_ln(ParamList& out, const std::string& name, const Tensor& g, const Tensor& b) {
    out.emplace_back(name + ".gamma", g);
    out.emplace_back(name + ".beta", b);
}

Tensor ones_param(std::int64_t n) {
    Tensor t = Tensor::full({n}, 1.0);
    t.set_requires_grad(true);
    return t;
}

}  // namespace

DeformAttnWeights DeformAttnWeights::make(Rng& rng, std::int64_t d, std::int64_t heads,
                                          std::int64_t points, std::int64_t levels) {
    check(heads > 0 && d % heads == 0, "deform attn: heads must divide d");
    DeformAttnWeights w;
    w.heads = heads;
    w.points = points;
    w.levels = levels;
    const std::int64_t mlk = heads * levels * points;
    w.offset_w = zeros_param({2 * mlk, d});
    std::vector<double> bias(static_cast<std::size_t>(2 * mlk));
    for (std::int64_t m = 0; m < heads; ++m) {
        const double angle = 2.0 * kPi * static_cast<double>(m) / static_cast<double>(heads);
        double dx = std::cos(angle), dy = std::sin(angle);
        const double amp = std::max(std::abs(dx), std::abs(dy));
        dx /= amp;
        dy /= amp;
        for (std::int64_t l = 0; l < levels; ++l)
            for (std::int64_t k = 0; k < points; ++k) {
                const std::size_t base = static_cast<std::size_t>((((m * levels + l) * points + k) * 2));
                bias[base] = dx * static_cast<double>(k + 1);
                bias[base + 1] = dy * static_cast<double>(k + 1);
            }
    }
    w.offset_b = Tensor::from_data({2 * mlk}, bias);
    w.offset_b.set_requires_grad(true);
    w.weight_w = zeros_param({mlk, d});
    w.weight_b = zeros_param({mlk});
    w.value_w = linear_init(rng, d, d);
    w.value_b = zeros_param({d});
    w.output_w = linear_init(rng, d, d);
    w.output_b = zeros_param({d});
    return w;
}

void DeformAttnWeights::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".offset.w", offset_w);
    out.emplace_back(prefix + ".offset.b", offset_b);
    out.emplace_back(prefix + ".weight.w", weight_w);
    out.emplace_back(prefix + ".weight.b", weight_b);
    out.emplace_back(prefix + ".value.w", value_w);
    out.emplace_back(prefix + ".value.b", value_b);
    out.emplace_back(prefix + ".output.w", output_w);
    out.emplace_back(prefix + ".output.b", output_b);
}

Tensor deform_attention_weights(const Tensor& content, const DeformAttnWeights& w) {
    const std::int64_t q = content.dim(0);
    Tensor logits = ops::linear(content, w.weight_w, w.weight_b);
    logits = ops::reshape(logits, {q, w.heads, w.levels * w.points});
    Tensor attn = ops::softmax(logits, 2);
    return ops::reshape(attn, {q, w.heads, w.levels, w.points});
}

Tensor ms_deform_attn(const Tensor& content, const Tensor& ref, const Tensor& value_tokens,
                      const std::vector<kernels::LevelShape>& levels,
                      const DeformAttnWeights& w) {
    check(static_cast<std::int64_t>(levels.size()) == w.levels,
          "ms_deform_attn: level count mismatch");
    const std::int64_t q = content.dim(0);
    const Tensor value = ops::linear(value_tokens, w.value_w, w.value_b);
    Tensor offsets = ops::linear(content, w.offset_w, w.offset_b);
    offsets = ops::reshape(offsets, {q, w.heads, w.levels, w.points, 2});
    const Tensor attn = deform_attention_weights(content, w);
    const Tensor locs = ops::compose_sampling_locations(ref, offsets, levels);
    const Tensor sampled = ops::ms_deform_sample(value, levels, locs, attn);
    return ops::linear(sampled, w.output_w, w.output_b);
}

MhsaWeights MhsaWeights::make(Rng& rng, std::int64_t d, std::int64_t heads) {
    check(heads > 0 && d % heads == 0, "mhsa: heads must divide d");
    MhsaWeights w;
    w.heads = heads;
    w.q_w = linear_init(rng, d, d);
    w.q_b = zeros_param({d});
    w.k_w = linear_init(rng, d, d);
    w.k_b = zeros_param({d});
    w.v_w = linear_init(rng, d, d);
    w.v_b = zeros_param({d});
    w.o_w = linear_init(rng, d, d);
    w.o_b = zeros_param({d});
    return w;
}

void MhsaWeights::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".q.w", q_w);
    out.emplace_back(prefix + ".q.b", q_b);
    out.emplace_back(prefix + ".k.w", k_w);
    out.emplace_back(prefix + ".k.b", k_b);
    out.emplace_back(prefix + ".v.w", v_w);
    out.emplace_back(prefix + ".v.b", v_b);
    out.emplace_back(prefix + ".o.w", o_w);
    out.emplace_back(prefix + ".o.b", o_b);
}

namespace {

// Per-head attention [n,n] for head m given projected Q and K.
Tensor head_attention(const Tensor& qp, const Tensor& kp, std::int64_t m, std::int64_t dh) {
    const Tensor qm = ops::slice_cols(qp, m * dh, dh);
    const Tensor km = ops::slice_cols(kp, m * dh, dh);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor scores = ops::scalar_mul(ops::matmul(qm, ops::transpose2d(km)), scale);
    return ops::softmax(scores, 1);
}

}  // namespace

Tensor multi_head_self_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                 const MhsaWeights& w) {
    const std::int64_t d = q_in.dim(1);
    const std::int64_t dh = d / w.heads;
    const Tensor qp = ops::linear(q_in, w.q_w, w.q_b);
    const Tensor kp = ops::linear(k_in, w.k_w, w.k_b);
    const Tensor vp = ops::linear(v_in, w.v_w, w.v_b);
    std::vector<Tensor> heads;
    for (std::int64_t m = 0; m < w.heads; ++m) {
        const Tensor attn = head_attention(qp, kp, m, dh);
        heads.push_back(ops::matmul(attn, ops::slice_cols(vp, m * dh, dh)));
    }
    return ops::linear(ops::concat_cols(heads), w.o_w, w.o_b);
}

Tensor mhsa_attention_rows(const Tensor& q_in, const Tensor& k_in, const MhsaWeights& w) {
    const std::int64_t d = q_in.dim(1);
    const std::int64_t dh = d / w.heads;
    const Tensor qp = ops::linear(q_in, w.q_w, w.q_b);
    const Tensor kp = ops::linear(k_in, w.k_w, w.k_b);
    std::vector<Tensor> rows;
    for (std::int64_t m = 0; m < w.heads; ++m) rows.push_back(head_attention(qp, kp, m, dh));
    return ops::concat_rows(rows);
}

FfnWeights FfnWeights::make(Rng& rng, std::int64_t d, std::int64_t hidden) {
    FfnWeights w;
    w.w1 = linear_init(rng, hidden, d);
    w.b1 = zeros_param({hidden});
    w.w2 = linear_init(rng, d, hidden);
    w.b2 = zeros_param({d});
    return w;
}

void FfnWeights::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
}

Tensor ffn_forward(const Tensor& x, const FfnWeights& w) {
    return ops::linear(ops::relu(ops::linear(x, w.w1, w.b1)), w.w2, w.b2);
}

EncoderLayerWeights EncoderLayerWeights::make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                              std::int64_t heads, std::int64_t points,
                                              std::int64_t levels) {
    EncoderLayerWeights w;
    w.attn = DeformAttnWeights::make(rng, d, heads, points, levels);
    w.norm1_g = ones_param(d);
    w.norm1_b = zeros_param({d});
    w.norm2_g = ones_param(d);
    w.norm2_b = zeros_param({d});
    w.ffn = FfnWeights::make(rng, d, ffn_hidden);
    return w;
}

void EncoderLayerWeights::collect(const std::string& prefix, ParamList& out) const {
    attn.collect(prefix + ".attn", out);
    collect_ln(out, prefix + ".norm1", norm1_g, norm1_b);
    collect_ln(out, prefix + ".norm2", norm2_g, norm2_b);
    ffn.collect(prefix + ".ffn", out);
}

Tensor encoder_layer(const Tensor& tokens, const Tensor& pos, const Tensor& refs,
                     const std::vector<kernels::LevelShape>& levels,
                     const EncoderLayerWeights& w) {
    Tensor x = tokens;
    const Tensor h = ops::layer_norm(x, w.norm1_g, w.norm1_b);
    const Tensor attn_out = ms_deform_attn(ops::add(h, pos), refs, h, levels, w.attn);
    x = ops::add(x, attn_out);
    const Tensor h2 = ops::layer_norm(x, w.norm2_g, w.norm2_b);
    return ops::add(x, ffn_forward(h2, w.ffn));
}

EncoderWeights EncoderWeights::make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                    std::int64_t heads, std::int64_t points,
                                    std::int64_t levels, std::int64_t num_layers) {
    EncoderWeights w;
    for (std::int64_t i = 0; i < num_layers; ++i)
        w.layers.push_back(EncoderLayerWeights::make(rng, d, ffn_hidden, heads, points, levels));
    w.level_embed = normal_param(rng, {levels, d}, 1.0);
    w.final_g = ones_param(d);
    w.final_b = zeros_param({d});
    return w;
}

void EncoderWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    out.emplace_back(prefix + ".level_embed", level_embed);
    collect_ln(out, prefix + ".final_norm", final_g, final_b);
}

Tensor encoder_pos_tokens(const std::vector<kernels::LevelShape>& levels,
                          const EncodingConfig& pe_cfg, const Tensor& level_embed) {
    std::vector<Tensor> parts;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const Tensor pe = absolute_pe_tokens(levels[l].h, levels[l].w, pe_cfg);
        const std::vector<std::int64_t> rows(static_cast<std::size_t>(levels[l].h * levels[l].w),
                                             static_cast<std::int64_t>(l));
        parts.push_back(ops::add(pe, ops::gather_rows(level_embed, rows)));
    }
    return ops::concat_rows(parts);
}

Tensor encoder_reference_points(const std::vector<kernels::LevelShape>& levels) {
    std::vector<double> refs;
    for (const kernels::LevelShape& ls : levels)
        for (std::int64_t y = 0; y < ls.h; ++y)
            for (std::int64_t x = 0; x < ls.w; ++x) {
                refs.push_back((static_cast<double>(x) + 0.5) / static_cast<double>(ls.w));
                refs.push_back((static_cast<double>(y) + 0.5) / static_cast<double>(ls.h));
            }
    return Tensor::from_data({static_cast<std::int64_t>(refs.size()) / 2, 2}, refs);
}

Tensor encoder_stack(const Tensor& tokens, const std::vector<kernels::LevelShape>& levels,
                     const EncodingConfig& pe_cfg, const EncoderWeights& w) {
    const Tensor pos = encoder_pos_tokens(levels, pe_cfg, w.level_embed);
    const Tensor refs = encoder_reference_points(levels);
    Tensor x = tokens;
    for (const EncoderLayerWeights& layer : w.layers) x = encoder_layer(x, pos, refs, levels, layer);
    return ops::layer_norm(x, w.final_g, w.final_b);
}

DecoderLayerWeights DecoderLayerWeights::make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                              std::int64_t heads, std::int64_t points,
                                              std::int64_t levels) {
    DecoderLayerWeights w;
    w.self_attn = MhsaWeights::make(rng, d, heads);
    w.cross_attn = DeformAttnWeights::make(rng, d, heads, points, levels);
    w.norm1_g = ones_param(d);
    w.norm1_b = zeros_param({d});
    w.norm2_g = ones_param(d);
    w.norm2_b = zeros_param({d});
    w.norm3_g = ones_param(d);
    w.norm3_b = zeros_param({d});
    w.ffn = FfnWeights::make(rng, d, ffn_hidden);
    return w;
}

void DecoderLayerWeights::collect(const std::string& prefix, ParamList& out) const {
    self_attn.collect(prefix + ".self_attn", out);
    cross_attn.collect(prefix + ".cross_attn", out);
    collect_ln(out, prefix + ".norm1", norm1_g, norm1_b);
    collect_ln(out, prefix + ".norm2", norm2_g, norm2_b);
    collect_ln(out, prefix + ".norm3", norm3_g, norm3_b);
    ffn.collect(prefix + ".ffn", out);
}

DecoderWeights DecoderWeights::make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                    std::int64_t heads, std::int64_t points,
                                    std::int64_t levels, std::int64_t num_layers) {
    DecoderWeights w;
    for (std::int64_t i = 0; i < num_layers; ++i)
        w.layers.push_back(DecoderLayerWeights::make(rng, d, ffn_hidden, heads, points, levels));
    w.ref_w = linear_init(rng, 2, d);
    w.ref_b = zeros_param({2});
    return w;
}

void DecoderWeights::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    out.emplace_back(prefix + ".ref.w", ref_w);
    out.emplace_back(prefix + ".ref.b", ref_b);
}

DecoderOutput decoder_stack(const Tensor& query_content, const Tensor& query_pos,
                            const Tensor& memory,
                            const std::vector<kernels::LevelShape>& levels,
                            const DecoderWeights& w) {
    DecoderOutput out;
    out.references = ops::sigmoid(ops::linear(query_pos, w.ref_w, w.ref_b));
    Tensor x = query_content;
    for (const DecoderLayerWeights& layer : w.layers) {
        const Tensor h1 = ops::layer_norm(x, layer.norm1_g, layer.norm1_b);
        const Tensor qk = ops::add(h1, query_pos);
        x = ops::add(x, multi_head_self_attention(qk, qk, h1, layer.self_attn));
        const Tensor h2 = ops::layer_norm(x, layer.norm2_g, layer.norm2_b);
        x = ops::add(x, ms_deform_attn(ops::add(h2, query_pos), out.references, memory, levels,
                                       layer.cross_attn));
        const Tensor h3 = ops::layer_norm(x, layer.norm3_g, layer.norm3_b);
        x = ops::add(x, ffn_forward(h3, layer.ffn));
        out.stages.push_back(x);
    }
    return out;
}

}  // namespace iseg
