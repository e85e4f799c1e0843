#pragma once

#include "iseg/backbone.hpp"
#include "iseg/params.hpp"
#include "iseg/posenc.hpp"
#include "iseg/tensor.hpp"

// Multi-scale deformable attention and the transformer layers built from it.
// Every block is pre-norm residual: x + sublayer(LN(x)). Sampling weights are
// softmax-normalized over all points*levels within a head; sampling offsets
// are produced in pixel units of each level's own grid.

namespace iseg {

struct DeformAttnWeights {
    std::int64_t heads = 0, points = 0, levels = 0;
    Tensor offset_w, offset_b;  // [2*m*l*k, d], laid out (head, level, point, xy)
    Tensor weight_w, weight_b;  // [m*l*k, d]
    Tensor value_w, value_b;    // [d, d]
    Tensor output_w, output_b;  // [d, d]

    // Offset projection starts at zero weights with biases pointing head m
    // along angle 2*pi*m/heads at radii 1..points; weight projection starts
    // at zero (uniform attention after softmax).
    static DeformAttnWeights make(Rng& rng, std::int64_t d, std::int64_t heads,
                                  std::int64_t points, std::int64_t levels);
    void collect(const std::string& prefix, ParamList& out) const;
};

// Normalized sampling weights [q, heads, levels, points]; rows sum to one
// over the trailing two axes.
Tensor deform_attention_weights(const Tensor& content, const DeformAttnWeights& w);

// content: [q,d] drives offsets and weights; ref: [q,2] normalized points;
// value_tokens: [t,d] level-concatenated features (value projection applied
// inside). Returns [q,d].
Tensor ms_deform_attn(const Tensor& content, const Tensor& ref, const Tensor& value_tokens,
                      const std::vector<kernels::LevelShape>& levels,
                      const DeformAttnWeights& w);

struct MhsaWeights {
    std::int64_t heads = 0;
    Tensor q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;

    static MhsaWeights make(Rng& rng, std::int64_t d, std::int64_t heads);
    void collect(const std::string& prefix, ParamList& out) const;
};

// Scaled dot-product attention, scale 1/sqrt(d/heads).
Tensor multi_head_self_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                 const MhsaWeights& w);
inline Tensor multi_head_self_attention(const Tensor& x, const MhsaWeights& w) {
    return multi_head_self_attention(x, x, x, w);
}
// Per-head attention rows stacked [heads*n, n]; each row sums to one.
Tensor mhsa_attention_rows(const Tensor& q_in, const Tensor& k_in, const MhsaWeights& w);

struct FfnWeights {
    Tensor w1, b1, w2, b2;  // d -> hidden -> d, relu between

    static FfnWeights make(Rng& rng, std::int64_t d, std::int64_t hidden);
    void collect(const std::string& prefix, ParamList& out) const;
};

Tensor ffn_forward(const Tensor& x, const FfnWeights& w);

struct EncoderLayerWeights {
    DeformAttnWeights attn;
    Tensor norm1_g, norm1_b, norm2_g, norm2_b;
    FfnWeights ffn;

    static EncoderLayerWeights make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                    std::int64_t heads, std::int64_t points,
                                    std::int64_t levels);
    void collect(const std::string& prefix, ParamList& out) const;
};

// tokens/pos: [t,d]; refs: [t,2] per-token normalized locations.
Tensor encoder_layer(const Tensor& tokens, const Tensor& pos, const Tensor& refs,
                     const std::vector<kernels::LevelShape>& levels,
                     const EncoderLayerWeights& w);

struct EncoderWeights {
    std::vector<EncoderLayerWeights> layers;
    Tensor level_embed;         // [levels, d] learned, added to the fixed pe
    Tensor final_g, final_b;    // closing norm of the pre-norm stack

    static EncoderWeights make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                               std::int64_t heads, std::int64_t points, std::int64_t levels,
                               std::int64_t num_layers);
    void collect(const std::string& prefix, ParamList& out) const;
};

// Fixed per-token positional encodings plus the learned level embedding,
// concatenated across levels: [t,d].
Tensor encoder_pos_tokens(const std::vector<kernels::LevelShape>& levels,
                          const EncodingConfig& pe_cfg, const Tensor& level_embed);
// Per-token references, each token at its own normalized location: [t,2].
Tensor encoder_reference_points(const std::vector<kernels::LevelShape>& levels);

// Refines level-concatenated tokens [t,d] into memory [t,d].
Tensor encoder_stack(const Tensor& tokens, const std::vector<kernels::LevelShape>& levels,
                     const EncodingConfig& pe_cfg, const EncoderWeights& w);

struct DecoderLayerWeights {
    MhsaWeights self_attn;
    DeformAttnWeights cross_attn;
    Tensor norm1_g, norm1_b, norm2_g, norm2_b, norm3_g, norm3_b;
    FfnWeights ffn;

    static DecoderLayerWeights make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                    std::int64_t heads, std::int64_t points,
                                    std::int64_t levels);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct DecoderWeights {
    std::vector<DecoderLayerWeights> layers;
    Tensor ref_w, ref_b;  // query_pos -> reference point logits, squashed by sigmoid

    static DecoderWeights make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                               std::int64_t heads, std::int64_t points, std::int64_t levels,
                               std::int64_t num_layers);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct DecoderOutput {
    std::vector<Tensor> stages;  // residual stream after each layer, [n,d]
    Tensor references;           // [n,2] normalized, fixed across stages
};

// query_content/query_pos: [n,d] learned embeddings; memory: [t,d].
DecoderOutput decoder_stack(const Tensor& query_content, const Tensor& query_pos,
                            const Tensor& memory,
                            const std::vector<kernels::LevelShape>& levels,
                            const DecoderWeights& w);

}  // namespace iseg
