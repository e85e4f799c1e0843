#pragma once

#include "iseg/deformable.hpp"
#include "iseg/params.hpp"
#include "iseg/posenc.hpp"
#include "iseg/tensor.hpp"

// Instance-aware mask transformer. A per-query parameter vector is unpacked
// into three small linear layers (sampling offsets, sampling weights, output
// projection). Every pixel of the shared mask feature then acts as a query:
// its own feature (plus optional positional encoding) drives the dynamic
// layers, K points per head are sampled around its own location from the raw
// mask feature, heads are concatenated and squashed to one logit.

namespace iseg {

// Total scalar count of the three dynamic layers: (c+1) * (3*m*k + 1).
std::int64_t expected_param_count(std::int64_t c, std::int64_t m, std::int64_t k);

struct DynamicLayers {
    std::int64_t heads = 0, points = 0, channels = 0;
    Tensor offset_w;  // [2*m*k, c]
    Tensor offset_b;  // [2*m*k]
    Tensor weight_w;  // [m*k, c]
    Tensor weight_b;  // [m*k]
    Tensor output_w;  // [1, c]
    Tensor output_b;  // [1]
};

// Fixed split order: offset weights, offset bias, weight weights, weight
// bias, output weights, output bias; all row-major. Gradients pass through.
DynamicLayers unpack_params(const Tensor& vec, std::int64_t c, std::int64_t m, std::int64_t k);
// Exact inverse of unpack_params.
Tensor flatten_params(const DynamicLayers& dyn);

struct MaskFeature {
    Tensor map;  // [c_mask, h, w] at stride 8
};

struct MaskEncoderWeights {
    std::vector<EncoderLayerWeights> layers;  // single-level deformable encoder
    Tensor proj_w, proj_b;                    // [c_mask, d]
    Tensor norm_g, norm_b;                    // [c_mask]

    static MaskEncoderWeights make(Rng& rng, std::int64_t d, std::int64_t ffn_hidden,
                                   std::int64_t heads, std::int64_t points,
                                   std::int64_t num_layers, std::int64_t c_mask);
    void collect(const std::string& prefix, ParamList& out) const;
};

// p3_map: [d, h, w] stride-8 refined memory; pe_cfg describes the width-d
// encodings used inside the encoder layers.
MaskFeature mask_encoder(const Tensor& p3_map, const EncodingConfig& pe_cfg,
                         const MaskEncoderWeights& w);

enum class PeMode { none, abs, rel };

PeMode parse_pe_mode(const std::string& s);
std::string pe_mode_name(PeMode mode);

// fm.map plus the selected positional encoding, token form [h*w, c_mask].
// center_norm: [2] tensor, box center normalized to the image; only read in
// rel mode, where it is rescaled to grid units (differentiably).
Tensor mask_input_tokens(const MaskFeature& fm, const Tensor& center_norm, PeMode mode,
                         const EncodingConfig& pe_cfg);

// Normalized per-pixel sampling weights [h*w, m, k]; softmax over k per head.
Tensor mask_attention_weights(const Tensor& input_tokens, const DynamicLayers& dyn);

struct MaskOutput {
    Tensor logits;  // [h, w]
    Tensor probs;   // [h, w] = sigmoid(logits)
};

MaskOutput predict_mask(const MaskFeature& fm, const Tensor& center_norm,
                        const DynamicLayers& dyn, PeMode mode, const EncodingConfig& pe_cfg);

}  // namespace iseg
