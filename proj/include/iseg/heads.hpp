#pragma once

#include "iseg/geometry.hpp"
#include "iseg/params.hpp"
#include "iseg/tensor.hpp"

// Per-query prediction branches: class logits (linear), box (3-layer MLP
// squashed by sigmoid) and dynamic mask parameters (3-layer MLP, raw). One
// weight set serves every decoder stage.

namespace iseg {

struct HeadWeights {
    Tensor cls_w, cls_b;  // [num_classes, d]
    Tensor box_w1, box_b1, box_w2, box_b2, box_w3, box_b3;     // d -> d -> d -> 4
    Tensor mask_w1, mask_b1, mask_w2, mask_b2, mask_w3, mask_b3;  // d -> d -> d -> D

    // Class bias starts at the focal prior -log((1-pi)/pi), pi = 0.01; the
    // final box layer starts at zero (every box opens at the image center);
    // the final mask layer starts near zero so early masks are flat.
    static HeadWeights make(Rng& rng, std::int64_t d, std::int64_t num_classes,
                            std::int64_t dyn_params);
    void collect(const std::string& prefix, ParamList& out) const;
};

// queries: [n,d] throughout.
Tensor class_head(const Tensor& queries, const HeadWeights& w);   // [n, num_classes] logits
Tensor box_head(const Tensor& queries, const HeadWeights& w);     // [n, 4] cxcywh in (0,1)
Tensor mask_branch(const Tensor& queries, const HeadWeights& w);  // [n, D] raw

struct QueryPrediction {
    Tensor class_logits;  // [num_classes]
    BoxCxCyWH box;
    Tensor dyn_params;  // [D]
};

// Slices query i out of batched head outputs (inference-side convenience).
QueryPrediction extract_prediction(const Tensor& cls, const Tensor& boxes, const Tensor& dyn,
                                   std::int64_t i);

}  // namespace iseg
