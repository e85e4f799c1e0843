#pragma once

#include <string>
#include <vector>

#include "iseg/backbone.hpp"
#include "iseg/config.hpp"
#include "iseg/deformable.hpp"
#include "iseg/heads.hpp"
#include "iseg/iat.hpp"
#include "iseg/matching.hpp"
#include "iseg/params.hpp"
#include "iseg/serialize.hpp"

// Full detector: backbone pyramid -> deformable encoder -> query decoder ->
// shared per-stage heads, plus the stride-8 mask feature branch. Weights are
// gathered into a flat named list that doubles as the checkpoint schema.

namespace iseg {

struct ModelWeights {
    BackboneWeights backbone;
    PyramidWeights pyramid;
    EncoderWeights encoder;
    DecoderWeights decoder;
    Tensor query_content, query_pos;  // [n,d] learned embeddings
    Tensor pre_head_g, pre_head_b;    // norm between decoder stream and heads
    HeadWeights heads;                // shared by every decoder stage
    MaskEncoderWeights mask_encoder;

    static ModelWeights make(Rng& rng, const RunConfig& cfg);
    void collect(ParamList& out) const;
};

struct ModelOutput {
    std::vector<StagePredictions> stages;  // one per decoder layer
    MaskFeature fm;                        // [c_mask, h/8, w/8]
    Tensor references;                     // [n,2] decoder reference points
};

ModelOutput model_forward(const Tensor& image, const ModelWeights& w, const RunConfig& cfg);

// Copies matching entries of a saved checkpoint into freshly built weights;
// optimizer slots and other extra entries are ignored here.
void load_weights(ModelWeights& w, const Checkpoint& ck);

}  // namespace iseg
