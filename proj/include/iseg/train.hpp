#pragma once

#include <cstdint>
#include <vector>

#include "iseg/data.hpp"
#include "iseg/model.hpp"

// Single-image training loop: Adam with global gradient-norm clipping, a
// checkpoint schema that also carries the optimizer moments, and the
// prediction/metric helpers shared by evaluation and inference.

namespace iseg {

struct AdamState {
    double lr, beta1, beta2, eps, clip;
    std::int64_t t = 0;            // completed updates
    std::vector<Tensor> m, v;      // aligned with the parameter list

    static AdamState make(const ParamList& params, const RunConfig& cfg);
};

// L2 norm over every populated gradient buffer.
double global_grad_norm(const ParamList& params);

// One bias-corrected update. Gradients are scaled so their global norm never
// exceeds opt.clip; parameters without a buffer this step are skipped; all
// buffers are dropped afterwards.
void adam_step(ParamList& params, AdamState& opt);

struct Trainer {
    RunConfig cfg;
    ModelWeights weights;
    ParamList params;
    AdamState opt;

    static Trainer fresh(const RunConfig& cfg);
    static Trainer resume(const Checkpoint& ck);  // config comes from the checkpoint

    std::int64_t step() const { return opt.t; }

    // Forward, loss, backward, clipped Adam update. A non-finite loss leaves
    // the parameters untouched so the caller can abort cleanly.
    LossBreakdown train_step(const Scene& scene);

    Checkpoint checkpoint() const;  // weights + adam.m./adam.v. slots + step
};

// Thresholded, score-sorted, top-k query predictions for one image; masks
// stay on the stride-8 grid.
std::vector<PredictionInstance> predict_instances(const ModelWeights& w, const RunConfig& cfg,
                                                  const Tensor& image);

// Mean IoU between each target's 0.5-binarized predicted mask and its
// block-max downsampled ground truth, under the box/class matching of the
// final stage. Scenes without instances are skipped.
double matched_mask_iou(const ModelWeights& w, const RunConfig& cfg,
                        const std::vector<Scene>& scenes);

}  // namespace iseg
