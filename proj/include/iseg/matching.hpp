#pragma once

#include "iseg/geometry.hpp"
#include "iseg/iat.hpp"
#include "iseg/params.hpp"
#include "iseg/tensor.hpp"

// Bipartite assignment of predictions to ground-truth instances plus the
// multi-task training loss. Matching runs on plain values (no gradients);
// the losses are tape-recorded ops. Every loss term is normalized by
// max(1, targets).

namespace iseg {

struct InstanceTarget {
    std::int64_t class_id = 0;
    BoxCxCyWH box;  // normalized to the image
    Tensor mask;    // [h, w] of 0/1 at full image resolution
};

struct LossWeights {
    double cls = 2.0, l1 = 5.0, iou = 2.0, dice = 8.0, bce = 2.0;
};

struct Assignment {
    std::vector<std::int64_t> pred_of_target;  // injective, one prediction per target
};

// cost: [n_preds, n_targets] finite entries, n_targets <= n_preds. Returns
// the minimum-cost assignment; exact ties resolve to the lexicographically
// smallest (target 0's prediction, target 1's prediction, ...) vector via an
// exact integer secondary cost.
Assignment hungarian(const Tensor& cost);

// entry(i,j) = cls*(-sigmoid(logit_i)[class_j]) + l1*|box_i - box_j|_1
//            + iou*(1 - giou(box_i, box_j)); mask terms are excluded.
Tensor matching_cost(const Tensor& cls_logits, const Tensor& boxes,
                     const std::vector<InstanceTarget>& targets, const LossWeights& w);

// Optional experiment: adds dice*dice + bce*(per-pixel mean bce) terms.
// mask_probs: one [hm,wm] map per prediction; target_masks: one per target,
// already on the same grid.
void add_mask_cost_terms(Tensor& cost, const std::vector<Tensor>& mask_probs,
                         const std::vector<Tensor>& target_masks, const LossWeights& w);

// 1 - (2*sum(p*t) + 1) / (sum(p) + sum(t) + 1); differentiable in p.
Tensor dice_loss(const Tensor& pred_probs, const Tensor& target_mask);

// Exact block max over factor-aligned tiles: [h,w] -> [h/f, w/f].
Tensor downsample_mask_block_max(const Tensor& mask, std::int64_t factor);

struct StagePredictions {
    Tensor cls_logits;  // [n, num_classes]
    Tensor boxes;       // [n, 4] cxcywh in (0,1)
    Tensor dyn;         // [n, D]
};

struct LossConfig {
    LossWeights weights;
    std::int64_t mask_stages = 2;      // mask losses on this many final stages
    bool match_include_mask = false;   // fold mask terms into the cost matrix
    PeMode pe_mode = PeMode::rel;
    std::int64_t mask_heads = 4, mask_points = 4;
    double focal_alpha = 0.25, focal_gamma = 2.0;
    EncodingConfig pe_cfg;
};

struct LossBreakdown {
    Tensor total;  // scalar, tape-recorded
    // weighted per-term sums over stages, as plain values for logging
    double cls = 0.0, l1 = 0.0, iou = 0.0, dice = 0.0, bce = 0.0;
    std::vector<Assignment> stage_assignments;
};

// Per stage: match, then accumulate the detection terms; the last
// cfg.mask_stages stages also predict masks for matched queries (relative
// encodings centered on the predicted box) and add dice and bce terms
// against block-max downsampled target masks.
LossBreakdown total_loss(const std::vector<StagePredictions>& stages, const MaskFeature& fm,
                         const std::vector<InstanceTarget>& targets, const LossConfig& cfg);

}  // namespace iseg
