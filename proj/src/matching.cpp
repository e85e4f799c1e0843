#include "iseg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "iseg/ops.hpp"

namespace iseg {

namespace {

// Lexicographically ordered (primary, tie) cost. Ties carry an exact integer
// encoding of the assignment vector so equal-primary optima resolve to the
// smallest (target 0's prediction, target 1's prediction, ...) tuple.
struct PairCost {
    double primary = 0.0, tie = 0.0;

    PairCost operator-(const PairCost& o) const { return {primary - o.primary, tie - o.tie}; }
    PairCost& operator+=(const PairCost& o) {
        primary += o.primary;
        tie += o.tie;
        return *this;
    }
    PairCost& operator-=(const PairCost& o) {
        primary -= o.primary;
        tie -= o.tie;
        return *this;
    }
    bool operator<(const PairCost& o) const {
        if (primary != o.primary) return primary < o.primary;
        return tie < o.tie;
    }
};

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

Assignment hungarian(const Tensor& cost) {
    check(cost.rank() == 2, "hungarian: cost must be [preds, targets], got " +
                                shape_str(cost.shape()));
    const std::int64_t n = cost.dim(0), g = cost.dim(1);
    check(g >= 1, "hungarian: no targets");
    check(g <= n, "hungarian: more targets than predictions");
    for (std::int64_t i = 0; i < cost.numel(); ++i)
        check(std::isfinite(cost.data()[i]), "hungarian: non-finite cost entry");
    // tie(t,p) = p * (n+1)^(g-1-t); sums must stay exact in a double
    check(static_cast<double>(g + 1) * std::log2(static_cast<double>(n + 1)) <= 50.0,
          "hungarian: too many targets for exact tie-breaking");

    std::vector<double> tie_weight(static_cast<std::size_t>(g));
    tie_weight[static_cast<std::size_t>(g - 1)] = 1.0;
    for (std::int64_t t = g - 2; t >= 0; --t)
        tie_weight[static_cast<std::size_t>(t)] =
            tie_weight[static_cast<std::size_t>(t + 1)] * static_cast<double>(n + 1);
    auto entry = [&](std::int64_t t, std::int64_t p) -> PairCost {
        return {cost.at({p, t}), tie_weight[static_cast<std::size_t>(t)] * static_cast<double>(p)};
    };

    // shortest-augmenting-path assignment with potentials; rows are targets
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<PairCost> u(static_cast<std::size_t>(g + 1)), v(static_cast<std::size_t>(n + 1));
    std::vector<std::int64_t> p(static_cast<std::size_t>(n + 1), 0);
    std::vector<std::int64_t> way(static_cast<std::size_t>(n + 1), 0);
    for (std::int64_t i = 1; i <= g; ++i) {
        p[0] = i;
        std::int64_t j0 = 0;
        std::vector<PairCost> minv(static_cast<std::size_t>(n + 1), PairCost{inf, inf});
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const std::int64_t i0 = p[static_cast<std::size_t>(j0)];
            PairCost delta{inf, inf};
            std::int64_t j1 = -1;
            for (std::int64_t j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const PairCost cur = entry(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                     v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (std::int64_t j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const std::int64_t j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    Assignment out;
    out.pred_of_target.assign(static_cast<std::size_t>(g), -1);
    for (std::int64_t j = 1; j <= n; ++j)
        if (p[static_cast<std::size_t>(j)] != 0)
            out.pred_of_target[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] =
                j - 1;
    return out;
}

Tensor matching_cost(const Tensor& cls_logits, const Tensor& boxes,
                     const std::vector<InstanceTarget>& targets, const LossWeights& w) {
    check(cls_logits.rank() == 2 && boxes.rank() == 2 && boxes.dim(1) == 4 &&
              cls_logits.dim(0) == boxes.dim(0),
          "matching_cost: bad prediction shapes");
    check(!targets.empty(), "matching_cost: no targets");
    const std::int64_t n = cls_logits.dim(0), c = cls_logits.dim(1);
    const std::int64_t g = static_cast<std::int64_t>(targets.size());
    std::vector<double> out(static_cast<std::size_t>(n * g));
    for (std::int64_t i = 0; i < n; ++i) {
        const BoxCxCyWH pb{boxes.at({i, 0}), boxes.at({i, 1}), boxes.at({i, 2}), boxes.at({i, 3})};
        for (std::int64_t j = 0; j < g; ++j) {
            const InstanceTarget& t = targets[static_cast<std::size_t>(j)];
            check(t.class_id >= 0 && t.class_id < c,
                  "matching_cost: class id " + std::to_string(t.class_id) + " out of range");
            const double prob = stable_sigmoid(cls_logits.at({i, t.class_id}));
            const double l1 = std::abs(pb.cx - t.box.cx) + std::abs(pb.cy - t.box.cy) +
                              std::abs(pb.w - t.box.w) + std::abs(pb.h - t.box.h);
            const double giou = generalized_iou(pb, t.box);
            out[static_cast<std::size_t>(i * g + j)] =
                w.cls * (-prob) + w.l1 * l1 + w.iou * (1.0 - giou);
        }
    }
    return Tensor::from_data({n, g}, std::move(out));
}

void add_mask_cost_terms(Tensor& cost, const std::vector<Tensor>& mask_probs,
                         const std::vector<Tensor>& target_masks, const LossWeights& w) {
    const std::int64_t n = cost.dim(0), g = cost.dim(1);
    check(static_cast<std::int64_t>(mask_probs.size()) == n &&
              static_cast<std::int64_t>(target_masks.size()) == g,
          "add_mask_cost_terms: count mismatch");
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor& p = mask_probs[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < g; ++j) {
            const Tensor& t = target_masks[static_cast<std::size_t>(j)];
            check(p.shape() == t.shape(), "add_mask_cost_terms: grid mismatch");
            double inter = 0.0, psum = 0.0, tsum = 0.0, bce = 0.0;
            for (std::int64_t k = 0; k < p.numel(); ++k) {
                const double pv = std::clamp(p.data()[k], 1e-12, 1.0 - 1e-12);
                const double tv = t.data()[k];
                inter += pv * tv;
                psum += pv;
                tsum += tv;
                bce -= tv * std::log(pv) + (1.0 - tv) * std::log(1.0 - pv);
            }
            const double dice = 1.0 - (2.0 * inter + 1.0) / (psum + tsum + 1.0);
            cost.mutable_data()[static_cast<std::size_t>(i * g + j)] +=
                w.dice * dice + w.bce * bce / static_cast<double>(p.numel());
        }
    }
}

Tensor dice_loss(const Tensor& pred_probs, const Tensor& target_mask) {
    check(pred_probs.shape() == target_mask.shape(),
          "dice_loss: shape mismatch " + shape_str(pred_probs.shape()) + " vs " +
              shape_str(target_mask.shape()));
    for (std::int64_t i = 0; i < target_mask.numel(); ++i) {
        const double v = target_mask.data()[i];
        check(v == 0.0 || v == 1.0, "dice_loss: target not binary");
    }
    const Tensor num = ops::add_scalar(ops::scalar_mul(ops::sum_all(ops::mul(pred_probs, target_mask)), 2.0), 1.0);
    const Tensor den = ops::add_scalar(ops::add(ops::sum_all(pred_probs), ops::sum_all(target_mask)), 1.0);
    return ops::add_scalar(ops::scalar_mul(ops::div(num, den), -1.0), 1.0);
}

Tensor downsample_mask_block_max(const Tensor& mask, std::int64_t factor) {
    check(mask.rank() == 2, "downsample_mask: mask must be [h,w]");
    check(factor >= 1, "downsample_mask: factor must be positive");
    const std::int64_t h = mask.dim(0), w = mask.dim(1);
    check(h % factor == 0 && w % factor == 0,
          "downsample_mask: extent " + shape_str(mask.shape()) + " not divisible by " +
              std::to_string(factor));
    const std::int64_t oh = h / factor, ow = w / factor;
    std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const std::size_t o = static_cast<std::size_t>((y / factor) * ow + x / factor);
            out[o] = std::max(out[o], mask.at({y, x}));
        }
    return Tensor::from_data({oh, ow}, std::move(out));
}

LossBreakdown total_loss(const std::vector<StagePredictions>& stages, const MaskFeature& fm,
                         const std::vector<InstanceTarget>& targets, const LossConfig& cfg) {
    check(!stages.empty(), "total_loss: no stages");
    const std::int64_t num_stages = static_cast<std::int64_t>(stages.size());
    check(cfg.mask_stages >= 0 && cfg.mask_stages <= num_stages,
          "total_loss: mask_stages " + std::to_string(cfg.mask_stages) + " out of range 0.." +
              std::to_string(num_stages));
    const std::int64_t n = stages[0].cls_logits.dim(0);
    const std::int64_t num_classes = stages[0].cls_logits.dim(1);
    const std::int64_t g = static_cast<std::int64_t>(targets.size());
    const double norm = 1.0 / static_cast<double>(std::max<std::int64_t>(1, g));

    Tensor target_boxes;
    std::vector<Tensor> target_masks_ds;
    if (g > 0) {
        std::vector<double> tb;
        for (const InstanceTarget& t : targets) {
            tb.insert(tb.end(), {t.box.cx, t.box.cy, t.box.w, t.box.h});
        }
        target_boxes = Tensor::from_data({g, 4}, std::move(tb));
        if (cfg.mask_stages > 0 || cfg.match_include_mask) {
            check(fm.map.defined(), "total_loss: mask stages need a mask feature");
            const std::int64_t hm = fm.map.dim(1);
            for (const InstanceTarget& t : targets) {
                check(t.mask.defined() && t.mask.rank() == 2 && t.mask.dim(0) % hm == 0,
                      "total_loss: target mask incompatible with the mask grid");
                target_masks_ds.push_back(downsample_mask_block_max(t.mask, t.mask.dim(0) / hm));
                check(target_masks_ds.back().dim(1) == fm.map.dim(2),
                      "total_loss: target mask aspect mismatch");
            }
        }
    }

    LossBreakdown out;
    Tensor total = Tensor::zeros({1});
    for (std::int64_t s = 0; s < num_stages; ++s) {
        const StagePredictions& sp = stages[s];
        const bool stage_has_mask = s >= num_stages - cfg.mask_stages;
        Assignment as;
        if (g > 0) {
            Tensor cost = matching_cost(sp.cls_logits, sp.boxes, targets, cfg.weights);
            if (cfg.match_include_mask && stage_has_mask) {
                NoTapeScope quiet;
                std::vector<Tensor> probs;
                for (std::int64_t i = 0; i < n; ++i) {
                    const Tensor dyn_row = ops::reshape(ops::slice_rows(sp.dyn, i, 1), {sp.dyn.dim(1)});
                    const Tensor center =
                        ops::reshape(ops::slice_cols(ops::slice_rows(sp.boxes, i, 1), 0, 2), {2});
                    const DynamicLayers dl =
                        unpack_params(dyn_row, fm.map.dim(0), cfg.mask_heads, cfg.mask_points);
                    probs.push_back(predict_mask(fm, center, dl, cfg.pe_mode, cfg.pe_cfg).probs);
                }
                add_mask_cost_terms(cost, probs, target_masks_ds, cfg.weights);
            }
            as = hungarian(cost);
        }
        out.stage_assignments.push_back(as);

        // classification: matched queries carry their class, the rest all-negative
        std::vector<double> cls_targets(static_cast<std::size_t>(n * num_classes), 0.0);
        for (std::int64_t j = 0; j < g; ++j) {
            const std::int64_t i = as.pred_of_target[static_cast<std::size_t>(j)];
            cls_targets[static_cast<std::size_t>(i * num_classes +
                                                 targets[static_cast<std::size_t>(j)].class_id)] =
                1.0;
        }
        const Tensor cls_term = ops::scalar_mul(
            ops::sigmoid_focal_loss_sum(sp.cls_logits,
                                        Tensor::from_data({n, num_classes}, std::move(cls_targets)),
                                        cfg.focal_alpha, cfg.focal_gamma),
            norm * cfg.weights.cls);
        out.cls += cls_term.item();
        total = ops::add(total, cls_term);

        if (g == 0) continue;
        const Tensor matched = ops::gather_rows(sp.boxes, as.pred_of_target);
        const Tensor l1_term =
            ops::scalar_mul(ops::l1_sum(matched, target_boxes), norm * cfg.weights.l1);
        const Tensor iou_term =
            ops::scalar_mul(ops::giou_loss_sum(matched, target_boxes), norm * cfg.weights.iou);
        out.l1 += l1_term.item();
        out.iou += iou_term.item();
        total = ops::add(total, ops::add(l1_term, iou_term));

        if (!stage_has_mask) continue;
        Tensor dice_sum = Tensor::zeros({1});
        Tensor bce_sum = Tensor::zeros({1});
        const double pixels = static_cast<double>(fm.map.dim(1) * fm.map.dim(2));
        for (std::int64_t j = 0; j < g; ++j) {
            const std::int64_t i = as.pred_of_target[static_cast<std::size_t>(j)];
            const Tensor dyn_row = ops::reshape(ops::slice_rows(sp.dyn, i, 1), {sp.dyn.dim(1)});
            const Tensor center =
                ops::reshape(ops::slice_cols(ops::slice_rows(sp.boxes, i, 1), 0, 2), {2});
            const DynamicLayers dl =
                unpack_params(dyn_row, fm.map.dim(0), cfg.mask_heads, cfg.mask_points);
            const MaskOutput mo = predict_mask(fm, center, dl, cfg.pe_mode, cfg.pe_cfg);
            const Tensor& tm = target_masks_ds[static_cast<std::size_t>(j)];
            dice_sum = ops::add(dice_sum, dice_loss(mo.probs, tm));
            bce_sum = ops::add(bce_sum,
                               ops::scalar_mul(ops::bce_with_logits_sum(mo.logits, tm), 1.0 / pixels));
        }
        const Tensor dice_term = ops::scalar_mul(dice_sum, norm * cfg.weights.dice);
        const Tensor bce_term = ops::scalar_mul(bce_sum, norm * cfg.weights.bce);
        out.dice += dice_term.item();
        out.bce += bce_term.item();
        total = ops::add(total, ops::add(dice_term, bce_term));
    }
    out.total = total;
    return out;
}

}  // namespace iseg
