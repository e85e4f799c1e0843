#pragma once

#include <vector>

#include "iseg/kernels.hpp"
#include "iseg/tensor.hpp"

// Differentiable operations over Tensor. Every op validates shapes, computes
// in 64-bit, checks the result for non-finite values, and records a backward
// rule on the active tape when any input requires grad. There is no
// broadcasting beyond scalar-with-tensor; shape mixes are explicit reshapes.

namespace iseg::ops {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor scalar_mul(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// Shape manipulation. All are contiguous copies with pass-through gradients.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2d(const Tensor& a);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t len);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Rows may repeat; gradients accumulate into the source rows.
Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& rows);

// [c,h,w] <-> [h*w, c] between map form and token form (row-major pixels).
Tensor map_to_tokens(const Tensor& map);
Tensor tokens_to_map(const Tensor& tokens, std::int64_t h, std::int64_t w);

// a: [n,c], row: [c]; adds row to every row of a.
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);

// Reductions and normalization.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor softmax(const Tensor& a, std::int64_t axis);
// Normalizes the last axis; gamma/beta have that axis's length.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// a: [m,k], b: [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// x: [n,in], w: [out,in], b: [out] or undefined -> [n,out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x: [cin,h,w], k: [cout,cin,kh,kw], bias: [cout] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, std::int64_t stride,
              std::int64_t pad);

// map: [c,h,w], points: [p,2] (x,y) in pixel units -> [c,p]. Out-of-range
// corners contribute zero; differentiable in both map and points.
Tensor bilinear_sample(const Tensor& map, const Tensor& points);

// ref: [q,2] normalized to [0,1]^2, offsets: [q,m,l,k,2] in pixel units of
// level l -> locations [q,m,l,k,2] with loc = ref*extent - 0.5 + offset.
Tensor compose_sampling_locations(const Tensor& ref, const Tensor& offsets,
                                  const std::vector<kernels::LevelShape>& levels);

// value: [t,c] level-concatenated tokens, locs: [q,m,l,k,2] pixel coords,
// attn: [q,m,l,k] normalized weights -> [q,c]; head m owns channel block m.
Tensor ms_deform_sample(const Tensor& value, const std::vector<kernels::LevelShape>& levels,
                        const Tensor& locs, const Tensor& attn);

// Loss kernels; targets are constants (no gradient flows into them).
Tensor l1_sum(const Tensor& pred, const Tensor& target);
Tensor bce_with_logits_sum(const Tensor& logits, const Tensor& targets);
Tensor sigmoid_focal_loss_sum(const Tensor& logits, const Tensor& targets, double alpha,
                              double gamma);
// pred/target: [n,4] center-form boxes; returns sum of (1 - GIoU) per row.
Tensor giou_loss_sum(const Tensor& pred, const Tensor& target);

}  // namespace iseg::ops
