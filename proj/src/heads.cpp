#include "iseg/heads.hpp"

#include <cmath>

#include "iseg/init.hpp"
#include "iseg/ops.hpp"

namespace iseg {

HeadWeights HeadWeights::make(Rng& rng, std::int64_t d, std::int64_t num_classes,
                              std::int64_t dyn_params) {
    HeadWeights w;
    w.cls_w = linear_init(rng, num_classes, d);
    const double prior = -std::log((1.0 - 0.01) / 0.01);
    w.cls_b = Tensor::full({num_classes}, prior);
    w.cls_b.set_requires_grad(true);

    w.box_w1 = linear_init(rng, d, d);
    w.box_b1 = zeros_param({d});
    w.box_w2 = linear_init(rng, d, d);
    w.box_b2 = zeros_param({d});
    w.box_w3 = zeros_param({4, d});
    w.box_b3 = zeros_param({4});

    w.mask_w1 = linear_init(rng, d, d);
    w.mask_b1 = zeros_param({d});
    w.mask_w2 = linear_init(rng, d, d);
    w.mask_b2 = zeros_param({d});
    w.mask_w3 = normal_param(rng, {dyn_params, d}, 0.01);
    w.mask_b3 = zeros_param({dyn_params});
    return w;
}

void HeadWeights::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".cls.w", cls_w);
    out.emplace_back(prefix + ".cls.b", cls_b);
    const Tensor* box[] = {&box_w1, &box_b1, &box_w2, &box_b2, &box_w3, &box_b3};
    const Tensor* mask[] = {&mask_w1, &mask_b1, &mask_w2, &mask_b2, &mask_w3, &mask_b3};
    for (int i = 0; i < 3; ++i) {
        const std::string n = std::to_string(i + 1);
        out.emplace_back(prefix + ".box.w" + n, *box[2 * i]);
        out.emplace_back(prefix + ".box.b" + n, *box[2 * i + 1]);
        out.emplace_back(prefix + ".mask.w" + n, *mask[2 * i]);
        out.emplace_back(prefix + ".mask.b" + n, *mask[2 * i + 1]);
    }
}

namespace {

Tensor mlp3(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
            const Tensor& b2, const Tensor& w3, const Tensor& b3) {
    Tensor h = ops::relu(ops::linear(x, w1, b1));
    h = ops::relu(ops::linear(h, w2, b2));
    return ops::linear(h, w3, b3);
}

}  // namespace

Tensor class_head(const Tensor& queries, const HeadWeights& w) {
    return ops::linear(queries, w.cls_w, w.cls_b);
}

Tensor box_head(const Tensor& queries, const HeadWeights& w) {
    return ops::sigmoid(mlp3(queries, w.box_w1, w.box_b1, w.box_w2, w.box_b2, w.box_w3, w.box_b3));
}

Tensor mask_branch(const Tensor& queries, const HeadWeights& w) {
    return mlp3(queries, w.mask_w1, w.mask_b1, w.mask_w2, w.mask_b2, w.mask_w3, w.mask_b3);
}

QueryPrediction extract_prediction(const Tensor& cls, const Tensor& boxes, const Tensor& dyn,
                                   std::int64_t i) {
    QueryPrediction p;
    p.class_logits = ops::reshape(ops::slice_rows(cls, i, 1), {cls.dim(1)});
    p.box = {boxes.at({i, 0}), boxes.at({i, 1}), boxes.at({i, 2}), boxes.at({i, 3})};
    p.dyn_params = ops::reshape(ops::slice_rows(dyn, i, 1), {dyn.dim(1)});
    return p;
}

}  // namespace iseg
